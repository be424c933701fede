"""Small vectorized image helpers shared by the detection and flow stages."""

from __future__ import annotations

import numpy as np

# BT.601 luma weights, applied to RGB in [0, 1].
_LUMA = np.array([0.299, 0.587, 0.114])


def to_unit_float(frame: np.ndarray) -> np.ndarray:
    """Convert an 8-bit image to float64 in [0, 1]."""
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    return frame.astype(np.float64)


def to_gray(frame: np.ndarray) -> np.ndarray:
    """BT.601 luma of an H x W x 3 RGB frame, float64 in [0, 1]."""
    return to_unit_float(frame) @ _LUMA


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """RGB -> HSV with every channel in [0, 1].

    Hue is the usual hexagonal hue divided by 6 (so 1.0 wraps to 0.0),
    saturation is (max-min)/max with 0 for black, value is max(R, G, B).
    Input may be uint8 or float in [0, 1]; output is float64 H x W x 3.
    """
    x = to_unit_float(rgb)
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    cmax = x.max(axis=-1)
    cmin = x.min(axis=-1)
    delta = cmax - cmin

    with np.errstate(divide="ignore", invalid="ignore"):
        hr = np.mod((g - b) / delta, 6.0)
        hg = (b - r) / delta + 2.0
        hb = (r - g) / delta + 4.0
        sat = np.where(cmax > 0.0, delta / cmax, 0.0)

    hue = np.select([delta == 0.0, cmax == r, cmax == g], [0.0, hr, hg], default=hb)
    hue = hue / 6.0
    return np.stack([hue, sat, cmax], axis=-1)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-normalized (n_out, n_in) matrix averaging input cells over output cells.

    Each output cell covers the input interval [i*n_in/n_out, (i+1)*n_in/n_out);
    weights are the exact fractional overlaps, so the resize is a true box
    (area) average for any scale factor.
    """
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return w / scale


def resize_area(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-average resize of a 2-D (or 2-D + channels) image."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output dimensions must be positive")
    x = img.astype(np.float64)
    wh = _area_weights(x.shape[0], out_h)
    ww = _area_weights(x.shape[1], out_w)
    if x.ndim == 2:
        return wh @ x @ ww.T
    return np.einsum("oi,ijc,pj->opc", wh, x, ww)


def short_side_dims(h: int, w: int, target_short: int) -> tuple[int, int]:
    """Dimensions after scaling so the shortest side equals ``target_short``.

    Aspect ratio is preserved; the long side is rounded to the nearest pixel.
    """
    if h <= w:
        return target_short, max(1, round(w * target_short / h))
    return max(1, round(h * target_short / w)), target_short


def downscale_to_short_side(img: np.ndarray, target_short: int) -> np.ndarray:
    """Area-average downscale so the shortest side equals ``target_short``.

    Images already at or below the target are returned unchanged.
    """
    h, w = img.shape[:2]
    if min(h, w) <= target_short:
        return img
    oh, ow = short_side_dims(h, w, target_short)
    return resize_area(img, oh, ow)
