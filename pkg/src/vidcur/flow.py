"""Dense optical flow via quadratic polynomial expansion, plus motion scores.

Each grayscale neighborhood is approximated by a quadratic polynomial
f(x) ~ x'Ax + b'x + c fit under a Gaussian applicability window. For two
images with expansions (A1, b1) and (A2, b2), a displacement d satisfies
A d = -(b2 - b1)/2 with A = (A1 + A2)/2; pointwise solutions are stabilized
by accumulating the normal equations G = A'A and h = A'db over a Gaussian
aggregation window and solving the 2x2 system per pixel. A coarse-to-fine
pyramid with a few refinement iterations per level (warping the second
image's expansion by the current flow estimate) handles displacements
larger than the window.

Flow is computed on frames downscaled to a configurable shortest side
(default 128 px); maps are stored downscaled to a 16 px shortest side by
block averaging, with displacement values kept in compute-grid pixels.
The motion score of a clip is the mean magnitude over all stored maps and
pixels divided by the compute-grid shortest side, making it resolution
independent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .imageops import resize_area, short_side_dims, to_gray
from .ingest import Frame

COMPUTE_SHORT_SIDE = 128
STORE_SHORT_SIDE = 16
FLOW_SAMPLE_FPS = 2.0
# Final scores below this are clamped to exactly zero (denormal guard).
MOTION_EPS = 1e-6

_FLOW_MAGIC = b"VFLW"
_HEADER = struct.Struct("<4sIII")  # magic, width, height, interval_ms


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class FlowParams:
    levels: int = 3
    scale: float = 0.5
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1
    win_sigma: float = 1.5


DEFAULT_PARAMS = FlowParams()


@dataclass(frozen=True)
class FlowMap:
    """Per-pixel displacement (pixels per sampled interval) for one frame pair."""

    u: np.ndarray  # horizontal component, float32
    v: np.ndarray  # vertical component, float32
    interval_s: float

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise FlowError("u and v must be matching 2-D grids")
        if self.u.size == 0:
            raise FlowError("flow grid must be non-empty")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise FlowError("flow components must be finite")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))


@dataclass(frozen=True)
class StoredFlow:
    """A FlowMap downscaled for storage, tagged with its clip provenance."""

    flow: FlowMap
    clip_id: str
    pair_index: int
    undersized: bool = False  # source grid was already below the target side


class FlowBackend(Protocol):
    """Dense-flow estimator contract; higher-fidelity backends drop in here.

    Takes two grayscale float images in [0, 1] and the time between them,
    returns the displacement field from the first to the second.
    """

    def __call__(self, a: np.ndarray, b: np.ndarray, interval_s: float) -> FlowMap: ...


# --- polynomial expansion ---------------------------------------------------


def _gaussian_1d(n: int, sigma: float) -> np.ndarray:
    k = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-(k**2) / (2.0 * sigma**2))
    return g / g.sum()


def _inv_gram(n: int, sigma: float) -> tuple[float, float, float, float]:
    """Inverse-Gram entries mapping image moments to polynomial coefficients.

    Basis (1, x, y, x^2, y^2, xy) under the separable applicability
    g(x)g(y); by symmetry only four distinct inverse entries are needed and
    the x^2/y^2 cross entry is exactly zero.
    """
    g = _gaussian_1d(n, sigma)
    k = np.arange(-n, n + 1, dtype=np.float64)
    m2 = float((g * k**2).sum())
    m4 = float((g * k**4).sum())
    gram = np.zeros((6, 6))
    gram[0, 0] = 1.0
    gram[1, 1] = gram[2, 2] = m2
    gram[0, 3] = gram[3, 0] = gram[0, 4] = gram[4, 0] = m2
    gram[3, 3] = gram[4, 4] = m4
    gram[3, 4] = gram[4, 3] = m2**2
    gram[5, 5] = m2**2
    inv = np.linalg.inv(gram)
    return float(inv[1, 1]), float(inv[0, 3]), float(inv[3, 3]), float(inv[5, 5])


def _poly_expansion(img: np.ndarray, n: int, sigma: float) -> np.ndarray:
    """Quadratic expansion coefficients per pixel.

    Returns an H x W x 5 array with channels (b_y, b_x, a_yy, a_xx, a_xy);
    a_xy is the full xy coefficient (the off-diagonal of A is half of it).
    """
    ig11, ig03, ig33, ig55 = _inv_gram(n, sigma)
    g = _gaussian_1d(n, sigma)
    k = np.arange(-n, n + 1, dtype=np.float64)
    xg = k * g
    xxg = k**2 * g

    corr = lambda a, w, axis: ndimage.correlate1d(a, w, axis=axis, mode="nearest")
    t0 = corr(img, g, 0)  # plain vertical smooth
    t1 = corr(img, xg, 0)  # vertical first moment
    t2 = corr(img, xxg, 0)  # vertical second moment

    b1 = corr(t0, g, 1)
    b2 = corr(t0, xg, 1)  # x moment
    b3 = corr(t1, g, 1)  # y moment
    b4 = corr(t0, xxg, 1)  # x^2 moment
    b5 = corr(t2, g, 1)  # y^2 moment
    b6 = corr(t1, xg, 1)  # xy moment

    out = np.empty(img.shape + (5,), dtype=np.float64)
    out[..., 0] = b3 * ig11
    out[..., 1] = b2 * ig11
    out[..., 2] = b1 * ig03 + b5 * ig33
    out[..., 3] = b1 * ig03 + b4 * ig33
    out[..., 4] = b6 * ig55
    return out


# --- displacement estimation ------------------------------------------------

# Confidence rolloff for constraints within 5 px of the border.
_BORDER_SCALE = np.array([0.14, 0.14, 0.4472, 0.4472, 0.4472, 1.0])


def _border_weights(h: int, w: int) -> np.ndarray:
    yy = np.minimum(np.arange(h), np.arange(h)[::-1])
    xx = np.minimum(np.arange(w), np.arange(w)[::-1])
    dist = np.minimum.outer(yy, xx)
    return _BORDER_SCALE[np.minimum(dist, 5)]


def _normal_equations(r0: np.ndarray, r1: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Per-pixel normal equations (G11, G12, G22, h1, h2) for A d = db.

    The second image's expansion is sampled at x + flow (bilinear); pixels
    displaced outside the image fall back to the first image's coefficients
    with zero brightness constraint.
    """
    h, w = r0.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    fy = gy + flow[..., 1]
    fx = gx + flow[..., 0]
    inside = (fx >= 0.0) & (fx <= w - 1.0) & (fy >= 0.0) & (fy <= h - 1.0)
    coords = [np.clip(fy, 0.0, h - 1.0), np.clip(fx, 0.0, w - 1.0)]
    sampled = np.stack(
        [ndimage.map_coordinates(r1[..., c], coords, order=1, mode="nearest") for c in range(5)],
        axis=-1,
    )

    s_by = np.where(inside, sampled[..., 0], 0.0)
    s_bx = np.where(inside, sampled[..., 1], 0.0)
    ayy = np.where(inside, 0.5 * (r0[..., 2] + sampled[..., 2]), r0[..., 2])
    axx = np.where(inside, 0.5 * (r0[..., 3] + sampled[..., 3]), r0[..., 3])
    axy = np.where(inside, 0.25 * (r0[..., 4] + sampled[..., 4]), 0.5 * r0[..., 4])

    db_y = 0.5 * (r0[..., 0] - s_by) + ayy * flow[..., 1] + axy * flow[..., 0]
    db_x = 0.5 * (r0[..., 1] - s_bx) + axy * flow[..., 1] + axx * flow[..., 0]

    scale = _border_weights(h, w)
    ayy, axx, axy = ayy * scale, axx * scale, axy * scale
    db_y, db_x = db_y * scale, db_x * scale

    m = np.empty((h, w, 5))
    m[..., 0] = ayy**2 + axy**2
    m[..., 1] = (ayy + axx) * axy
    m[..., 2] = axx**2 + axy**2
    m[..., 3] = ayy * db_y + axy * db_x
    m[..., 4] = axy * db_y + axx * db_x
    return m


def _solve_flow(m: np.ndarray, win_sigma: float) -> np.ndarray:
    blurred = np.stack(
        [ndimage.gaussian_filter(m[..., c], sigma=win_sigma, mode="nearest") for c in range(5)],
        axis=-1,
    )
    g11, g12, g22, h1, h2 = (blurred[..., c] for c in range(5))
    # Relative Tikhonov term: negligible on textured pixels, pulls the
    # solution toward zero where the normal matrix is near-singular.
    lam = 1e-6 * float(np.mean(g11 + g22))
    det = (g11 + lam) * (g22 + lam) - g12**2
    safe = det > 0.0
    inv_det = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
    flow = np.empty(m.shape[:2] + (2,))
    flow[..., 0] = ((g11 + lam) * h2 - g12 * h1) * inv_det
    flow[..., 1] = ((g22 + lam) * h1 - g12 * h2) * inv_det
    return flow


def _resize_bilinear(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w = img.shape
    ys = (np.arange(oh) + 0.5) * h / oh - 0.5
    xs = (np.arange(ow) + 0.5) * w / ow - 0.5
    coords = np.meshgrid(np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1), indexing="ij")
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def farneback_flow(
    a: np.ndarray, b: np.ndarray, params: FlowParams = DEFAULT_PARAMS, interval_s: float = 1.0
) -> FlowMap:
    """Dense flow between two grayscale float images in [0, 1].

    Returns per-pixel displacement from ``a`` to ``b``: a feature at x in
    ``a`` appears at x + flow(x) in ``b``.
    """
    if a.shape != b.shape or a.ndim != 2:
        raise FlowError(f"need matching 2-D images, got {a.shape} vs {b.shape}")
    support = 2 * params.poly_n + 1
    if min(a.shape) < support:
        raise FlowError(f"image {a.shape} smaller than expansion support {support}")
    if not 0.0 < params.scale < 1.0:
        raise FlowError("pyramid scale must be in (0, 1)")

    h, w = a.shape
    sizes = []
    for lvl in range(params.levels):
        f = params.scale**lvl
        sh, sw = max(1, round(h * f)), max(1, round(w * f))
        if min(sh, sw) < support:
            break
        sizes.append((sh, sw))
    if not sizes:
        sizes = [(h, w)]

    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    flow: np.ndarray | None = None
    for sh, sw in reversed(sizes):
        la = resize_area(a64, sh, sw) if (sh, sw) != (h, w) else a64
        lb = resize_area(b64, sh, sw) if (sh, sw) != (h, w) else b64
        r0 = _poly_expansion(la, params.poly_n, params.poly_sigma)
        r1 = _poly_expansion(lb, params.poly_n, params.poly_sigma)
        if flow is None:
            flow = np.zeros((sh, sw, 2))
        else:
            ph, pw = flow.shape[:2]
            flow = np.stack(
                [
                    _resize_bilinear(flow[..., 0], sh, sw) * (sw / pw),
                    _resize_bilinear(flow[..., 1], sh, sw) * (sh / ph),
                ],
                axis=-1,
            )
        for _ in range(params.iterations):
            m = _normal_equations(r0, r1, flow)
            flow = _solve_flow(m, params.win_sigma)
    return FlowMap(
        u=flow[..., 0].astype(np.float32),
        v=flow[..., 1].astype(np.float32),
        interval_s=interval_s,
    )


# --- storage and scoring ----------------------------------------------------


def downscale_flow(
    fm: FlowMap, clip_id: str, pair_index: int, target_short: int = STORE_SHORT_SIDE
) -> StoredFlow:
    """Block-average a flow map so its shortest side equals ``target_short``.

    Displacement values are not rescaled: they stay in compute-grid pixels.
    Maps already below the target are stored as-is and flagged undersized.
    """
    h, w = fm.u.shape
    if min(h, w) < target_short:
        return StoredFlow(flow=fm, clip_id=clip_id, pair_index=pair_index, undersized=True)
    if min(h, w) == target_short:
        return StoredFlow(flow=fm, clip_id=clip_id, pair_index=pair_index)
    oh, ow = short_side_dims(h, w, target_short)
    small = FlowMap(
        u=resize_area(fm.u, oh, ow).astype(np.float32),
        v=resize_area(fm.v, oh, ow).astype(np.float32),
        interval_s=fm.interval_s,
    )
    return StoredFlow(flow=small, clip_id=clip_id, pair_index=pair_index)


def motion_score(flows: Sequence[StoredFlow | FlowMap], compute_short_side: int) -> float:
    """Mean flow magnitude over all maps and pixels, per unit of short side."""
    if not flows:
        raise FlowError("motion score needs at least one flow map")
    if compute_short_side <= 0:
        raise FlowError("compute_short_side must be positive")
    total = 0.0
    count = 0
    for f in flows:
        fm = f.flow if isinstance(f, StoredFlow) else f
        mag = fm.magnitude()
        total += float(mag.sum())
        count += mag.size
    score = total / count / compute_short_side
    return 0.0 if score < MOTION_EPS else score


def frames_to_flows(
    frames: Sequence[Frame],
    clip_id: str,
    params: FlowParams = DEFAULT_PARAMS,
    compute_short_side: int = COMPUTE_SHORT_SIDE,
    store_short_side: int = STORE_SHORT_SIDE,
    backend: FlowBackend | None = None,
) -> list[StoredFlow]:
    """Flow maps for consecutive pairs of (time-sampled) clip frames.

    Frames are converted to grayscale and downscaled to the compute
    resolution once; each consecutive pair yields one stored map. A custom
    backend replaces the built-in estimator when given.
    """
    if backend is None:
        backend = lambda a, b, interval_s: farneback_flow(a, b, params, interval_s)
    grays = []
    for fr in frames:
        g = to_gray(fr.pixels)
        if min(g.shape) > compute_short_side:
            oh, ow = short_side_dims(g.shape[0], g.shape[1], compute_short_side)
            g = resize_area(g, oh, ow)
        grays.append((fr.t_s, g))
    out = []
    for i in range(len(grays) - 1):
        (t0, g0), (t1, g1) = grays[i], grays[i + 1]
        fm = backend(g0, g1, t1 - t0)
        out.append(downscale_flow(fm, clip_id=clip_id, pair_index=i, target_short=store_short_side))
    return out


def write_flow_file(path: str | Path, flows: Sequence[StoredFlow]) -> None:
    """Write stored maps back to back: 16-byte header, u plane, v plane.

    Header fields are little-endian u32 (magic, width, height, interval in
    milliseconds); planes are little-endian float32, row-major. Pair order
    in the file is the pair index; the clip id is carried by the filename.
    """
    with Path(path).open("wb") as fh:
        for sf in flows:
            _write_one(fh, sf.flow)


def _write_one(fh: BinaryIO, fm: FlowMap) -> None:
    fh.write(_HEADER.pack(_FLOW_MAGIC, fm.width, fm.height, round(fm.interval_s * 1000)))
    fh.write(fm.u.astype("<f4").tobytes())
    fh.write(fm.v.astype("<f4").tobytes())


def read_flow_file(path: str | Path) -> list[FlowMap]:
    out = []
    with Path(path).open("rb") as fh:
        while True:
            head = fh.read(_HEADER.size)
            if not head:
                return out
            if len(head) < _HEADER.size:
                raise FlowError(f"{path}: truncated flow header")
            magic, w, h, interval_ms = _HEADER.unpack(head)
            if magic != _FLOW_MAGIC:
                raise FlowError(f"{path}: bad flow magic {magic!r}")
            plane = h * w * 4
            raw = fh.read(2 * plane)
            if len(raw) < 2 * plane:
                raise FlowError(f"{path}: truncated flow planes")
            u = np.frombuffer(raw, "<f4", h * w).reshape(h, w)
            v = np.frombuffer(raw, "<f4", h * w, offset=plane).reshape(h, w)
            out.append(FlowMap(u=u.copy(), v=v.copy(), interval_s=interval_ms / 1000.0))
