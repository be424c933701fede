"""Deterministic synthetic Y4M corpus for tests and demos.

Each video is a sequence of scenes made of smoothly varying periodic noise
textures that translate at a per-scene speed; scene changes are hard cuts
or linear fades, and some scenes carry a white caption bar that the stub
text detector recovers. Everything derives from fixed seeds, so two runs
produce byte-identical files.

Run ``python -m vidcur.synth <dir>`` (or ``vidcur synth-corpus <dir>``) to
materialize the demo corpus plus its keyframe sidecars and a seeded
aesthetic-head weights file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .scoring import AestheticHead, write_aesthetic_head

DEFAULT_FPS = 12.0
DEFAULT_W = 96
DEFAULT_H = 64
KEYFRAME_INTERVAL_S = 2.0
AESTHETIC_HEAD_FILE = "aesthetic_head.f32"


@dataclass(frozen=True)
class Scene:
    duration_s: float
    seed: int
    speed: tuple[float, float] = (0.0, 0.0)  # (dx, dy) pixels per frame
    text_bar: float = 0.0  # fraction of frame height covered by a white bar
    fade_in_s: float = 0.0  # linear fade from the previous scene
    tint: tuple[float, float, float] = (1.0, 1.0, 1.0)
    # Brightness range of the texture; consecutive scenes in the corpus
    # alternate dark/bright so scene changes register as real cuts.
    brightness: tuple[float, float] = (0.3, 0.7)


def _texture(seed: int, h: int, w: int, brightness: tuple[float, float]) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = ndimage.gaussian_filter(rng.random((h, w)), 3.0, mode="wrap")
    lo, hi = base.min(), base.max()
    b_lo, b_hi = brightness
    return b_lo + (b_hi - b_lo) * (base - lo) / (hi - lo)


def _scene_frame(tex: np.ndarray, scene: Scene, frame_no: int) -> np.ndarray:
    dx = int(round(scene.speed[0] * frame_no))
    dy = int(round(scene.speed[1] * frame_no))
    gray = np.roll(tex, shift=(dy, dx), axis=(0, 1))
    rgb = np.stack([gray * t for t in scene.tint], axis=-1)
    rgb = np.clip(rgb * 255.0, 0.0, 255.0)
    if scene.text_bar > 0.0:
        h = tex.shape[0]
        bar = max(1, int(round(scene.text_bar * h)))
        y0 = int(h * 0.8)
        rgb[y0 : y0 + bar, :, :] = 255.0
    return np.floor(rgb + 0.5).astype(np.uint8)


def _rgb_to_420(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of the reader's BT.601 full-range conversion, 2x2 mean chroma."""
    r = rgb[..., 0].astype(np.float64)
    g = rgb[..., 1].astype(np.float64)
    b = rgb[..., 2].astype(np.float64)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = (b - y) / 1.772 + 128.0
    cr = (r - y) / 1.402 + 128.0
    to8 = lambda p: np.clip(np.floor(p + 0.5), 0, 255).astype(np.uint8)
    sub = lambda p: p.reshape(p.shape[0] // 2, 2, p.shape[1] // 2, 2).mean(axis=(1, 3))
    return to8(y), to8(sub(cb)), to8(sub(cr))


def render_video(
    path: str | Path,
    scenes: list[Scene],
    fps: float = DEFAULT_FPS,
    width: int = DEFAULT_W,
    height: int = DEFAULT_H,
    keyframe_interval_s: float = KEYFRAME_INTERVAL_S,
) -> None:
    """Write the scenes as one Y4M C420 file plus its keyframe sidecar."""
    path = Path(path)
    fps_num = round(fps)
    with path.open("wb") as fh:
        fh.write(f"YUV4MPEG2 W{width} H{height} F{fps_num}:1 Ip A1:1 C420jpeg\n".encode())
        prev_last: np.ndarray | None = None
        for scene in scenes:
            tex = _texture(scene.seed, height, width, scene.brightness)
            n_frames = round(scene.duration_s * fps)
            fade_frames = round(scene.fade_in_s * fps)
            for i in range(n_frames):
                frame = _scene_frame(tex, scene, i)
                if prev_last is not None and i < fade_frames:
                    alpha = (i + 1) / (fade_frames + 1)
                    frame = np.floor(
                        prev_last.astype(np.float64) * (1 - alpha)
                        + frame.astype(np.float64) * alpha
                        + 0.5
                    ).astype(np.uint8)
                y, cb, cr = _rgb_to_420(frame)
                fh.write(b"FRAME\n")
                fh.write(y.tobytes())
                fh.write(cb.tobytes())
                fh.write(cr.tobytes())
            prev_last = _scene_frame(tex, scene, n_frames - 1)
    total_s = sum(s.duration_s for s in scenes)
    keyframes = []
    t = 0.0
    while t < total_s:
        keyframes.append(t)
        t += keyframe_interval_s
    sidecar = Path(str(path) + ".kf.txt")
    sidecar.write_text("".join(f"{k:g}\n" for k in keyframes), encoding="utf-8")


# One entry per demo video: mixes static scenes, slow/fast motion, text
# bars above and below the 7% cutoff, hard cuts, and one pure fade.
DARK = (0.06, 0.38)
BRIGHT = (0.62, 0.94)
MID = (0.3, 0.7)

CORPUS: dict[str, list[Scene]] = {
    "v000": [
        Scene(4.0, seed=10, speed=(1.0, 0.0), brightness=DARK),
        Scene(5.0, seed=11, speed=(0.5, 0.5), brightness=BRIGHT),
    ],
    "v001": [
        Scene(3.0, seed=20, speed=(0.0, 0.0), brightness=BRIGHT),
        Scene(3.0, seed=21, speed=(1.5, 0.0), text_bar=0.12, brightness=DARK),
        Scene(3.0, seed=22, speed=(0.0, 1.0), brightness=BRIGHT),
    ],
    # The scene change is a pure 0.7 s fade aligned to the low-rate grid:
    # invisible per-frame at native fps, caught by the 2 fps level.
    "v002": [
        Scene(4.5, seed=30, speed=(1.0, 0.5), brightness=(0.02, 0.15)),
        Scene(5.5, seed=31, speed=(0.5, 0.0), fade_in_s=0.7, brightness=(0.85, 0.98)),
    ],
    "v003": [
        Scene(8.0, seed=40, speed=(0.0, 0.0), text_bar=0.05),
    ],
    "v004": [
        Scene(4.0, seed=50, speed=(2.0, 0.0), brightness=BRIGHT),
        Scene(4.0, seed=51, speed=(0.0, 0.0), text_bar=0.15, tint=(1.0, 0.9, 0.8), brightness=DARK),
    ],
    "v005": [
        Scene(3.0, seed=60, speed=(0.5, 1.0), tint=(0.9, 1.0, 0.9), brightness=DARK),
        Scene(4.0, seed=61, speed=(0.0, 0.0), brightness=BRIGHT),
        Scene(3.0, seed=62, speed=(1.0, 1.0), brightness=DARK),
    ],
    "v006": [
        Scene(9.0, seed=70, speed=(1.5, 0.5), brightness=MID),
    ],
    "v007": [
        Scene(5.0, seed=80, speed=(0.0, 0.0), brightness=DARK),
        Scene(5.0, seed=81, speed=(1.0, 0.0), text_bar=0.1, tint=(0.85, 0.9, 1.0), brightness=BRIGHT),
    ],
}


def make_corpus(out_dir: str | Path, head_seed: int = 7, head_dim: int = 35) -> list[Path]:
    """Render the demo corpus into out_dir; returns the video paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, scenes in CORPUS.items():
        path = out_dir / f"{name}.y4m"
        render_video(path, scenes)
        paths.append(path)
    rng = np.random.default_rng(head_seed)
    head = AestheticHead(weights=rng.standard_normal(head_dim) * 0.5, bias=5.0)
    write_aesthetic_head(head, out_dir / AESTHETIC_HEAD_FILE)
    return paths


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="generate the synthetic demo corpus")
    parser.add_argument("out_dir")
    args = parser.parse_args(argv)
    paths = make_corpus(args.out_dir)
    print(f"wrote {len(paths)} videos to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
