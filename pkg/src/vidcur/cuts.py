"""Shot-boundary detection and keyframe-aware clip planning.

A single content detector thresholds the mean absolute HSV difference
between consecutive frames. Fast cuts produce a large one-frame delta at any
sampling rate, but a slow fade spreads its change over many frames, so the
per-frame delta stays under any usable threshold. Running the same detector
at reduced sampling rates concentrates a fade into few steps: a cascade of
three rates (native, mid, low) with per-level thresholds catches both.

Detected cuts are converted into clip spans whose start snaps forward to the
next keyframe, so seek-based extraction can never cross backward over the
cut into the previous shot.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .imageops import downscale_to_short_side, rgb_to_hsv
from .ingest import Frame, FrameSource, tick_indices

DETECTOR_LEVELS = ("native", "mid", "low")

# Per-level (fps, threshold); None fps means the source's native rate.
# Thresholds rise with coarser sampling because per-step deltas grow.
DEFAULT_CASCADE = ((None, 0.11), (8.0, 0.14), (2.0, 0.15))
DEFAULT_MIN_SCENE_S = 1.0
DEFAULT_MERGE_WINDOW_S = 0.5
DEFAULT_DETECT_SHORT_SIDE = 128


@dataclass(frozen=True)
class CutList:
    video_id: str
    cuts_s: tuple[float, ...]
    levels: tuple[str, ...]  # detector level per cut

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.cuts_s, self.cuts_s[1:])):
            raise ValueError("cuts must be strictly increasing")
        if len(self.levels) != len(self.cuts_s):
            raise ValueError("one level tag per cut required")


@dataclass(frozen=True)
class ClipPlan:
    spans: tuple[tuple[float, float], ...]


def frame_delta(a: Frame | np.ndarray, b: Frame | np.ndarray) -> float:
    """Mean absolute HSV difference between two frames, in [0, 1].

    All three channels are normalized to [0, 1] and weighted equally; the
    result is the mean over pixels of the mean per-channel absolute
    difference. Symmetric, zero on identical frames.
    """
    pa = a.pixels if isinstance(a, Frame) else a
    pb = b.pixels if isinstance(b, Frame) else b
    if pa.shape != pb.shape:
        raise ValueError(f"frame dimensions differ: {pa.shape} vs {pb.shape}")
    ha = rgb_to_hsv(pa)
    hb = rgb_to_hsv(pb)
    return float(np.abs(ha - hb).mean())


def detect_single(
    frames: Iterable[Frame],
    threshold: float,
    min_scene_s: float = DEFAULT_MIN_SCENE_S,
    detect_short_side: int | None = DEFAULT_DETECT_SHORT_SIDE,
) -> list[float]:
    """Cut timestamps from one stream of (already sampled) frames.

    A cut is emitted at frame b when frame_delta(prev, b) exceeds the
    threshold and the previous cut lies at least min_scene_s earlier.
    Frames are downscaled to ``detect_short_side`` (area average) before
    comparison; pass None to compare at full resolution.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    cuts: list[float] = []
    prev_hsv: np.ndarray | None = None
    for frame in frames:
        px = frame.pixels
        if detect_short_side is not None:
            px = downscale_to_short_side(px, detect_short_side)
        hsv = rgb_to_hsv(px)
        if prev_hsv is not None:
            delta = float(np.abs(hsv - prev_hsv).mean())
            if delta > threshold and (not cuts or frame.t_s - cuts[-1] >= min_scene_s):
                cuts.append(frame.t_s)
        prev_hsv = hsv
    return cuts


def detect_cascade(
    source: FrameSource,
    video_id: str,
    levels: Sequence[tuple[float | None, float]] = DEFAULT_CASCADE,
    min_scene_s: float = DEFAULT_MIN_SCENE_S,
    merge_window_s: float = DEFAULT_MERGE_WINDOW_S,
    detect_short_side: int | None = DEFAULT_DETECT_SHORT_SIDE,
) -> CutList:
    """Run the detector at all levels over one pass of the source.

    Levels must be ordered native-first with strictly descending fps. Cuts
    from lower-fps levels within merge_window_s of an already accepted cut
    are dropped, keeping the higher-fps (more precise) timestamp.
    """
    if len(levels) == 0:
        raise ValueError("at least one detector level required")
    fps_values = [source.fps if f is None else float(f) for f, _ in levels]
    if fps_values[0] != source.fps:
        raise ValueError("first cascade level must run at native fps")
    for f in fps_values:
        if f > source.fps:
            raise ValueError(f"level fps {f} exceeds native fps {source.fps}")
    if any(b >= a for a, b in zip(fps_values, fps_values[1:])):
        raise ValueError("cascade levels must have strictly descending fps")

    frame_count = source.frame_count
    # Per-level sampling grids over the shared decode pass.
    grids = [tick_indices(source.fps, f, frame_count) for f in fps_values]
    wanted: dict[int, list[int]] = {}
    for li, grid in enumerate(grids):
        for idx in grid:
            wanted.setdefault(idx, []).append(li)

    thresholds = [t for _, t in levels]
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValueError(f"threshold must be in (0, 1), got {t}")
    prev_hsv: list[np.ndarray | None] = [None] * len(levels)
    level_cuts: list[list[float]] = [[] for _ in levels]

    source.seek(0.0)
    for frame in source:
        hit = wanted.get(frame.index)
        if not hit:
            continue
        px = frame.pixels
        if detect_short_side is not None:
            px = downscale_to_short_side(px, detect_short_side)
        hsv = rgb_to_hsv(px)
        for li in hit:
            prev = prev_hsv[li]
            if prev is not None:
                delta = float(np.abs(hsv - prev).mean())
                cuts = level_cuts[li]
                if delta > thresholds[li] and (
                    not cuts or frame.t_s - cuts[-1] >= min_scene_s
                ):
                    cuts.append(frame.t_s)
            prev_hsv[li] = hsv

    merged: list[tuple[float, str]] = []
    for li, cuts in enumerate(level_cuts):
        name = DETECTOR_LEVELS[li] if li < len(DETECTOR_LEVELS) else f"level{li}"
        for t in cuts:
            if all(abs(t - t0) > merge_window_s for t0, _ in merged):
                merged.append((t, name))
    merged.sort()
    return CutList(
        video_id=video_id,
        cuts_s=tuple(t for t, _ in merged),
        levels=tuple(name for _, name in merged),
    )


def plan_clips(
    cuts: CutList | Sequence[float],
    keyframes_s: Sequence[float],
    duration_s: float,
    min_clip_s: float = 1.0,
) -> ClipPlan:
    """Clip spans between cuts, starts snapped forward to keyframes.

    Each span runs from the smallest keyframe at or after the previous cut
    (the stream start counts as a cut at 0) up to the next cut. Spans
    shorter than min_clip_s, and spans whose snap lands past the next cut,
    are dropped, so no surviving span contains a cut in its interior.
    """
    cut_times = list(cuts.cuts_s if isinstance(cuts, CutList) else cuts)
    if sorted(cut_times) != cut_times:
        raise ValueError("cuts must be sorted")
    if not keyframes_s or keyframes_s[0] != 0.0:
        raise ValueError("keyframes must be sorted and start at 0")
    bounds = [0.0] + cut_times + [duration_s]
    spans: list[tuple[float, float]] = []
    for start_cut, end_cut in zip(bounds, bounds[1:]):
        i = bisect.bisect_left(keyframes_s, start_cut)
        if i >= len(keyframes_s):
            continue
        start = keyframes_s[i]
        if end_cut - start >= min_clip_s and start < end_cut:
            spans.append((start, end_cut))
    return ClipPlan(spans=tuple(spans))


def iter_cut_rows(cuts: CutList) -> Iterator[dict]:
    """Line-delimited export rows: (video_id, t_s, level)."""
    for t, level in zip(cuts.cuts_s, cuts.levels):
        yield {"video_id": cuts.video_id, "t_s": t, "level": level}
