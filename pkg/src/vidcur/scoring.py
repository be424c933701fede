"""Per-frame annotation: embedding similarity, aesthetics, text-area ratio.

Neural scorers live behind small provider contracts (see providers module
for the HTTP client and the deterministic stubs used in tests); everything
here is pure math over their outputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .ingest import Frame, FrameSource
from .manifest import FRAME_POSITIONS, ClipRecord, FrameScore


class ScoringError(ValueError):
    pass


class EmbeddingProvider(Protocol):
    """Deterministic image/text embedder returning unit-norm vectors."""

    dim: int

    def embed_image(self, frame: Frame) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


class TextDetector(Protocol):
    def detect_text(self, frame: Frame) -> "list[TextBox]": ...


@dataclass(frozen=True)
class TextBox:
    """Axis-aligned box in pixels; clipped to frame bounds before area math."""

    x: float
    y: float
    w: float
    h: float

    def clipped(self, frame_w: float, frame_h: float) -> "TextBox | None":
        x0 = max(self.x, 0.0)
        y0 = max(self.y, 0.0)
        x1 = min(self.x + self.w, frame_w)
        y1 = min(self.y + self.h, frame_h)
        if x1 <= x0 or y1 <= y0:
            return None
        return TextBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0)


@dataclass(frozen=True)
class AestheticHead:
    """Linear head over image embeddings: score = w . e + b."""

    weights: np.ndarray
    bias: float

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|), clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ScoringError(f"vector dims differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ScoringError("cosine similarity undefined for zero vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def aesthetics(embedding: np.ndarray, head: AestheticHead) -> float:
    e = np.asarray(embedding, dtype=np.float64)
    if e.shape != head.weights.shape:
        raise ScoringError(f"embedding dim {e.shape} != head dim {head.weights.shape}")
    return float(head.weights @ e + head.bias)


def union_area(boxes: Sequence[TextBox]) -> float:
    """Exact area of the union of axis-aligned boxes (plane sweep over x).

    Overlaps are never double-counted, so the covered area of any box set
    stays bounded by the enclosing region.
    """
    boxes = [b for b in boxes if b.w > 0 and b.h > 0]
    if not boxes:
        return 0.0
    xs = sorted({b.x for b in boxes} | {b.x + b.w for b in boxes})
    total = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        if x1 <= x0:
            continue
        spans = sorted(
            (b.y, b.y + b.h) for b in boxes if b.x <= x0 and b.x + b.w >= x1
        )
        covered = 0.0
        cur_lo = cur_hi = None
        for lo, hi in spans:
            if cur_hi is None or lo > cur_hi:
                if cur_hi is not None:
                    covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        if cur_hi is not None:
            covered += cur_hi - cur_lo
        total += covered * (x1 - x0)
    return total


def text_area_ratio(boxes: Sequence[TextBox], frame_w: float, frame_h: float) -> float:
    """Fraction of the frame covered by the union of the clipped boxes."""
    if frame_w <= 0 or frame_h <= 0:
        raise ScoringError("frame dimensions must be positive")
    clipped = [c for b in boxes if (c := b.clipped(frame_w, frame_h)) is not None]
    return union_area(clipped) / (frame_w * frame_h)


# --- aesthetic head file ------------------------------------------------------
# Binary layout: u32 little-endian dim, dim float32 weights, one float32 bias.


def write_aesthetic_head(head: AestheticHead, path: str | Path) -> None:
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<I", head.dim))
        fh.write(head.weights.astype("<f4").tobytes())
        fh.write(struct.pack("<f", head.bias))


def load_aesthetic_head(path: str | Path) -> AestheticHead:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ScoringError(f"{path}: truncated head file")
    (dim,) = struct.unpack_from("<I", raw, 0)
    expected = 4 + 4 * dim + 4
    if len(raw) != expected:
        raise ScoringError(f"{path}: expected {expected} bytes for dim {dim}, got {len(raw)}")
    weights = np.frombuffer(raw, "<f4", dim, offset=4).astype(np.float64)
    (bias,) = struct.unpack_from("<f", raw, 4 + 4 * dim)
    return AestheticHead(weights=weights, bias=float(bias))


# --- clip scoring -------------------------------------------------------------


def clip_frame_times(start_s: float, end_s: float, fps: float) -> tuple[float, float, float]:
    """Seek targets for the first, middle, and last frames of a clip.

    The last-frame target backs off by one frame interval so a seek (first
    frame at or after the target) cannot land on or past the exclusive end.
    """
    eps = 1.0 / fps
    return start_s, (start_s + end_s) / 2.0, max(start_s, end_s - eps)


def score_clip_frames(
    clip: ClipRecord,
    source: FrameSource,
    provider: EmbeddingProvider,
    head: AestheticHead,
    ocr: TextDetector,
) -> ClipRecord:
    """Annotate the clip's first/middle/last frames.

    Each frame gets an aesthetics score and one cosine similarity per stored
    caption (in caption order); the clip's text_area_ratio is the maximum
    over the three frames. Provider or detector failures flag the clip
    ``score_failed`` instead of aborting the run.
    """
    try:
        text_vecs = [provider.embed_text(c.text) for c in clip.captions]
        scores = []
        max_ratio = 0.0
        for position, t in zip(FRAME_POSITIONS, clip_frame_times(clip.start_s, clip.end_s, source.fps)):
            source.seek(t)
            frame = source.next()
            if frame is None:
                raise ScoringError(f"{clip.clip_id}: no frame at t={t:.3f}")
            emb = provider.embed_image(frame)
            sims = tuple(cosine_similarity(emb, tv) for tv in text_vecs)
            scores.append(
                FrameScore(position=position, aesthetics=aesthetics(emb, head), clip_similarity=sims)
            )
            boxes = ocr.detect_text(frame)
            h, w = frame.pixels.shape[:2]
            max_ratio = max(max_ratio, text_area_ratio(boxes, w, h))
        return replace(
            clip,
            frame_scores=tuple(scores),
            text_area_ratio=max_ratio,
        )
    except Exception:
        return clip.with_flags("score_failed")
