"""Dataset data model and the line-delimited on-disk manifest format.

A manifest is UTF-8 text with one JSON object per line, one clip per line.
Clip fields: video_id, clip_id, start_s, end_s, motion_score, text_area_ratio,
frame_scores, captions, flags. Annotation fields are null/empty until the
corresponding pipeline stage fills them in. Video manifests use the same
line-delimited shape with the VideoRecord fields.

Shards are named ``<dataset>.<5-digit index>.manifest``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, TextIO

# Seconds per Julian year; used for all duration-in-years conversions.
JULIAN_YEAR_S = 31_557_600.0

FRAME_POSITIONS = ("first", "middle", "last")
CAPTION_SOURCES = ("coca", "vblip", "llm_summary")

# Upper edges of the motion-score histogram bins; the last bin is open.
MOTION_BIN_EDGES = tuple(round(0.01 * i, 2) for i in range(1, 17))


class ManifestError(ValueError):
    """A record or manifest line violating the schema or an invariant."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message


@dataclass(frozen=True)
class VideoRecord:
    """One raw source video plus its keyframe index."""

    video_id: str
    uri: str
    duration_s: float
    fps: float
    width: int
    height: int
    keyframes_s: tuple[float, ...]

    def __post_init__(self):
        if not self.video_id:
            raise ManifestError("video_id must be non-empty")
        if not self.duration_s > 0:
            raise ManifestError(f"duration_s must be > 0, got {self.duration_s}")
        if not self.fps > 0:
            raise ManifestError(f"fps must be > 0, got {self.fps}")
        if self.width < 16 or self.height < 16:
            raise ManifestError(f"frame dims must be >= 16, got {self.width}x{self.height}")
        kf = self.keyframes_s
        if not kf or kf[0] != 0.0:
            raise ManifestError("keyframes_s must start at 0.0")
        if any(b <= a for a, b in zip(kf, kf[1:])):
            raise ManifestError("keyframes_s must be strictly increasing")
        if kf[-1] >= self.duration_s:
            raise ManifestError("keyframes_s must all be < duration_s")


@dataclass(frozen=True)
class Caption:
    source: str
    text: str

    def __post_init__(self):
        if self.source not in CAPTION_SOURCES:
            raise ManifestError(f"unknown caption source {self.source!r}")
        if not self.text:
            raise ManifestError("caption text must be non-empty")


@dataclass(frozen=True)
class FrameScore:
    """Embedding-derived scores for one annotated frame.

    clip_similarity holds one cosine similarity per stored caption, in
    caption order.
    """

    position: str
    aesthetics: float
    clip_similarity: tuple[float, ...] = ()

    def __post_init__(self):
        if self.position not in FRAME_POSITIONS:
            raise ManifestError(f"unknown frame position {self.position!r}")
        for s in self.clip_similarity:
            if not -1.0 <= s <= 1.0:
                raise ManifestError(f"clip similarity {s} outside [-1, 1]")


@dataclass(frozen=True)
class ClipRecord:
    """One cut-free clip with whatever annotations have been computed so far."""

    clip_id: str
    video_id: str
    start_s: float
    end_s: float
    motion_score: float | None = None
    text_area_ratio: float | None = None
    frame_scores: tuple[FrameScore, ...] = ()
    captions: tuple[Caption, ...] = ()
    flags: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.clip_id or not self.video_id:
            raise ManifestError("clip_id and video_id must be non-empty")
        if not (0.0 <= self.start_s < self.end_s):
            raise ManifestError(
                f"need 0 <= start_s < end_s, got [{self.start_s}, {self.end_s})"
            )
        if self.motion_score is not None and not self.motion_score >= 0.0:
            raise ManifestError(f"motion_score must be >= 0, got {self.motion_score}")
        if self.text_area_ratio is not None and not 0.0 <= self.text_area_ratio <= 1.0:
            raise ManifestError(f"text_area_ratio {self.text_area_ratio} outside [0, 1]")
        if self.frame_scores and tuple(f.position for f in self.frame_scores) != FRAME_POSITIONS:
            raise ManifestError("frame_scores must be exactly (first, middle, last)")
        sources = [c.source for c in self.captions]
        if len(sources) != len(set(sources)):
            raise ManifestError("at most one caption per source")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def with_flags(self, *flags: str) -> "ClipRecord":
        return replace(self, flags=self.flags | set(flags))


@dataclass(frozen=True)
class DatasetStats:
    """Aggregate statistics over a clip manifest."""

    clip_count: int
    total_duration_years: float
    mean_clip_duration_s: float
    motion_histogram: tuple[int, ...]
    motion_scored: int
    caption_coverage: float


# --- serialization ----------------------------------------------------------


def clip_to_dict(rec: ClipRecord) -> dict:
    return {
        "video_id": rec.video_id,
        "clip_id": rec.clip_id,
        "start_s": rec.start_s,
        "end_s": rec.end_s,
        "motion_score": rec.motion_score,
        "text_area_ratio": rec.text_area_ratio,
        "frame_scores": [
            {
                "position": f.position,
                "aesthetics": f.aesthetics,
                "clip_similarity": list(f.clip_similarity),
            }
            for f in rec.frame_scores
        ],
        "captions": [{"source": c.source, "text": c.text} for c in rec.captions],
        "flags": sorted(rec.flags),
    }


def clip_from_dict(d: dict) -> ClipRecord:
    try:
        return ClipRecord(
            clip_id=d["clip_id"],
            video_id=d["video_id"],
            start_s=float(d["start_s"]),
            end_s=float(d["end_s"]),
            motion_score=None if d.get("motion_score") is None else float(d["motion_score"]),
            text_area_ratio=(
                None if d.get("text_area_ratio") is None else float(d["text_area_ratio"])
            ),
            frame_scores=tuple(
                FrameScore(
                    position=f["position"],
                    aesthetics=float(f["aesthetics"]),
                    clip_similarity=tuple(float(s) for s in f.get("clip_similarity", [])),
                )
                for f in d.get("frame_scores", [])
            ),
            captions=tuple(
                Caption(source=c["source"], text=c["text"]) for c in d.get("captions", [])
            ),
            flags=frozenset(d.get("flags", [])),
        )
    except KeyError as e:
        raise ManifestError(f"missing required field {e.args[0]!r}") from e
    except (TypeError, ValueError) as e:
        if isinstance(e, ManifestError):
            raise
        raise ManifestError(str(e)) from e


def video_to_dict(rec: VideoRecord) -> dict:
    return {
        "video_id": rec.video_id,
        "uri": rec.uri,
        "duration_s": rec.duration_s,
        "fps": rec.fps,
        "width": rec.width,
        "height": rec.height,
        "keyframes_s": list(rec.keyframes_s),
    }


def video_from_dict(d: dict) -> VideoRecord:
    try:
        return VideoRecord(
            video_id=d["video_id"],
            uri=d["uri"],
            duration_s=float(d["duration_s"]),
            fps=float(d["fps"]),
            width=int(d["width"]),
            height=int(d["height"]),
            keyframes_s=tuple(float(t) for t in d["keyframes_s"]),
        )
    except KeyError as e:
        raise ManifestError(f"missing required field {e.args[0]!r}") from e


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


# --- manifest I/O -----------------------------------------------------------


def read_manifest(
    path: str | Path,
    strict: bool = False,
    errors: list[ManifestError] | None = None,
) -> Iterator[ClipRecord]:
    """Stream ClipRecords from a line-delimited manifest file.

    In lenient mode (default) malformed lines are reported as line-tagged
    ManifestErrors appended to ``errors`` (if given) and the stream
    continues; in strict mode the first bad line raises.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        yield from _read_lines(fh, strict, errors)


def _read_lines(fh: TextIO, strict: bool, errors: list[ManifestError] | None):
    for line_no, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
            if not isinstance(data, dict):
                raise ManifestError("line is not an object")
            yield clip_from_dict(data)
        except (json.JSONDecodeError, ManifestError) as e:
            msg = e.message if isinstance(e, ManifestError) else f"invalid JSON: {e}"
            err = ManifestError(msg, line_no=line_no)
            if strict:
                raise err from None
            if errors is not None:
                errors.append(err)


def write_manifest(records: Iterable[ClipRecord], path: str | Path) -> int:
    """Write records one JSON object per line; returns the count written.

    Output is deterministic for a given input order (fixed field order,
    compact separators). Records are validated on construction, so any
    invariant violation surfaces before a byte is written for that record.
    """
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dumps(clip_to_dict(rec)) + "\n")
            count += 1
    return count


def read_video_manifest(path: str | Path) -> list[VideoRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(video_from_dict(json.loads(line)))
            except (json.JSONDecodeError, ManifestError) as e:
                raise ManifestError(str(e), line_no=line_no) from None
    return out


def write_video_manifest(records: Iterable[VideoRecord], path: str | Path) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dumps(video_to_dict(rec)) + "\n")
            count += 1
    return count


def shard_name(dataset: str, index: int) -> str:
    return f"{dataset}.{index:05d}.manifest"


# --- statistics -------------------------------------------------------------


def motion_bin_index(score: float) -> int:
    """Histogram bin for a motion score; the final bin is open-ended."""
    for i, edge in enumerate(MOTION_BIN_EDGES):
        if score < edge:
            return i
    return len(MOTION_BIN_EDGES)


def compute_stats(records: Iterable[ClipRecord]) -> DatasetStats:
    """Dataset-level statistics; order-independent and safe on empty input.

    The motion histogram covers clips that carry a motion score; its counts
    sum to ``motion_scored`` (equal to clip_count once the whole dataset is
    annotated).
    """
    count = 0
    total_s = 0.0
    hist = [0] * (len(MOTION_BIN_EDGES) + 1)
    scored = 0
    full_captions = 0
    for rec in records:
        count += 1
        total_s += rec.duration_s
        if rec.motion_score is not None:
            hist[motion_bin_index(rec.motion_score)] += 1
            scored += 1
        if len(rec.captions) == len(CAPTION_SOURCES):
            full_captions += 1
    return DatasetStats(
        clip_count=count,
        total_duration_years=total_s / JULIAN_YEAR_S,
        mean_clip_duration_s=total_s / count if count else 0.0,
        motion_histogram=tuple(hist),
        motion_scored=scored,
        caption_coverage=full_captions / count if count else 0.0,
    )


def clip_multiplier(raw_videos: int, clips: int) -> float:
    """Clips produced per raw source video."""
    if raw_videos <= 0:
        raise ValueError("raw video count must be positive")
    return clips / raw_videos


def format_stats(stats: DatasetStats, multiplier: float | None = None) -> str:
    """Human-readable statistics report."""
    lines = [
        f"clips:                {stats.clip_count}",
        f"total duration:       {stats.total_duration_years:.9g} years",
        f"mean clip duration:   {stats.mean_clip_duration_s:.3f} s",
        f"caption coverage:     {stats.caption_coverage:.1%}",
        f"motion-scored clips:  {stats.motion_scored}",
    ]
    if multiplier is not None:
        lines.append(f"clips per raw video:  {multiplier:.2f}x")
    if stats.motion_scored:
        lines.append("motion histogram (bin upper edge: count):")
        edges = [f"{e:g}" for e in MOTION_BIN_EDGES] + ["inf"]
        for edge, n in zip(edges, stats.motion_histogram):
            if n:
                lines.append(f"  <{edge}: {n}")
    return "\n".join(lines)


__all__ = [
    "JULIAN_YEAR_S",
    "FRAME_POSITIONS",
    "CAPTION_SOURCES",
    "ManifestError",
    "VideoRecord",
    "Caption",
    "FrameScore",
    "ClipRecord",
    "DatasetStats",
    "read_manifest",
    "write_manifest",
    "read_video_manifest",
    "write_video_manifest",
    "shard_name",
    "compute_stats",
    "clip_multiplier",
    "clip_to_dict",
    "clip_from_dict",
    "video_to_dict",
    "video_from_dict",
    "format_stats",
]
