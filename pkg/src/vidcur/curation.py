"""Percentile-threshold calibration and the final filter chain.

Filters rank clips on one annotation axis and remove a fixed fraction from
the bottom (or top), or apply an absolute cutoff (text area only). The
calibration helper builds the nested 0/12.5/25/50% removal subsets used to
train comparison models whose human-preference ranking picks the production
threshold per axis.

The shipped default profile removes the 25% most static clips, the 25%
lowest-aesthetics clips, the 50% lowest caption-similarity clips, and every
clip whose text coverage exceeds 7% absolute; a 25% top-fraction text filter
is available as a profile alternative to the absolute cutoff.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .captioning import DEFAULT_CAPTION_WEIGHTS, sample_caption
from .manifest import ClipRecord

AXES = ("motion", "aesthetics", "clip_similarity", "text_area")
MODES = ("remove_bottom_fraction", "remove_top_fraction", "absolute_max")
CALIBRATION_FRACTIONS = (0.0, 0.125, 0.25, 0.5)

TEXT_AREA_MAX_DEFAULT = 0.07


class CurationError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    axis: str
    mode: str
    parameter: float

    def __post_init__(self):
        if self.axis not in AXES:
            raise CurationError(f"unknown axis {self.axis!r}")
        if self.mode not in MODES:
            raise CurationError(f"unknown mode {self.mode!r}")
        if self.mode == "absolute_max":
            if self.axis != "text_area":
                raise CurationError("absolute_max is only valid for the text_area axis")
        elif not 0.0 <= self.parameter <= 1.0:
            raise CurationError(f"fraction must be in [0, 1], got {self.parameter}")


@dataclass(frozen=True)
class CurationProfile:
    filters: tuple[FilterSpec, ...] = ()
    caption_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CAPTION_WEIGHTS))

    def __post_init__(self):
        axes = [f.axis for f in self.filters]
        if len(axes) != len(set(axes)):
            raise CurationError("at most one filter per axis")


DEFAULT_PROFILE = CurationProfile(
    filters=(
        FilterSpec(axis="motion", mode="remove_bottom_fraction", parameter=0.25),
        FilterSpec(axis="aesthetics", mode="remove_bottom_fraction", parameter=0.25),
        FilterSpec(axis="clip_similarity", mode="remove_bottom_fraction", parameter=0.5),
        FilterSpec(axis="text_area", mode="absolute_max", parameter=TEXT_AREA_MAX_DEFAULT),
    )
)


# --- axis scores --------------------------------------------------------------


def axis_score(
    rec: ClipRecord, axis: str, caption_weights: dict[str, float] | None = None
) -> float | None:
    """The scalar a filter ranks this clip by, or None if not yet annotated.

    aesthetics is the mean over the three annotated frames;
    clip_similarity is the mean over the three frames of the similarity to
    one caption sampled per the given weights (seeded by clip_id so the
    choice is reproducible).
    """
    if axis == "motion":
        return rec.motion_score
    if axis == "text_area":
        return rec.text_area_ratio
    if axis == "aesthetics":
        if not rec.frame_scores:
            return None
        return sum(f.aesthetics for f in rec.frame_scores) / len(rec.frame_scores)
    if axis == "clip_similarity":
        if not rec.frame_scores or not rec.captions:
            return None
        seed = hash_clip_id(rec.clip_id) & 0x7FFFFFFF
        chosen = sample_caption(rec.captions, seed, caption_weights)
        idx = [c.source for c in rec.captions].index(chosen.source)
        sims = [f.clip_similarity[idx] for f in rec.frame_scores if idx < len(f.clip_similarity)]
        if not sims:
            return None
        return sum(sims) / len(sims)
    raise CurationError(f"unknown axis {axis!r}")


def hash_clip_id(clip_id: str) -> int:
    # stable across processes, unlike builtin hash()
    return int.from_bytes(hashlib.sha256(clip_id.encode()).digest()[:8], "little")


# --- filtering ----------------------------------------------------------------


def percentile_filter(
    records: Sequence[ClipRecord],
    axis: str,
    fraction: float,
    direction: str = "bottom",
    score_fn: Callable[[ClipRecord], float | None] | None = None,
) -> tuple[list[ClipRecord], list[ClipRecord]]:
    """Split records into (kept, removed) by rank on one axis.

    Ranking sorts ascending by score with a stable clip_id tie-break;
    bottom removal drops the first floor(fraction * N), top removal the
    last floor(fraction * N). Records missing the score are routed to
    removed with an ``unscored`` flag rather than silently kept. The two
    halves partition the input and each preserves the input order.
    """
    if not 0.0 <= fraction <= 1.0:
        raise CurationError(f"fraction must be in [0, 1], got {fraction}")
    if direction not in ("bottom", "top"):
        raise CurationError(f"direction must be bottom or top, got {direction!r}")
    score_fn = score_fn or (lambda r: axis_score(r, axis))

    scores = [score_fn(rec) for rec in records]
    ranked = sorted(
        (i for i, s in enumerate(scores) if s is not None),
        key=lambda i: (scores[i], records[i].clip_id),
    )
    n_remove = int(fraction * len(ranked))
    cut = set(ranked[:n_remove] if direction == "bottom" else ranked[len(ranked) - n_remove :])

    kept: list[ClipRecord] = []
    removed: list[ClipRecord] = []
    for i, rec in enumerate(records):
        if scores[i] is None:
            removed.append(rec.with_flags("unscored"))
        elif i in cut:
            removed.append(rec.with_flags(f"removed_{axis}"))
        else:
            kept.append(rec)
    return kept, removed


def absolute_filter(
    records: Sequence[ClipRecord],
    axis: str,
    maximum: float,
    score_fn: Callable[[ClipRecord], float | None] | None = None,
) -> tuple[list[ClipRecord], list[ClipRecord]]:
    """Remove records whose axis score exceeds an absolute maximum."""
    score_fn = score_fn or (lambda r: axis_score(r, axis))
    kept: list[ClipRecord] = []
    removed: list[ClipRecord] = []
    for rec in records:
        s = score_fn(rec)
        if s is None:
            removed.append(rec.with_flags("unscored"))
        elif s > maximum:
            removed.append(rec.with_flags(f"removed_{axis}"))
        else:
            kept.append(rec)
    return kept, removed


def build_calibration_subsets(
    records: Sequence[ClipRecord],
    axis: str,
    fractions: Sequence[float] = CALIBRATION_FRACTIONS,
) -> dict[float, list[ClipRecord]]:
    """Nested bottom-removal subsets for one axis at each fraction.

    All subsets derive from a single shared sort, so a subset removing more
    is always contained in one removing less.
    """
    out = {}
    for f in fractions:
        kept, _ = percentile_filter(records, axis, f, direction="bottom")
        out[f] = kept
    return out


@dataclass(frozen=True)
class Rejection:
    clip_id: str
    axis: str
    score: float | None


def apply_profile(
    records: Sequence[ClipRecord],
    profile: CurationProfile,
) -> tuple[list[ClipRecord], list[Rejection]]:
    """Run the profile's filters in order, each on the survivors so far.

    Returns the curated records plus one rejection row per removed clip.
    The result does not depend on the input order (every filter sorts).
    """
    survivors = sorted(records, key=lambda r: r.clip_id)
    rejections: list[Rejection] = []
    for spec in profile.filters:

        def score_fn(rec: ClipRecord, axis=spec.axis):
            return axis_score(rec, axis, profile.caption_weights)

        if spec.mode == "absolute_max":
            survivors, removed = absolute_filter(survivors, spec.axis, spec.parameter, score_fn)
        else:
            direction = "bottom" if spec.mode == "remove_bottom_fraction" else "top"
            survivors, removed = percentile_filter(
                survivors, spec.axis, spec.parameter, direction, score_fn
            )
        rejections.extend(
            Rejection(clip_id=r.clip_id, axis=spec.axis, score=score_fn(r)) for r in removed
        )
    return survivors, rejections


# --- profile files --------------------------------------------------------------
# INI-style text: one [filter.<axis>] section per filter (applied in file
# order) with keys mode and parameter, plus an optional [captions] section
# with per-source sampling weights.


def load_profile(path: str | Path) -> CurationProfile:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise CurationError(f"profile file not found: {path}")
    filters = []
    weights = dict(DEFAULT_CAPTION_WEIGHTS)
    for section in parser.sections():
        if section.startswith("filter."):
            axis = section.split(".", 1)[1]
            try:
                filters.append(
                    FilterSpec(
                        axis=axis,
                        mode=parser.get(section, "mode"),
                        parameter=parser.getfloat(section, "parameter"),
                    )
                )
            except (configparser.Error, ValueError) as e:
                raise CurationError(f"profile section [{section}]: {e}") from None
        elif section == "captions":
            weights = {k: parser.getfloat(section, k) for k in parser.options(section)}
        else:
            raise CurationError(f"unknown profile section [{section}]")
    return CurationProfile(filters=tuple(filters), caption_weights=weights)


def save_profile(profile: CurationProfile, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    for spec in profile.filters:
        section = f"filter.{spec.axis}"
        parser[section] = {"mode": spec.mode, "parameter": repr(spec.parameter)}
    parser["captions"] = {k: repr(v) for k, v in profile.caption_weights.items()}
    with Path(path).open("w", encoding="utf-8") as fh:
        parser.write(fh)


def rejection_lines(rejections: Iterable[Rejection]) -> Iterable[str]:
    """Line-delimited rejection report rows: clip_id, axis, score."""
    for r in rejections:
        yield json.dumps(
            {"clip_id": r.clip_id, "axis": r.axis, "score": r.score}, separators=(",", ":")
        )
