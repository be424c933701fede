import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidcur.curation import (
    CALIBRATION_FRACTIONS,
    DEFAULT_PROFILE,
    CurationError,
    CurationProfile,
    FilterSpec,
    absolute_filter,
    apply_profile,
    axis_score,
    build_calibration_subsets,
    load_profile,
    percentile_filter,
    save_profile,
)
from vidcur.manifest import Caption, ClipRecord, FrameScore


def clip(cid, motion=None, text=None, aes=None, sims=None, captions=()):
    frame_scores = ()
    if aes is not None or sims is not None:
        sim_tuple = tuple(sims or ())
        frame_scores = tuple(
            FrameScore(pos, aes if aes is not None else 0.0, sim_tuple)
            for pos in ("first", "middle", "last")
        )
    return ClipRecord(
        clip_id=cid,
        video_id="v",
        start_s=0.0,
        end_s=5.0,
        motion_score=motion,
        text_area_ratio=text,
        frame_scores=frame_scores,
        captions=tuple(captions),
    )


class TestPercentileFilter:
    def test_bottom_quarter_of_eight(self):
        records = [clip(f"c{i}", motion=float(i + 1)) for i in range(8)]
        kept, removed = percentile_filter(records, "motion", 0.25)
        assert sorted(r.motion_score for r in removed) == [1.0, 2.0]
        assert len(kept) == 6

    def test_zero_fraction_identity(self):
        records = [clip(f"c{i}", motion=float(i)) for i in range(5)]
        kept, removed = percentile_filter(records, "motion", 0.0)
        assert len(kept) == 5 and removed == []

    def test_tie_break_on_clip_id(self):
        records = [clip(c, motion=1.0) for c in ("cd", "ca", "cc", "cb")]
        kept, removed = percentile_filter(records, "motion", 0.5)
        assert sorted(r.clip_id for r in removed) == ["ca", "cb"]

    def test_top_direction(self):
        records = [clip(f"c{i}", motion=float(i)) for i in range(8)]
        kept, removed = percentile_filter(records, "motion", 0.25, direction="top")
        assert sorted(r.motion_score for r in removed) == [6.0, 7.0]

    def test_unscored_routed_to_removed(self):
        records = [clip("a", motion=1.0), clip("b")]
        kept, removed = percentile_filter(records, "motion", 0.0)
        assert [r.clip_id for r in kept] == ["a"]
        assert removed[0].clip_id == "b" and "unscored" in removed[0].flags

    def test_partition_exact_count(self):
        rng = random.Random(3)
        records = [clip(f"c{i:03d}", motion=rng.random()) for i in range(37)]
        for fraction in (0.125, 0.25, 0.5, 1.0):
            kept, removed = percentile_filter(records, "motion", fraction)
            assert len(removed) == int(fraction * 37)
            assert len(kept) + len(removed) == 37
            assert {r.clip_id for r in kept} | {r.clip_id for r in removed} == {
                r.clip_id for r in records
            }

    def test_bad_fraction(self):
        with pytest.raises(CurationError):
            percentile_filter([], "motion", 1.5)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=0, max_size=40),
           st.floats(0, 1, allow_nan=False))
    def test_partition_property(self, scores, fraction):
        records = [clip(f"c{i:03d}", motion=s) for i, s in enumerate(scores)]
        kept, removed = percentile_filter(records, "motion", fraction)
        assert len(removed) == int(fraction * len(records))
        assert len(kept) + len(removed) == len(records)
        if kept and removed:
            assert max(r.motion_score for r in removed) <= min(r.motion_score for r in kept)


class TestCalibrationSubsets:
    def test_n80_sizes(self):
        records = [clip(f"c{i:03d}", motion=float(i)) for i in range(80)]
        subsets = build_calibration_subsets(records, "motion")
        sizes = [len(subsets[f]) for f in CALIBRATION_FRACTIONS]
        assert sizes == [80, 70, 60, 40]

    def test_empty(self):
        subsets = build_calibration_subsets([], "motion")
        assert all(subsets[f] == [] for f in CALIBRATION_FRACTIONS)

    def test_nesting(self):
        rng = random.Random(11)
        records = [clip(f"c{i:03d}", motion=rng.random()) for i in range(53)]
        subsets = build_calibration_subsets(records, "motion")
        ids = {f: {r.clip_id for r in subsets[f]} for f in CALIBRATION_FRACTIONS}
        assert ids[0.5] <= ids[0.25] <= ids[0.125] <= ids[0.0]


class TestAbsoluteFilter:
    def test_seven_percent_cutoff(self):
        records = [clip(f"c{i}", text=i / 100.0) for i in range(11)]
        kept, removed = absolute_filter(records, "text_area", 0.07)
        assert sorted(r.text_area_ratio for r in removed) == pytest.approx([0.08, 0.09, 0.10])
        assert all(r.text_area_ratio <= 0.07 for r in kept)

    def test_absolute_only_for_text_area(self):
        with pytest.raises(CurationError):
            FilterSpec(axis="motion", mode="absolute_max", parameter=0.07)


def full_clip(i, rng):
    sims = (round(rng.uniform(-1, 1), 6),)
    return ClipRecord(
        clip_id=f"c{i:04d}",
        video_id="v",
        start_s=0.0,
        end_s=5.0,
        motion_score=round(rng.uniform(0, 0.2), 6),
        text_area_ratio=round(rng.uniform(0, 0.15), 6),
        frame_scores=tuple(
            FrameScore(pos, round(rng.uniform(2, 8), 6), sims)
            for pos in ("first", "middle", "last")
        ),
        captions=(Caption("coca", f"clip {i}"),),
    )


def oracle_apply(records, profile):
    """Independent replay of the filter chain using numpy ranking."""
    alive = sorted(records, key=lambda r: r.clip_id)
    for spec in profile.filters:
        scores = np.array([axis_score(r, spec.axis, profile.caption_weights) for r in alive])
        if spec.mode == "absolute_max":
            alive = [r for r, s in zip(alive, scores) if s <= spec.parameter]
            continue
        order = np.lexsort(([r.clip_id for r in alive], scores))
        n_remove = int(spec.parameter * len(alive))
        drop = set(order[:n_remove] if spec.mode == "remove_bottom_fraction" else order[len(alive) - n_remove:])
        alive = [r for i, r in enumerate(alive) if i not in drop]
    return [r.clip_id for r in alive]


class TestApplyProfile:
    def test_matches_independent_oracle_on_1000_clips(self):
        rng = random.Random(2024)
        records = [full_clip(i, rng) for i in range(1000)]
        curated, rejections = apply_profile(records, DEFAULT_PROFILE)
        assert [r.clip_id for r in curated] == oracle_apply(records, DEFAULT_PROFILE)
        assert len(curated) + len(rejections) == 1000

    def test_empty_profile_identity(self):
        rng = random.Random(5)
        records = [full_clip(i, rng) for i in range(20)]
        curated, rejections = apply_profile(records, CurationProfile())
        assert [r.clip_id for r in curated] == sorted(r.clip_id for r in records)
        assert rejections == []

    def test_input_order_invariant(self):
        rng = random.Random(6)
        records = [full_clip(i, rng) for i in range(100)]
        curated1, _ = apply_profile(records, DEFAULT_PROFILE)
        rng.shuffle(records)
        curated2, _ = apply_profile(records, DEFAULT_PROFILE)
        assert [r.clip_id for r in curated1] == [r.clip_id for r in curated2]

    def test_rejection_report_counts_per_axis(self):
        rng = random.Random(7)
        records = [full_clip(i, rng) for i in range(64)]
        _, rejections = apply_profile(records, DEFAULT_PROFILE)
        by_axis = {}
        for r in rejections:
            by_axis[r.axis] = by_axis.get(r.axis, 0) + 1
        assert by_axis["motion"] == 16  # floor(0.25 * 64)
        assert by_axis["aesthetics"] == 12  # floor(0.25 * 48)
        assert by_axis["clip_similarity"] == 18  # floor(0.5 * 36)

    def test_one_filter_per_axis(self):
        with pytest.raises(CurationError):
            CurationProfile(
                filters=(
                    FilterSpec("motion", "remove_bottom_fraction", 0.25),
                    FilterSpec("motion", "remove_top_fraction", 0.25),
                )
            )


class TestProfileFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "profile.ini"
        save_profile(DEFAULT_PROFILE, path)
        back = load_profile(path)
        assert back.filters == DEFAULT_PROFILE.filters
        assert back.caption_weights == DEFAULT_PROFILE.caption_weights

    def test_filter_order_is_file_order(self, tmp_path):
        path = tmp_path / "p.ini"
        path.write_text(
            "[filter.text_area]\nmode = absolute_max\nparameter = 0.07\n\n"
            "[filter.motion]\nmode = remove_bottom_fraction\nparameter = 0.25\n"
        )
        profile = load_profile(path)
        assert [f.axis for f in profile.filters] == ["text_area", "motion"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(CurationError):
            load_profile(tmp_path / "nope.ini")

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "p.ini"
        path.write_text("[bogus]\nx = 1\n")
        with pytest.raises(CurationError):
            load_profile(path)

    def test_alternative_text_percentile_profile(self, tmp_path):
        path = tmp_path / "p.ini"
        path.write_text("[filter.text_area]\nmode = remove_top_fraction\nparameter = 0.25\n")
        profile = load_profile(path)
        records = [clip(f"c{i}", text=i / 100.0) for i in range(8)]
        kept, removed = apply_profile(records, profile)
        assert len(removed) == 2
        assert {r.clip_id for r in removed} == {"c6", "c7"}


class TestAxisScore:
    def test_aesthetics_mean_over_frames(self):
        c = clip("a", aes=4.0)
        assert axis_score(c, "aesthetics") == pytest.approx(4.0)

    def test_similarity_needs_captions(self):
        assert axis_score(clip("a", sims=(0.5,)), "clip_similarity") is None

    def test_similarity_mean(self):
        c = clip("a", sims=(0.5,), captions=(Caption("coca", "x"),))
        assert axis_score(c, "clip_similarity") == pytest.approx(0.5)

    def test_unknown_axis(self):
        with pytest.raises(CurationError):
            axis_score(clip("a"), "sharpness")
