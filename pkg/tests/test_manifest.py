import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidcur.manifest import (
    JULIAN_YEAR_S,
    Caption,
    ClipRecord,
    FrameScore,
    ManifestError,
    VideoRecord,
    clip_multiplier,
    compute_stats,
    read_manifest,
    shard_name,
    write_manifest,
)


def full_record(i: int = 0) -> ClipRecord:
    return ClipRecord(
        clip_id=f"vid-{i:03d}",
        video_id="vid",
        start_s=1.5 * i,
        end_s=1.5 * i + 4.25,
        motion_score=0.031 + i * 0.001,
        text_area_ratio=0.02,
        frame_scores=(
            FrameScore("first", 5.125, (0.25, -0.5)),
            FrameScore("middle", 4.75, (0.125, 0.0)),
            FrameScore("last", 5.0, (1.0, -1.0)),
        ),
        captions=(
            Caption("coca", "a boat on a lake"),
            Caption("vblip", "a boat drifts été"),
        ),
        flags=frozenset({"checked"}),
    )


class TestRoundTrip:
    def test_identity(self, tmp_path):
        records = [full_record(i) for i in range(5)]
        path = tmp_path / "m.manifest"
        assert write_manifest(records, path) == 5
        back = list(read_manifest(path))
        assert back == records

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.manifest"
        path.write_text("")
        assert list(read_manifest(path)) == []

    def test_write_empty(self, tmp_path):
        path = tmp_path / "m.manifest"
        assert write_manifest([], path) == 0
        assert path.read_bytes() == b""

    def test_three_lines_in_order(self, tmp_path):
        path = tmp_path / "m.manifest"
        write_manifest([full_record(i) for i in (3, 1, 2)], path)
        assert [r.clip_id for r in read_manifest(path)] == ["vid-003", "vid-001", "vid-002"]

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        write_manifest([full_record(i) for i in range(3)], a)
        write_manifest([full_record(i) for i in range(3)], b)
        assert a.read_bytes() == b.read_bytes()


class TestLenientStrict:
    def make_mixed(self, tmp_path):
        path = tmp_path / "m.manifest"
        lines = [json.dumps({"nope": 1})]
        write_manifest([full_record(i) for i in range(4)], path)
        content = path.read_text().splitlines()
        content.insert(2, lines[0])  # malformed line 3 of 5
        path.write_text("\n".join(content) + "\n")
        return path

    def test_lenient_collects_errors(self, tmp_path):
        path = self.make_mixed(tmp_path)
        errors = []
        records = list(read_manifest(path, errors=errors))
        assert len(records) == 4
        assert len(errors) == 1
        assert errors[0].line_no == 3

    def test_strict_aborts(self, tmp_path):
        path = self.make_mixed(tmp_path)
        with pytest.raises(ManifestError, match="line 3"):
            list(read_manifest(path, strict=True))

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "m.manifest"
        path.write_text("{not json\n")
        errors = []
        assert list(read_manifest(path, errors=errors)) == []
        assert errors and errors[0].line_no == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list(read_manifest(tmp_path / "nope.manifest"))


class TestInvariants:
    def test_reversed_span_rejected(self):
        with pytest.raises(ManifestError):
            ClipRecord(clip_id="c", video_id="v", start_s=5.0, end_s=4.0)

    def test_bad_ratio_rejected(self):
        with pytest.raises(ManifestError):
            ClipRecord(clip_id="c", video_id="v", start_s=0, end_s=1, text_area_ratio=1.5)

    def test_duplicate_caption_source_rejected(self):
        with pytest.raises(ManifestError):
            ClipRecord(
                clip_id="c",
                video_id="v",
                start_s=0,
                end_s=1,
                captions=(Caption("coca", "a"), Caption("coca", "b")),
            )

    def test_frame_scores_must_be_ordered_triple(self):
        with pytest.raises(ManifestError):
            ClipRecord(
                clip_id="c",
                video_id="v",
                start_s=0,
                end_s=1,
                frame_scores=(FrameScore("middle", 1.0),),
            )

    def test_video_record_keyframes(self):
        with pytest.raises(ManifestError):
            VideoRecord("v", "u", 10.0, 24.0, 64, 64, keyframes_s=(2.0, 4.0))
        with pytest.raises(ManifestError):
            VideoRecord("v", "u", 10.0, 24.0, 64, 64, keyframes_s=(0.0, 4.0, 4.0))
        with pytest.raises(ManifestError):
            VideoRecord("v", "u", 10.0, 24.0, 64, 64, keyframes_s=(0.0, 10.0))


class TestStats:
    def clip(self, cid, dur, motion=0.05, captions=3):
        sources = ("coca", "vblip", "llm_summary")[:captions]
        return ClipRecord(
            clip_id=cid,
            video_id="v",
            start_s=0.0,
            end_s=dur,
            motion_score=motion,
            captions=tuple(Caption(s, "x") for s in sources),
        )

    def test_two_ten_second_clips(self):
        stats = compute_stats([self.clip("a", 10.0), self.clip("b", 10.0)])
        assert stats.total_duration_years == pytest.approx(20.0 / JULIAN_YEAR_S)
        assert stats.total_duration_years == pytest.approx(6.34e-7, rel=1e-2)
        assert stats.mean_clip_duration_s == pytest.approx(10.0)
        assert stats.clip_count == 2

    def test_empty(self):
        stats = compute_stats([])
        assert stats.clip_count == 0
        assert stats.mean_clip_duration_s == 0.0
        assert stats.total_duration_years == 0.0
        assert sum(stats.motion_histogram) == 0

    def test_histogram_sums_to_scored(self):
        clips = [self.clip(f"c{i}", 5.0, motion=i * 0.01) for i in range(20)]
        stats = compute_stats(clips)
        assert sum(stats.motion_histogram) == stats.motion_scored == 20

    def test_caption_coverage(self):
        clips = [self.clip("a", 5.0, captions=3), self.clip("b", 5.0, captions=2)]
        assert compute_stats(clips).caption_coverage == pytest.approx(0.5)

    def test_permutation_invariant(self):
        clips = [self.clip(f"c{i}", 1.0 + i, motion=i * 0.005) for i in range(30)]
        base = compute_stats(clips)
        rng = random.Random(7)
        for _ in range(5):
            rng.shuffle(clips)
            assert compute_stats(clips) == base


class TestClipMultiplier:
    def test_four_x(self):
        assert clip_multiplier(10, 40) == pytest.approx(4.0)

    def test_identity(self):
        assert clip_multiplier(5, 5) == pytest.approx(1.0)

    def test_zero_videos(self):
        with pytest.raises(ValueError):
            clip_multiplier(0, 10)


def test_shard_name():
    assert shard_name("lvd", 0) == "lvd.00000.manifest"
    assert shard_name("lvd", 123) == "lvd.00123.manifest"


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.1, 100.0), min_size=1, max_size=20), st.randoms())
def test_stats_shuffle_property(durations, rnd):
    clips = [
        ClipRecord(clip_id=f"c{i}", video_id="v", start_s=0.0, end_s=d)
        for i, d in enumerate(durations)
    ]
    base = compute_stats(clips)
    rnd.shuffle(clips)
    again = compute_stats(clips)
    assert again.clip_count == base.clip_count
    assert again.total_duration_years == pytest.approx(base.total_duration_years)
