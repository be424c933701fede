import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ArraySource, solid
from vidcur.manifest import Caption, ClipRecord
from vidcur.providers import StubEmbeddingProvider, StubTextDetector
from vidcur.scoring import (
    AestheticHead,
    ScoringError,
    TextBox,
    aesthetics,
    clip_frame_times,
    cosine_similarity,
    load_aesthetic_head,
    score_clip_frames,
    text_area_ratio,
    union_area,
    write_aesthetic_head,
)


class TestCosine:
    def test_self_similarity(self):
        a = np.array([0.6, 0.8])
        assert cosine_similarity(a, a) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_value(self):
        a = np.array([1.0, 0.0])
        b = np.array([1.0, 1.0]) / np.sqrt(2)
        assert cosine_similarity(a, b) == pytest.approx(0.70711, abs=1e-5)

    def test_zero_vector_rejected(self):
        with pytest.raises(ScoringError):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_dim_mismatch(self):
        with pytest.raises(ScoringError):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_clamped(self):
        a = np.full(50, 0.1)
        assert -1.0 <= cosine_similarity(a, a) <= 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_rotation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(6)
        b = rng.standard_normal(6)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        assert cosine_similarity(q @ a, q @ b) == pytest.approx(cosine_similarity(a, b), abs=1e-9)


class TestAesthetics:
    def test_bias_only(self):
        head = AestheticHead(weights=np.zeros(4), bias=3.2)
        assert aesthetics(np.array([1.0, -2.0, 3.0, 0.5]), head) == pytest.approx(3.2)

    def test_self_projection(self):
        e = np.array([0.6, 0.8, 0.0])
        head = AestheticHead(weights=e, bias=0.0)
        assert aesthetics(e, head) == pytest.approx(1.0)

    def test_hand_computed(self):
        head = AestheticHead(weights=np.array([0.5, -1.0, 2.0, 0.25]), bias=0.3)
        e = np.array([0.2, 0.4, 0.1, 0.8])
        # 0.1 - 0.4 + 0.2 + 0.2 + 0.3 = 0.4
        assert aesthetics(e, head) == pytest.approx(0.4)

    def test_dim_mismatch(self):
        head = AestheticHead(weights=np.zeros(4), bias=0.0)
        with pytest.raises(ScoringError):
            aesthetics(np.zeros(5), head)


def raster_union(boxes, frame_w, frame_h):
    """Pixel-counting oracle for integer boxes."""
    canvas = np.zeros((frame_h, frame_w), dtype=bool)
    for b in boxes:
        x0, y0 = max(0, int(b.x)), max(0, int(b.y))
        x1, y1 = min(frame_w, int(b.x + b.w)), min(frame_h, int(b.y + b.h))
        if x1 > x0 and y1 > y0:
            canvas[y0:y1, x0:x1] = True
    return canvas.sum() / (frame_w * frame_h)


class TestTextArea:
    def test_no_boxes(self):
        assert text_area_ratio([], 100, 100) == 0.0

    def test_half_frame(self):
        assert text_area_ratio([TextBox(0, 0, 100, 50)], 100, 100) == pytest.approx(0.5)

    def test_union_not_sum(self):
        boxes = [TextBox(0, 0, 100, 100), TextBox(0, 0, 100, 100)]
        assert text_area_ratio(boxes, 100, 100) == pytest.approx(1.0)

    def test_clipped_to_frame(self):
        assert text_area_ratio([TextBox(-50, -50, 100, 100)], 100, 100) == pytest.approx(0.25)
        assert text_area_ratio([TextBox(200, 200, 50, 50)], 100, 100) == 0.0

    def test_matches_raster_oracle_exactly(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            n = rng.integers(0, 8)
            boxes = [
                TextBox(
                    x=float(rng.integers(-10, 60)),
                    y=float(rng.integers(-10, 60)),
                    w=float(rng.integers(1, 40)),
                    h=float(rng.integers(1, 40)),
                )
                for _ in range(n)
            ]
            got = text_area_ratio(boxes, 64, 64)
            want = raster_union(boxes, 64, 64)
            assert got == pytest.approx(want, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.integers(0, 50), st.integers(0, 50), st.integers(1, 30), st.integers(1, 30)
            ),
            max_size=6,
        ),
        st.tuples(st.integers(0, 50), st.integers(0, 50), st.integers(1, 30), st.integers(1, 30)),
    )
    def test_monotone_in_box_set(self, boxes, extra):
        tb = [TextBox(*map(float, b)) for b in boxes]
        base = text_area_ratio(tb, 64, 64)
        more = text_area_ratio(tb + [TextBox(*map(float, extra))], 64, 64)
        assert more >= base - 1e-12
        assert 0.0 <= more <= 1.0

    def test_union_area_degenerate_boxes_ignored(self):
        assert union_area([TextBox(0, 0, 0, 10), TextBox(0, 0, 10, 0)]) == 0.0


class TestHeadFile:
    def test_round_trip(self, tmp_path):
        head = AestheticHead(weights=np.array([0.5, -1.25, 3.0]), bias=-0.75)
        path = tmp_path / "head.f32"
        write_aesthetic_head(head, path)
        back = load_aesthetic_head(path)
        assert back.weights == pytest.approx(head.weights)
        assert back.bias == pytest.approx(head.bias)
        assert path.stat().st_size == 4 + 4 * 3 + 4

    def test_truncated(self, tmp_path):
        path = tmp_path / "bad.f32"
        path.write_bytes(b"\x05\x00\x00\x00" + b"\x00" * 8)
        with pytest.raises(ScoringError):
            load_aesthetic_head(path)


class FailingProvider:
    dim = 35

    def embed_image(self, frame):
        raise RuntimeError("backend down")

    def embed_text(self, text):
        raise RuntimeError("backend down")


class TestScoreClipFrames:
    def make_source(self, arrays, fps=10.0):
        return ArraySource(arrays, fps)

    def clip(self, captions=()):
        return ClipRecord(
            clip_id="v-000", video_id="v", start_s=0.0, end_s=3.0, captions=tuple(captions)
        )

    def test_structural(self):
        src = self.make_source([solid(i * 8) for i in range(30)])
        rec = self.clip([Caption("coca", "gray ramp"), Caption("vblip", "still gray")])
        out = score_clip_frames(rec, src, StubEmbeddingProvider(), AestheticHead(np.zeros(35), 1.5), StubTextDetector())
        assert [f.position for f in out.frame_scores] == ["first", "middle", "last"]
        assert all(len(f.clip_similarity) == 2 for f in out.frame_scores)
        assert all(f.aesthetics == pytest.approx(1.5) for f in out.frame_scores)
        assert out.text_area_ratio == 0.0
        assert "score_failed" not in out.flags

    def test_no_captions_still_scores_aesthetics(self):
        src = self.make_source([solid(40)] * 30)
        out = score_clip_frames(
            self.clip(), src, StubEmbeddingProvider(), AestheticHead(np.zeros(35), 0.25), StubTextDetector()
        )
        assert all(f.clip_similarity == () for f in out.frame_scores)
        assert all(f.aesthetics == pytest.approx(0.25) for f in out.frame_scores)

    def test_text_area_is_max_over_frames(self):
        # Only the middle frame carries a half-frame white box.
        arrays = [solid(40) for _ in range(30)]
        for i in (14, 15, 16):
            arrays[i] = solid(40)
            arrays[i][:16, :, :] = 255  # top half white on 32x32
        src = self.make_source(arrays)
        out = score_clip_frames(
            self.clip(), src, StubEmbeddingProvider(), AestheticHead(np.zeros(35), 0.0), StubTextDetector()
        )
        assert out.text_area_ratio == pytest.approx(0.5)

    def test_provider_failure_flags_clip(self):
        src = self.make_source([solid(40)] * 30)
        out = score_clip_frames(
            self.clip(), src, FailingProvider(), AestheticHead(np.zeros(35), 0.0), StubTextDetector()
        )
        assert "score_failed" in out.flags
        assert out.frame_scores == ()


def test_clip_frame_times_last_backs_off_one_frame():
    first, middle, last = clip_frame_times(2.0, 5.0, fps=10.0)
    assert first == 2.0
    assert middle == pytest.approx(3.5)
    assert last == pytest.approx(4.9)
    # seek(last) must land strictly before the exclusive end
    assert last < 5.0
