import math

import pytest
from hypothesis import given, strategies as st

from densecap.errors import DataError
from densecap.timeline import (
    Interval,
    SegmentSpan,
    VideoMeta,
    interval_to_segments,
    segments_to_interval,
    tiou,
)


def unit_cell_tiou(a: Interval, b: Interval) -> float:
    """Brute-force oracle for integer-endpoint intervals: count unit cells."""
    cells_a = set(range(int(a.start), int(a.end)))
    cells_b = set(range(int(b.start), int(b.end)))
    union = cells_a | cells_b
    return len(cells_a & cells_b) / len(union)


def ten_segment_meta() -> VideoMeta:
    # fps 64 with 640 frames: 10 segments of exactly 1 s each.
    return VideoMeta(video_id="v", duration_sec=10.0, fps=64.0, n_frames=640)


intervals = st.tuples(
    st.integers(min_value=0, max_value=99), st.integers(min_value=1, max_value=100)
).map(lambda t: Interval(t[0], t[0] + t[1]))


class TestInterval:
    def test_rejects_zero_length(self):
        with pytest.raises(DataError):
            Interval(3.0, 3.0)

    def test_rejects_negative_start(self):
        with pytest.raises(DataError):
            Interval(-1.0, 2.0)

    def test_rejects_reversed(self):
        with pytest.raises(DataError):
            Interval(5.0, 2.0)


class TestTiou:
    def test_identical(self):
        assert tiou(Interval(0, 10), Interval(0, 10)) == 1.0

    def test_disjoint(self):
        assert tiou(Interval(0, 10), Interval(20, 30)) == 0.0

    def test_partial_overlap(self):
        # intersection 5, union 15
        assert tiou(Interval(0, 10), Interval(5, 15)) == 1 / 3

    def test_touching_intervals_are_disjoint(self):
        assert tiou(Interval(0, 5), Interval(5, 10)) == 0.0

    @given(intervals, intervals)
    def test_symmetry(self, a, b):
        assert tiou(a, b) == tiou(b, a)

    @given(intervals)
    def test_self_is_one(self, a):
        assert tiou(a, a) == 1.0

    @given(intervals, intervals)
    def test_bounds(self, a, b):
        assert 0.0 <= tiou(a, b) <= 1.0

    @given(intervals, intervals)
    def test_unit_cell_oracle(self, a, b):
        assert tiou(a, b) == unit_cell_tiou(a, b)

    @given(st.integers(0, 80), st.integers(1, 10), st.integers(0, 9))
    def test_shrinking_overlap_never_increases(self, start, length, shift):
        # b slides away from a in unit steps; tiou must be non-increasing.
        a = Interval(start, start + length)
        vals = [
            tiou(a, Interval(start + s, start + s + length)) for s in range(shift + 1)
        ]
        assert all(x >= y for x, y in zip(vals, vals[1:]))


class TestSegmentMapping:
    def test_full_video_span(self):
        meta = ten_segment_meta()
        span = interval_to_segments(Interval(0, meta.duration_sec), meta)
        assert span == SegmentSpan(0, meta.n_segments - 1)

    def test_hand_example(self):
        span = interval_to_segments(Interval(2.0, 5.0), ten_segment_meta())
        assert span == SegmentSpan(2, 4)

    def test_sub_segment_interval_clamps(self):
        span = interval_to_segments(Interval(2.5, 2.6), ten_segment_meta())
        assert span == SegmentSpan(2, 2)

    def test_out_of_range_names_video(self):
        with pytest.raises(DataError, match="'v'"):
            interval_to_segments(Interval(5.0, 10.5), ten_segment_meta())

    def test_inverse_hand_example(self):
        iv = segments_to_interval(SegmentSpan(2, 4), ten_segment_meta())
        assert iv == Interval(2.0, 5.0)

    def test_full_span_roundtrip(self):
        meta = ten_segment_meta()
        iv = segments_to_interval(SegmentSpan(0, meta.n_segments - 1), meta)
        assert iv == Interval(0.0, meta.duration_sec)

    def test_roundtrip_contains_aligned_interval(self):
        meta = ten_segment_meta()
        iv = Interval(3.0, 7.0)
        back = segments_to_interval(interval_to_segments(iv, meta), meta)
        assert back.start <= iv.start and back.end >= iv.end

    @given(
        st.integers(0, 9), st.integers(1, 10), st.integers(0, 9), st.integers(1, 10)
    )
    def test_span_monotone_under_containment(self, s, l1, pad_l, pad_r):
        meta = ten_segment_meta()
        inner = Interval(s, min(10, s + l1))
        outer = Interval(max(0, inner.start - pad_l), min(10, inner.end + pad_r))
        si = interval_to_segments(inner, meta)
        so = interval_to_segments(outer, meta)
        assert so.first <= si.first and so.last >= si.last


class TestVideoMeta:
    def test_segment_count_derived(self):
        meta = VideoMeta(video_id="x", duration_sec=10.0, fps=30.0, n_frames=300)
        assert meta.n_segments == math.ceil(300 / 64)

    def test_inconsistent_segment_count_rejected(self):
        with pytest.raises(DataError):
            VideoMeta(video_id="x", duration_sec=10.0, fps=30.0, n_frames=300, n_segments=99)

    def test_bad_duration(self):
        with pytest.raises(DataError):
            VideoMeta(video_id="x", duration_sec=0.0, fps=30.0, n_frames=10)
