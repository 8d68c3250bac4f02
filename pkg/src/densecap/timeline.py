"""Temporal intervals, tIoU arithmetic, and the frame/segment/second grid.

Intervals are half-open ``[start, end)`` in seconds. A segment is a fixed
block of ``segment_len`` consecutive frames (64 by default), the atomic unit
all features are extracted over. Everything here is a pure function on
immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError, DataError

SEGMENT_LEN_FRAMES = 64

# Tolerance for "interval lies inside the video" checks, in seconds.
END_EPSILON = 1e-6


@dataclass(frozen=True)
class Interval:
    """A half-open temporal span ``[start, end)`` in seconds."""

    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise DataError(f"interval bounds must be finite, got [{self.start}, {self.end})")
        if self.start < 0:
            raise DataError(f"interval start must be >= 0, got {self.start}")
        if self.end <= self.start:
            raise DataError(
                f"interval must have positive length, got [{self.start}, {self.end})"
            )

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


@dataclass(frozen=True)
class SegmentSpan:
    """An inclusive range of segment indices ``[first, last]``."""

    first: int
    last: int

    def __post_init__(self):
        if self.first < 0 or self.last < self.first:
            raise DataError(f"invalid segment span [{self.first}, {self.last}]")

    @property
    def n_segments(self) -> int:
        return self.last - self.first + 1


@dataclass(frozen=True)
class VideoMeta:
    """Immutable per-video geometry: duration, frame rate, and segment grid.

    ``n_segments`` is derived from ``n_frames`` and ``segment_len``; passing an
    inconsistent value raises.
    """

    video_id: str
    duration_sec: float
    fps: float
    n_frames: int
    segment_len: int = SEGMENT_LEN_FRAMES
    n_segments: int = field(default=-1)

    def __post_init__(self):
        if self.duration_sec <= 0 or not math.isfinite(self.duration_sec):
            raise DataError(f"video '{self.video_id}': duration must be positive")
        if self.fps <= 0 or not math.isfinite(self.fps):
            raise DataError(f"video '{self.video_id}': fps must be positive")
        if self.n_frames < 1:
            raise DataError(f"video '{self.video_id}': n_frames must be >= 1")
        if self.segment_len < 1:
            raise ConfigError(f"segment_len must be >= 1, got {self.segment_len}")
        derived = math.ceil(self.n_frames / self.segment_len)
        if self.n_segments == -1:
            object.__setattr__(self, "n_segments", derived)
        elif self.n_segments != derived:
            raise DataError(
                f"video '{self.video_id}': n_segments {self.n_segments} does not match "
                f"ceil({self.n_frames}/{self.segment_len}) = {derived}"
            )

    @property
    def segment_sec(self) -> float:
        """Duration of one segment in seconds."""
        return self.segment_len / self.fps


def tiou(a: Interval, b: Interval) -> float:
    """Temporal intersection-over-union of two intervals, in [0, 1].

    Symmetric; 0 for disjoint intervals (touching intervals count as
    disjoint under half-open semantics).
    """
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def interval_to_segments(iv: Interval, meta: VideoMeta) -> SegmentSpan:
    """Map a second-space interval to the inclusive span of segments it touches.

    Sub-segment intervals clamp to a single segment. Raises for intervals
    extending past the video end (beyond a 1e-6 s tolerance).
    """
    if iv.end > meta.duration_sec + END_EPSILON:
        raise DataError(
            f"interval [{iv.start}, {iv.end}) out of range for video "
            f"'{meta.video_id}' of duration {meta.duration_sec}"
        )
    scale = meta.fps / meta.segment_len
    first = int(math.floor(iv.start * scale))
    last = int(math.ceil(iv.end * scale)) - 1
    # Clamp both ends so degenerate metas (duration_sec > n_frames/fps) still
    # yield a valid span with last >= first.
    first = min(first, meta.n_segments - 1)
    last = min(last, meta.n_segments - 1)
    last = max(last, first)
    return SegmentSpan(first, last)


def segments_to_interval(span: SegmentSpan, meta: VideoMeta) -> Interval:
    """Inverse grid mapping: the second-space extent of a segment span."""
    if span.last >= meta.n_segments:
        raise DataError(
            f"segment span [{span.first}, {span.last}] out of range for video "
            f"'{meta.video_id}' with {meta.n_segments} segments"
        )
    start = span.first * meta.segment_sec
    end = min(meta.duration_sec, (span.last + 1) * meta.segment_sec)
    return Interval(start, end)
