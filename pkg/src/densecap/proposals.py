"""Sliding-window candidate proposals from clustered event-length proportions.

The window bank holds K length proportions (cluster centers of groundtruth
event length / video length). Per video, each center ``p`` yields windows of
length ``p * duration`` slid with stride ``length / 4``; candidates are then
labeled positive/negative/ignore by their best tIoU against groundtruth.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError
from .ioutil import atomic_path
from .timeline import Interval, VideoMeta, interval_to_segments, tiou

DEFAULT_K = 20
POSITIVE_TIOU = 0.7
NEGATIVE_TIOU = 0.5
STRIDE_DIVISOR = 4
MIN_KEEP_FRACTION = 0.5  # clipped windows shorter than this fraction of w are dropped

KMEANS_MAX_ITERS = 100


class Label(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORE = "ignore"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class WindowBank:
    """K window-length proportions in (0, 1], sorted ascending and distinct."""

    centers: tuple[float, ...]

    def __post_init__(self):
        if not self.centers:
            raise ConfigError("window bank needs at least one center")
        for c in self.centers:
            if not 0.0 < c <= 1.0:
                raise ConfigError(f"window proportion {c} outside (0, 1]")
        if list(self.centers) != sorted(set(self.centers)):
            raise ConfigError("window bank centers must be sorted and distinct")

    @property
    def k(self) -> int:
        return len(self.centers)

    def to_json(self, path: str | os.PathLike) -> None:
        with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"K": self.k, "centers": [float(c) for c in self.centers]}, fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "WindowBank":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        centers = tuple(float(c) for c in obj["centers"])
        if obj.get("K") != len(centers):
            raise DataError(f"window bank '{path}': K does not match centers")
        return cls(centers=centers)


@dataclass
class CandidateProposal:
    """A window candidate with its source proportion and (optional) tIoU label."""

    interval: Interval
    window_proportion: float
    label: Label = Label.UNLABELED
    best_tiou: float = 0.0


def cluster_proportions(proportions, k: int = DEFAULT_K) -> WindowBank:
    """1-D k-means (Lloyd) over event-length proportions, deterministic.

    Centers start at the ``(i + 0.5) / k`` quantiles of the sorted data; ties
    in assignment go to the lower center index; an empty cluster is re-seeded
    at the point currently farthest from its center. Iterates to an
    assignment fixpoint or 100 rounds.
    """
    data = np.asarray(list(proportions), dtype=np.float64)
    if data.size == 0:
        raise DataError("no proportions to cluster")
    if np.any(data <= 0.0) or np.any(data > 1.0):
        raise DataError("all proportions must lie in (0, 1]")
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    n_distinct = np.unique(data).size
    if n_distinct < k:
        raise ConfigError(
            f"cannot fit {k} clusters on {n_distinct} distinct proportions; "
            f"use K <= {n_distinct}"
        )

    sorted_data = np.sort(data)
    quantiles = (np.arange(k) + 0.5) / k
    centers = np.quantile(sorted_data, quantiles)

    assign = np.full(data.size, -1, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITERS):
        # Nearest center, ties to the lower index (argmin picks the first).
        dist = np.abs(data[:, None] - centers[None, :])
        new_assign = np.argmin(dist, axis=1)
        point_dist = dist[np.arange(data.size), new_assign]
        for j in range(k):
            members = new_assign == j
            if members.any():
                centers[j] = data[members].mean()
            else:
                far = int(np.argmax(point_dist))
                centers[j] = data[far]
                new_assign[far] = j
                point_dist[far] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    centers = np.sort(centers)
    if np.unique(centers).size != k:
        raise ConfigError(
            f"clustering collapsed to fewer than {k} distinct centers; use a smaller K"
        )
    return WindowBank(centers=tuple(float(c) for c in centers))


def generate_candidates(meta: VideoMeta, bank: WindowBank) -> list[CandidateProposal]:
    """Enumerate sliding-window candidates for one video.

    For each proportion ``p``: window length ``w = p * duration``, starts at
    multiples of ``w/4`` below the duration, windows clipped to the video end.
    Clipped windows shorter than ``w/2`` are dropped; candidates identical
    after segment alignment are deduplicated (first occurrence, ordered by
    proportion then start, wins).
    """
    length = meta.duration_sec
    seen_spans = set()
    out: list[CandidateProposal] = []
    for p in bank.centers:
        w = p * length
        stride = w / STRIDE_DIVISOR
        i = 0
        while True:
            start = i * stride
            if start >= length:
                break
            end = min(start + w, length)
            i += 1
            if end - start < MIN_KEEP_FRACTION * w:
                continue
            iv = Interval(start, end)
            span = interval_to_segments(iv, meta)
            key = (span.first, span.last)
            if key in seen_spans:
                continue
            seen_spans.add(key)
            out.append(CandidateProposal(interval=iv, window_proportion=p))
    return out


def label_candidates(
    cands: list[CandidateProposal],
    groundtruth: list[Interval],
    pos_tiou: float = POSITIVE_TIOU,
    neg_tiou: float = NEGATIVE_TIOU,
) -> list[CandidateProposal]:
    """Assign tIoU labels in place: positive >= 0.7, negative < 0.5, else ignore.

    With no groundtruth every candidate is negative (best_tiou 0).
    """
    if neg_tiou > pos_tiou:
        raise ConfigError(f"negative threshold {neg_tiou} exceeds positive {pos_tiou}")
    for cand in cands:
        best = 0.0
        for gt in groundtruth:
            best = max(best, tiou(cand.interval, gt))
        cand.best_tiou = best
        if best >= pos_tiou:
            cand.label = Label.POSITIVE
        elif best < neg_tiou:
            cand.label = Label.NEGATIVE
        else:
            cand.label = Label.IGNORE
    return cands


def candidate_recall(
    candidates_by_video: dict[str, list[CandidateProposal]],
    groundtruth_by_video: dict[str, list[Interval]],
    threshold: float,
) -> float:
    """Fraction of groundtruth events covered by some candidate at tIoU >= threshold."""
    covered = 0
    total = 0
    for vid, gts in groundtruth_by_video.items():
        cands = candidates_by_video.get(vid, [])
        for gt in gts:
            total += 1
            if any(tiou(c.interval, gt) >= threshold for c in cands):
                covered += 1
    if total == 0:
        raise DataError("no groundtruth events to measure recall against")
    return covered / total


def write_candidates(
    path: str | os.PathLike, cands_by_video: dict[str, list[CandidateProposal]]
) -> None:
    """Dump labeled candidates as JSON lines, grouped by video."""
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        for video_id, cands in cands_by_video.items():
            for c in cands:
                fh.write(
                    json.dumps(
                        {
                            "video_id": video_id,
                            "start": float(c.interval.start),
                            "end": float(c.interval.end),
                            "best_tiou": float(c.best_tiou),
                            "label": c.label.value,
                        }
                    )
                )
                fh.write("\n")


def read_candidates(path: str | os.PathLike) -> dict[str, list[CandidateProposal]]:
    """Read a candidate JSONL dump back, grouped by video id."""
    by_video: dict[str, list[CandidateProposal]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                cand = CandidateProposal(
                    interval=Interval(float(obj["start"]), float(obj["end"])),
                    window_proportion=float(obj.get("window_proportion", 0.0)),
                    label=Label(obj["label"]),
                    best_tiou=float(obj["best_tiou"]),
                )
                vid = str(obj["video_id"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"'{path}' line {line_no + 1}: {exc}") from exc
            by_video.setdefault(vid, []).append(cand)
    return by_video
