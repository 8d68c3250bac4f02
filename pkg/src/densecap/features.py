"""Per-segment feature matrices, dataset manifests, pooling, and context summaries.

Feature files use a minimal fixed binary layout (magic ``SEGF``, version,
T, D as little-endian u32, then T*D float32 little-endian values, row-major).
Manifests are UTF-8 JSON arrays; see :func:`read_manifest`.

The bidirectional context summary is a deterministic stand-in for a learned
sequence encoder: an exponential moving average run once forward and once
backward over the segment axis.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .ioutil import atomic_path
from .timeline import Interval, SegmentSpan, VideoMeta

SEGF_MAGIC = b"SEGF"
SEGF_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, T, D

DEFAULT_CONTEXT_DECAY = 0.9


@dataclass
class FeatureSequence:
    """A T x D matrix of per-segment features for one video (float32, finite)."""

    video_id: str
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(
                f"feature matrix for '{self.video_id}' must be 2-D and non-empty, "
                f"got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise DataError(f"feature matrix for '{self.video_id}' contains non-finite values")
        self.data = arr

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


@dataclass
class ContextSequence:
    """Forward and backward running context, same shape as the source features."""

    video_id: str
    forward: np.ndarray
    backward: np.ndarray

    def averaged(self) -> np.ndarray:
        """Elementwise mean of the forward and backward summaries."""
        return 0.5 * (self.forward + self.backward)


@dataclass
class Event:
    """One groundtruth event: a span, its caption, and an optional topic label."""

    interval: Interval
    caption: str
    topic_id: int | None = None


@dataclass
class ManifestEntry:
    meta: VideoMeta
    feature_file: str
    events: list[Event] = field(default_factory=list)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def captions(self) -> list[str]:
        return [ev.caption for entry in self.entries for ev in entry.events]


def write_features(seq: FeatureSequence, path: str | os.PathLike) -> None:
    """Serialize a feature matrix to the SEGF binary layout."""
    t, d = seq.data.shape
    payload = np.ascontiguousarray(seq.data, dtype="<f4").tobytes()
    with atomic_path(path) as tmp, open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(SEGF_MAGIC, SEGF_VERSION, t, d))
        fh.write(payload)


def read_features(path: str | os.PathLike, video_id: str | None = None) -> FeatureSequence:
    """Read a SEGF file back into a FeatureSequence.

    Raises FormatError (with the byte offset of the problem) on magic or
    version mismatch, truncated payload, or non-finite values.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read feature file '{path}': {exc}") from exc
    if len(blob) < _HEADER.size:
        raise FormatError(f"'{path}': truncated header", offset=len(blob))
    magic, version, t, d = _HEADER.unpack_from(blob, 0)
    if magic != SEGF_MAGIC:
        raise FormatError(f"'{path}': bad magic {magic!r}", offset=0)
    if version != SEGF_VERSION:
        raise FormatError(f"'{path}': unsupported version {version}", offset=4)
    if t < 1 or d < 1:
        raise FormatError(f"'{path}': invalid dimensions T={t}, D={d}", offset=8)
    expected = _HEADER.size + 4 * t * d
    if len(blob) < expected:
        raise FormatError(
            f"'{path}': payload truncated, declared {t}x{d} needs {expected} bytes "
            f"but file has {len(blob)}",
            offset=len(blob),
        )
    if len(blob) > expected:
        raise FormatError(f"'{path}': {len(blob) - expected} trailing bytes", offset=expected)
    flat = np.frombuffer(blob, dtype="<f4", count=t * d, offset=_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FormatError(
            f"'{path}': non-finite value at element {bad[0]}",
            offset=_HEADER.size + 4 * int(bad[0]),
        )
    name = video_id if video_id is not None else os.path.splitext(os.path.basename(path))[0]
    return FeatureSequence(video_id=name, data=flat.reshape(t, d).copy())


def mean_pool(seq: FeatureSequence, span: SegmentSpan) -> np.ndarray:
    """Arithmetic mean of feature rows ``first..last`` inclusive (float64)."""
    if span.last >= seq.n_rows:
        raise DataError(
            f"span [{span.first}, {span.last}] out of range for '{seq.video_id}' "
            f"with {seq.n_rows} rows"
        )
    return seq.data[span.first : span.last + 1].mean(axis=0, dtype=np.float64)


def context_summary(seq: FeatureSequence, decay: float = DEFAULT_CONTEXT_DECAY) -> ContextSequence:
    """Bidirectional exponential-moving-average context for each segment.

    ``forward[t] = decay * forward[t-1] + (1-decay) * data[t]`` with
    ``forward[0] = data[0]``; the backward pass mirrors it from the end.
    """
    if not 0.0 < decay < 1.0:
        raise ConfigError(f"context decay must lie in (0, 1), got {decay}")
    data = seq.data.astype(np.float64)
    t = data.shape[0]
    fwd = np.empty_like(data)
    bwd = np.empty_like(data)
    fwd[0] = data[0]
    for i in range(1, t):
        fwd[i] = decay * fwd[i - 1] + (1.0 - decay) * data[i]
    bwd[t - 1] = data[t - 1]
    for i in range(t - 2, -1, -1):
        bwd[i] = decay * bwd[i + 1] + (1.0 - decay) * data[i]
    return ContextSequence(video_id=seq.video_id, forward=fwd, backward=bwd)


def _parse_entry(obj: dict, index: int, manifest_dir: str) -> ManifestEntry:
    try:
        meta = VideoMeta(
            video_id=str(obj["video_id"]),
            duration_sec=float(obj["duration_sec"]),
            fps=float(obj["fps"]),
            n_frames=int(obj["n_frames"]),
        )
        feature_file = str(obj["feature_file"])
        raw_events = obj["events"]
    except KeyError as exc:
        raise DataError(f"manifest entry {index}: missing key {exc}") from exc
    events = []
    for j, ev in enumerate(raw_events):
        where = f"manifest entry {index} ('{meta.video_id}'), event {j}"
        try:
            start, end = float(ev["start"]), float(ev["end"])
            caption = str(ev["caption"])
        except KeyError as exc:
            raise DataError(f"{where}: missing key {exc}") from exc
        iv = Interval(start, end)
        if iv.end > meta.duration_sec + 1e-6:
            raise DataError(
                f"{where}: interval [{iv.start}, {iv.end}) exceeds duration "
                f"{meta.duration_sec}"
            )
        if not caption.strip():
            raise DataError(f"{where}: empty caption")
        topic_id = ev.get("topic_id")
        if topic_id is not None:
            topic_id = int(topic_id)
            if topic_id < 0:
                raise DataError(f"{where}: negative topic_id {topic_id}")
        events.append(Event(interval=iv, caption=caption, topic_id=topic_id))
    return ManifestEntry(meta=meta, feature_file=feature_file, events=events)


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load and validate a dataset manifest (JSON array of video entries)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest '{path}' is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise FormatError(f"manifest '{path}': top level must be an array")
    manifest_dir = os.path.dirname(os.fspath(path))
    entries = [_parse_entry(obj, i, manifest_dir) for i, obj in enumerate(raw)]
    ids = [e.meta.video_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"manifest '{path}': duplicate video ids")
    return DatasetManifest(entries=entries)


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    out = []
    for entry in manifest.entries:
        events = []
        for ev in entry.events:
            obj = {
                "start": float(ev.interval.start),
                "end": float(ev.interval.end),
                "caption": ev.caption,
            }
            if ev.topic_id is not None:
                obj["topic_id"] = int(ev.topic_id)
            events.append(obj)
        out.append(
            {
                "video_id": entry.meta.video_id,
                "duration_sec": float(entry.meta.duration_sec),
                "fps": float(entry.meta.fps),
                "n_frames": int(entry.meta.n_frames),
                "feature_file": entry.feature_file,
                "events": events,
            }
        )
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")


def load_features_for(entry: ManifestEntry, manifest_path: str | os.PathLike) -> FeatureSequence:
    """Resolve an entry's feature file relative to the manifest and load it.

    The row count must match the video's segment grid.
    """
    base = os.path.dirname(os.fspath(manifest_path))
    path = os.path.join(base, entry.feature_file)
    if not os.path.exists(path):
        raise DataError(
            f"missing feature file for video '{entry.meta.video_id}': {path}"
        )
    seq = read_features(path, video_id=entry.meta.video_id)
    if seq.n_rows != entry.meta.n_segments:
        raise DataError(
            f"video '{entry.meta.video_id}': feature file has {seq.n_rows} rows "
            f"but the segment grid has {entry.meta.n_segments}"
        )
    return seq
