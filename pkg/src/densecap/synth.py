"""Synthetic corpora: planted feature events with grammar-generated captions.

Each video is a background prototype row repeated over its segment grid;
every event overwrites its segments with a per-topic prototype, then
gaussian noise is added everywhere. Captions come from small per-topic
template grammars, so vocabulary, topics and features are all learnable at
desk scale. Generation is deterministic: every video draws from its own
seed stream, so parallel generation cannot change the output.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .features import DatasetManifest, Event, FeatureSequence, ManifestEntry, write_features, write_manifest
from .timeline import Interval, VideoMeta, interval_to_segments

_PLACEMENT_RETRIES = 100

# Hand-written lexicons for the first topics; later topics get generated words.
_TOPIC_WORDS = [
    ("slices", "stirs", "fries", "onion", "soup", "bread"),
    ("swims", "dives", "floats", "pool", "lake", "river"),
    ("paints", "sketches", "draws", "canvas", "mural", "portrait"),
    ("climbs", "scales", "ascends", "wall", "cliff", "ladder"),
    ("strums", "plays", "tunes", "guitar", "violin", "piano"),
    ("kicks", "dribbles", "passes", "ball", "goal", "field"),
    ("sweeps", "mops", "scrubs", "floor", "window", "carpet"),
    ("juggles", "tosses", "catches", "pins", "rings", "torches"),
]


@dataclass(frozen=True)
class TopicGrammar:
    """Per-topic caption templates: ``a person <verb> the <object>``."""

    verbs: tuple[tuple[str, ...], ...]
    objects: tuple[tuple[str, ...], ...]

    @classmethod
    def default(cls, n_topics: int) -> "TopicGrammar":
        verbs, objects = [], []
        for t in range(n_topics):
            if t < len(_TOPIC_WORDS):
                w = _TOPIC_WORDS[t]
                verbs.append(w[:3])
                objects.append(w[3:])
            else:
                verbs.append(tuple(f"verb{t}{s}" for s in "abc"))
                objects.append(tuple(f"thing{t}{s}" for s in "abc"))
        return cls(verbs=tuple(verbs), objects=tuple(objects))

    @property
    def n_topics(self) -> int:
        return len(self.verbs)

    def caption(self, topic: int, rng: np.random.Generator) -> str:
        verb = self.verbs[topic][int(rng.integers(len(self.verbs[topic])))]
        obj = self.objects[topic][int(rng.integers(len(self.objects[topic])))]
        return f"a person {verb} the {obj}"

    def terminals(self, topic: int | None = None) -> set[str]:
        shared = {"a", "person", "the"}
        if topic is not None:
            return shared | set(self.verbs[topic]) | set(self.objects[topic])
        out = set(shared)
        for t in range(self.n_topics):
            out |= set(self.verbs[t]) | set(self.objects[t])
        return out


@dataclass
class SynthConfig:
    seed: int  # mandatory; every stream derives from it
    n_videos: int = 200
    n_videos_val: int = 50
    duration_range: tuple[float, float] = (30.0, 120.0)
    fps: float = 64.0
    feature_dim: int = 32
    n_topics: int = 8
    events_range: tuple[int, int] = (1, 4)
    mixture_means: tuple[float, ...] = (0.1, 0.3, 0.7)
    mixture_weights: tuple[float, ...] = field(default=())
    mixture_sigma: float = 0.03
    noise_sigma: float = 0.3

    def __post_init__(self):
        if not self.mixture_weights:
            k = len(self.mixture_means)
            self.mixture_weights = tuple(1.0 / k for _ in range(k))
        if len(self.mixture_weights) != len(self.mixture_means):
            raise ConfigError("mixture means and weights must align")
        if abs(sum(self.mixture_weights) - 1.0) > 1e-9:
            raise ConfigError("mixture weights must sum to 1")
        if self.duration_range[0] >= self.duration_range[1]:
            raise ConfigError("duration range must be non-degenerate")
        if self.events_range[0] < 1 or self.events_range[0] > self.events_range[1]:
            raise ConfigError("events range must be a non-empty integer range")
        if any(not 0.0 < m <= 1.0 for m in self.mixture_means):
            raise ConfigError("mixture means must lie in (0, 1]")
        if self.n_topics < 2:
            raise ConfigError("need at least 2 topics")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be >= 0")


def _draw_proportion(cfg: SynthConfig, rng: np.random.Generator) -> float:
    comp = int(rng.choice(len(cfg.mixture_means), p=np.asarray(cfg.mixture_weights)))
    p = rng.normal(cfg.mixture_means[comp], cfg.mixture_sigma)
    return float(np.clip(p, 0.02, 1.0))


def _place_events(
    meta: VideoMeta, proportions: list[float], rng: np.random.Generator
) -> list[Interval] | None:
    """Place events so their segment spans are disjoint with a one-segment gap."""
    intervals: list[Interval] = []
    spans: list[tuple[int, int]] = []
    for p in proportions:
        length = p * meta.duration_sec
        placed = False
        for _ in range(20):
            start = float(rng.uniform(0.0, meta.duration_sec - length))
            iv = Interval(start, start + length)
            span = interval_to_segments(iv, meta)
            if all(span.last < f - 1 or span.first > l + 1 for f, l in spans):
                intervals.append(iv)
                spans.append((span.first, span.last))
                placed = True
                break
        if not placed:
            return None
    return intervals


def _make_video(
    video_id: str,
    cfg: SynthConfig,
    grammar: TopicGrammar,
    background: np.ndarray,
    prototypes: np.ndarray,
    rng: np.random.Generator,
) -> tuple[ManifestEntry, FeatureSequence]:
    duration = float(rng.uniform(*cfg.duration_range))
    n_frames = max(1, int(round(duration * cfg.fps)))
    meta = VideoMeta(video_id=video_id, duration_sec=duration, fps=cfg.fps, n_frames=n_frames)

    n_events = int(rng.integers(cfg.events_range[0], cfg.events_range[1] + 1))
    intervals = None
    for attempt in range(_PLACEMENT_RETRIES):
        want = max(1, n_events - attempt // 10)  # retry with fewer events
        proportions = sorted((_draw_proportion(cfg, rng) for _ in range(want)), reverse=True)
        intervals = _place_events(meta, proportions, rng)
        if intervals is not None:
            break
    if intervals is None:
        raise DataError(f"could not pack events into video '{video_id}'")

    data = np.tile(background, (meta.n_segments, 1)).astype(np.float64)
    events: list[Event] = []
    for iv in sorted(intervals, key=lambda i: i.start):
        topic = int(rng.integers(cfg.n_topics))
        span = interval_to_segments(iv, meta)
        data[span.first : span.last + 1] = prototypes[topic]
        events.append(Event(interval=iv, caption=grammar.caption(topic, rng), topic_id=topic))
    if cfg.noise_sigma > 0:
        data += rng.normal(0.0, cfg.noise_sigma, size=data.shape)
    seq = FeatureSequence(video_id=video_id, data=data.astype(np.float32))
    entry = ManifestEntry(meta=meta, feature_file=f"features/{video_id}.segf", events=events)
    return entry, seq


def generate(
    cfg: SynthConfig, out_dir: str | os.PathLike
) -> tuple[DatasetManifest, DatasetManifest]:
    """Write feature files plus train/val manifests; returns both manifests.

    Layout under ``out_dir``: ``manifest.train.json``, ``manifest.val.json``
    and ``features/*.segf``. Deterministic for a fixed config.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    grammar = TopicGrammar.default(cfg.n_topics)

    proto_rng = np.random.default_rng([cfg.seed, 0])
    background = proto_rng.normal(0.0, 1.0, size=cfg.feature_dim)
    prototypes = proto_rng.normal(0.0, 1.0, size=(cfg.n_topics, cfg.feature_dim))

    def build_split(prefix: str, count: int, stream: int) -> DatasetManifest:
        entries = []
        width = max(4, len(str(max(1, count - 1))))
        for i in range(count):
            rng = np.random.default_rng([cfg.seed, stream, i])
            vid = f"{prefix}_{i:0{width}d}"
            entry, seq = _make_video(vid, cfg, grammar, background, prototypes, rng)
            write_features(seq, os.path.join(out_dir, entry.feature_file))
            entries.append(entry)
        return DatasetManifest(entries=entries)

    train = build_split("train", cfg.n_videos, stream=1)
    val = build_split("val", cfg.n_videos_val, stream=2)
    write_manifest(train, os.path.join(out_dir, "manifest.train.json"))
    write_manifest(val, os.path.join(out_dir, "manifest.val.json"))
    return train, val


def event_length_proportions(manifest: DatasetManifest) -> list[float]:
    """Groundtruth event lengths relative to their video's duration."""
    out = []
    for entry in manifest:
        for ev in entry.events:
            out.append(ev.interval.duration / entry.meta.duration_sec)
    if not out:
        raise DataError("manifest contains no events")
    return out
