"""Learned proposal ranking: feature assembly, a two-layer scorer, training.

Each candidate is described by five feature groups plus location:
the mean-pooled rows inside its span, mean context summaries strictly left
and right of the span, single-segment feature differences across each
boundary, and (center/length, duration/length). A two-layer feed-forward
network maps the concatenation to a keep-probability ``s_p``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .ioutil import atomic_path
from .features import ContextSequence, FeatureSequence
from .numerics import check_finite, relu, sigmoid
from .optim import Adam
from .proposals import CandidateProposal, Label
from .timeline import Interval, VideoMeta, interval_to_segments

DEFAULT_HIDDEN = 128
DEFAULT_THRESHOLD = 0.5


@dataclass
class RankingFeatures:
    """The assembled feature groups for one candidate (all float64)."""

    internal: np.ndarray
    external_left: np.ndarray
    external_right: np.ndarray
    boundary_start: np.ndarray
    boundary_end: np.ndarray
    location: np.ndarray  # (center / l, duration / l)

    def concat(self) -> np.ndarray:
        return np.concatenate(
            [
                self.internal,
                self.external_left,
                self.external_right,
                self.boundary_start,
                self.boundary_end,
                self.location,
            ]
        )


@dataclass
class ScoredProposal:
    interval: Interval
    s_p: float
    features: RankingFeatures | None = None


def assemble_features(
    seq: FeatureSequence,
    ctx: ContextSequence,
    cand: CandidateProposal,
    meta: VideoMeta,
) -> RankingFeatures:
    """Build the ranking features for one candidate proposal."""
    span = interval_to_segments(cand.interval, meta)
    data = seq.data.astype(np.float64)
    t, d = data.shape
    if t != meta.n_segments:
        raise DataError(
            f"video '{meta.video_id}': feature rows {t} != segment grid {meta.n_segments}"
        )
    ctx_rows = ctx.averaged()
    internal = data[span.first : span.last + 1].mean(axis=0)
    zero = np.zeros(d)
    external_left = ctx_rows[: span.first].mean(axis=0) if span.first > 0 else zero
    external_right = ctx_rows[span.last + 1 :].mean(axis=0) if span.last < t - 1 else zero
    boundary_start = data[span.first] - data[span.first - 1] if span.first > 0 else zero
    boundary_end = data[span.last] - data[span.last + 1] if span.last < t - 1 else zero
    length = meta.duration_sec
    location = np.array(
        [cand.interval.center / length, cand.interval.duration / length], dtype=np.float64
    )
    return RankingFeatures(
        internal=internal,
        external_left=external_left,
        external_right=external_right,
        boundary_start=boundary_start,
        boundary_end=boundary_end,
        location=location,
    )


def assemble_feature_matrix(
    seq: FeatureSequence,
    ctx: ContextSequence,
    cands: list[CandidateProposal],
    meta: VideoMeta,
) -> np.ndarray:
    """Vectorized assembly of all candidates of one video, shape (N, 5D + 2).

    Equivalent to stacking :func:`assemble_features` concatenations; kept
    separate so per-candidate semantics stay obvious while bulk scoring is
    a handful of array operations.
    """
    data = seq.data.astype(np.float64)
    t, d = data.shape
    if not cands:
        return np.zeros((0, 5 * d + 2))
    ctx_rows = ctx.averaged()
    csum = np.vstack([np.zeros((1, d)), np.cumsum(data, axis=0)])
    ctx_csum = np.vstack([np.zeros((1, d)), np.cumsum(ctx_rows, axis=0)])

    spans = [interval_to_segments(c.interval, meta) for c in cands]
    first = np.array([s.first for s in spans])
    last = np.array([s.last for s in spans])
    n_in = (last - first + 1).astype(np.float64)

    internal = (csum[last + 1] - csum[first]) / n_in[:, None]
    left_n = first.astype(np.float64)
    right_n = (t - 1 - last).astype(np.float64)
    with np.errstate(invalid="ignore"):
        external_left = np.where(
            (left_n > 0)[:, None], ctx_csum[first] / np.maximum(left_n, 1.0)[:, None], 0.0
        )
        external_right = np.where(
            (right_n > 0)[:, None],
            (ctx_csum[t] - ctx_csum[last + 1]) / np.maximum(right_n, 1.0)[:, None],
            0.0,
        )
    boundary_start = np.where(
        (first > 0)[:, None], data[first] - data[np.maximum(first - 1, 0)], 0.0
    )
    boundary_end = np.where(
        (last < t - 1)[:, None], data[last] - data[np.minimum(last + 1, t - 1)], 0.0
    )
    length = meta.duration_sec
    centers = np.array([c.interval.center for c in cands]) / length
    durations = np.array([c.interval.duration for c in cands]) / length
    return np.hstack(
        [
            internal,
            external_left,
            external_right,
            boundary_start,
            boundary_end,
            centers[:, None],
            durations[:, None],
        ]
    )


@dataclass
class RankerModel:
    """Two-layer feed-forward scorer: sigmoid(W2 . relu(W1 x + b1) + b2)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @classmethod
    def init(cls, input_dim: int, hidden: int = DEFAULT_HIDDEN, rng: np.random.Generator | None = None) -> "RankerModel":
        if hidden < 1:
            raise ConfigError(f"hidden width must be >= 1, got {hidden}")
        rng = rng if rng is not None else np.random.default_rng(0)
        w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(hidden, input_dim))
        w2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=hidden)
        return cls(W1=w1, b1=np.zeros(hidden), W2=w2, b2=0.0)

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2}

    def save(self, path: str | os.PathLike) -> None:
        obj = {
            "H": int(self.hidden),
            "D": int((self.input_dim - 2) // 5),
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": float(self.b2),
        }
        with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
            json.dump(obj, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RankerModel":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        model = cls(
            W1=np.asarray(obj["W1"], dtype=np.float64),
            b1=np.asarray(obj["b1"], dtype=np.float64),
            W2=np.asarray(obj["W2"], dtype=np.float64),
            b2=float(obj["b2"]),
        )
        if model.W1.shape[0] != obj["H"]:
            raise DataError(f"ranker checkpoint '{path}': H does not match W1")
        return model


def ranker_forward(model: RankerModel, feats: RankingFeatures | np.ndarray) -> float:
    """Score one candidate; returns s_p in (0, 1)."""
    x = feats.concat() if isinstance(feats, RankingFeatures) else np.asarray(feats, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise DataError(f"feature length {x.shape[-1]} != model input {model.input_dim}")
    hidden = relu(model.W1 @ x + model.b1)
    z = float(model.W2 @ hidden + model.b2)
    check_finite(np.asarray(z), "ranker activation")
    return float(sigmoid(z))


def ranker_forward_batch(model: RankerModel, x: np.ndarray) -> np.ndarray:
    """Score a (N, input_dim) matrix of assembled features."""
    hidden = relu(x @ model.W1.T + model.b1)
    z = hidden @ model.W2 + model.b2
    check_finite(z, "ranker activation")
    return sigmoid(z)


def bce_loss_and_grads(
    model: RankerModel, x: np.ndarray, y: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy over a batch and its parameter gradients."""
    n = x.shape[0]
    a = x @ model.W1.T + model.b1
    h = relu(a)
    z = h @ model.W2 + model.b2
    p = sigmoid(z)
    eps = 1e-12
    loss = float(-np.mean(y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps)))
    dz = (p - y) / n
    grads = {
        "W2": dz @ h,
        "b2": np.asarray(dz.sum()),
        "W1": ((dz[:, None] * model.W2[None, :]) * (a > 0)).T @ x,
        "b1": ((dz[:, None] * model.W2[None, :]) * (a > 0)).sum(axis=0),
    }
    return loss, grads


@dataclass
class RankerTrainConfig:
    hidden: int = DEFAULT_HIDDEN
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0


def train_ranker(
    features: np.ndarray,
    labels: list[Label] | np.ndarray,
    config: RankerTrainConfig | None = None,
) -> tuple[RankerModel, list[float]]:
    """Fit the scorer on labeled candidates; ignore-labeled rows are dropped.

    Batches are balanced 1:1 by walking the majority class once per epoch and
    resampling the minority class with replacement. Deterministic under the
    config seed. Returns the model and per-epoch mean losses.
    """
    cfg = config or RankerTrainConfig()
    if isinstance(labels, np.ndarray) and labels.dtype != object:
        is_pos = labels.astype(bool)
        keep = np.ones(len(labels), dtype=bool)
    else:
        lab = list(labels)
        keep = np.array([l in (Label.POSITIVE, Label.NEGATIVE) for l in lab])
        is_pos = np.array([l == Label.POSITIVE for l in lab])
    x = np.asarray(features, dtype=np.float64)[keep]
    is_pos = is_pos[keep]
    pos = x[is_pos]
    neg = x[~is_pos]
    if len(pos) == 0 or len(neg) == 0:
        raise DataError(
            f"ranker training needs both classes; got {len(pos)} positive and "
            f"{len(neg)} negative samples"
        )

    rng = np.random.default_rng([cfg.seed, 0x52414E4B])
    model = RankerModel.init(x.shape[1], hidden=cfg.hidden, rng=rng)
    opt = Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    half = max(1, cfg.batch_size // 2)
    major, minor = (pos, neg) if len(pos) >= len(neg) else (neg, pos)
    major_is_pos = len(pos) >= len(neg)
    steps = max(1, int(np.ceil(len(x) / cfg.batch_size)))

    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(major))
        losses = []
        for s in range(steps):
            take = order[(s * half) % len(major) : (s * half) % len(major) + half]
            if len(take) < half:  # wrap around the shuffled majority
                take = np.concatenate([take, order[: half - len(take)]])
            mino = rng.integers(0, len(minor), size=half)
            xb = np.vstack([major[take], minor[mino]])
            yb = np.empty(len(xb))
            yb[:half] = 1.0 if major_is_pos else 0.0
            yb[half:] = 0.0 if major_is_pos else 1.0
            loss, grads = bce_loss_and_grads(model, xb, yb)
            params = model.params()
            params["b2"] = np.asarray(model.b2, dtype=np.float64)
            opt.step(params, grads)
            model.b2 = float(params["b2"])
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return model, history


def score_and_filter(
    model: RankerModel,
    cands: list[CandidateProposal],
    features: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[ScoredProposal]:
    """Keep candidates with s_p > threshold, sorted by score descending.

    Ties break by earlier start, then shorter duration, so output order is
    total and reproducible.
    """
    if len(cands) != len(features):
        raise DataError("candidate list and feature matrix disagree in length")
    if not cands:
        return []
    scores = ranker_forward_batch(model, np.asarray(features, dtype=np.float64))
    kept = [
        ScoredProposal(interval=c.interval, s_p=float(s))
        for c, s in zip(cands, scores)
        if s > threshold
    ]
    kept.sort(key=lambda sp: (-sp.s_p, sp.interval.start, sp.interval.duration))
    return kept


def write_scored(path: str | os.PathLike, scored_by_video: dict[str, list[ScoredProposal]]) -> None:
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        for vid in scored_by_video:
            for sp in scored_by_video[vid]:
                fh.write(
                    json.dumps(
                        {
                            "video_id": vid,
                            "start": float(sp.interval.start),
                            "end": float(sp.interval.end),
                            "s_p": float(sp.s_p),
                        }
                    )
                )
                fh.write("\n")


def read_scored(path: str | os.PathLike) -> dict[str, list[ScoredProposal]]:
    by_video: dict[str, list[ScoredProposal]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sp = ScoredProposal(
                    interval=Interval(float(obj["start"]), float(obj["end"])),
                    s_p=float(obj["s_p"]),
                )
                vid = str(obj["video_id"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"'{path}' line {line_no + 1}: {exc}") from exc
            by_video.setdefault(vid, []).append(sp)
    return by_video
