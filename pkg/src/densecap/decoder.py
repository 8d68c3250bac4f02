"""Caption decoders: a recurrent cell with three conditioning variants.

Every decoder shares the same skeleton. At step t the cell consumes the
embedding of the previous token and its hidden state,

    h_t = tanh(W_h h_{t-1} + W_x E[y_{t-1}] + b_h),

then a conditioning vector ``c_t`` is formed from the proposal's segment
features and the word distribution is ``softmax(W_o [h_t; c_t] + b_o)``.
The variants differ only in ``c_t``:

* ``vanilla``   - the mean-pooled span features (constant per proposal);
* ``attention`` - a bilinear attention average over span rows, with scores
  ``h_{t-1}^T W_a f_i``;
* ``topic``     - the mean pool concatenated with a predicted topic
  distribution (also constant per proposal).

Decoding utilities (greedy, per-step ensembling, beam search) operate on
lists of models so heterogeneous variants can vote on every word.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .ioutil import atomic_path
from .features import ContextSequence, FeatureSequence
from .numerics import check_finite, softmax
from .timeline import SegmentSpan

VARIANTS = ("vanilla", "attention", "topic")

DEFAULT_EMBED = 64
DEFAULT_HIDDEN = 128
DEFAULT_MAX_LEN = 20
DEFAULT_BEAM = 5


@dataclass
class TopicPredictor:
    """Single-layer softmax classifier over mean-pooled span features."""

    W_t: np.ndarray  # (n_topics, D)
    b_t: np.ndarray  # (n_topics,)

    @property
    def n_topics(self) -> int:
        return self.W_t.shape[0]

    @classmethod
    def init(cls, feature_dim: int, n_topics: int, rng: np.random.Generator) -> "TopicPredictor":
        if n_topics < 2:
            raise ConfigError(f"need at least 2 topics, got {n_topics}")
        return cls(
            W_t=rng.normal(0.0, 1.0 / math.sqrt(feature_dim), size=(n_topics, feature_dim)),
            b_t=np.zeros(n_topics),
        )

    def predict(self, pooled: np.ndarray) -> np.ndarray:
        """Topic probability distribution for one pooled feature vector."""
        return softmax(self.W_t @ np.asarray(pooled, dtype=np.float64) + self.b_t)


@dataclass
class SpanContext:
    """Per-proposal conditioning inputs: the row pool, its mean, topic probs."""

    pool: np.ndarray  # (S, D) feature rows visible to the decoder
    mean: np.ndarray  # (D,)
    topic_dist: np.ndarray | None = None


@dataclass
class DecoderModel:
    variant: str
    params: dict[str, np.ndarray]  # E, W_h, W_x, b_h, W_o, b_o [, W_a]
    feature_dim: int
    topic: TopicPredictor | None = None
    use_boundary_context: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown decoder variant '{self.variant}'")
        if self.variant == "topic" and self.topic is None:
            raise ConfigError("topic variant requires a TopicPredictor")

    @property
    def vocab_size(self) -> int:
        return self.params["E"].shape[0]

    @property
    def d_embed(self) -> int:
        return self.params["E"].shape[1]

    @property
    def d_hidden(self) -> int:
        return self.params["W_h"].shape[0]

    @property
    def d_cond(self) -> int:
        return self.params["W_o"].shape[1] - self.d_hidden

    @classmethod
    def init(
        cls,
        variant: str,
        vocab_size: int,
        feature_dim: int,
        d_embed: int = DEFAULT_EMBED,
        d_hidden: int = DEFAULT_HIDDEN,
        n_topics: int | None = None,
        topic: TopicPredictor | None = None,
        rng: np.random.Generator | None = None,
        use_boundary_context: bool = False,
    ) -> "DecoderModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        if variant == "topic":
            if topic is None:
                if n_topics is None:
                    raise ConfigError("topic variant needs n_topics or a TopicPredictor")
                topic = TopicPredictor.init(feature_dim, n_topics, rng)
            d_cond = feature_dim + topic.n_topics
        else:
            topic = None
            d_cond = feature_dim
        params = {
            "E": rng.normal(0.0, 0.1, size=(vocab_size, d_embed)),
            "W_h": rng.normal(0.0, 1.0 / math.sqrt(d_hidden), size=(d_hidden, d_hidden)),
            "W_x": rng.normal(0.0, 1.0 / math.sqrt(d_embed), size=(d_hidden, d_embed)),
            "b_h": np.zeros(d_hidden),
            "W_o": rng.normal(0.0, 1.0 / math.sqrt(d_hidden + d_cond), size=(vocab_size, d_hidden + d_cond)),
            "b_o": np.zeros(vocab_size),
        }
        if variant == "attention":
            params["W_a"] = rng.normal(0.0, 1.0 / math.sqrt(d_hidden), size=(d_hidden, feature_dim))
        return cls(
            variant=variant,
            params=params,
            feature_dim=feature_dim,
            topic=topic,
            use_boundary_context=use_boundary_context,
        )

    def copy(self) -> "DecoderModel":
        return DecoderModel(
            variant=self.variant,
            params={k: v.copy() for k, v in self.params.items()},
            feature_dim=self.feature_dim,
            topic=None
            if self.topic is None
            else TopicPredictor(W_t=self.topic.W_t.copy(), b_t=self.topic.b_t.copy()),
            use_boundary_context=self.use_boundary_context,
        )

    def save(self, path: str | os.PathLike) -> None:
        params = dict(self.params)
        if self.topic is not None:
            params["W_t"] = self.topic.W_t
            params["b_t"] = self.topic.b_t
        obj = {
            "variant": self.variant,
            "feature_dim": int(self.feature_dim),
            "boundary_context": bool(self.use_boundary_context),
            "shapes": {k: list(v.shape) for k, v in params.items()},
            "params": {k: v.ravel().tolist() for k, v in params.items()},
        }
        with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
            json.dump(obj, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DecoderModel":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        arrays = {}
        for name, shape in obj["shapes"].items():
            flat = np.asarray(obj["params"][name], dtype=np.float64)
            if flat.size != int(np.prod(shape)):
                raise DataError(f"checkpoint '{path}': parameter {name} has wrong size")
            arrays[name] = flat.reshape(shape)
        topic = None
        if "W_t" in arrays:
            topic = TopicPredictor(W_t=arrays.pop("W_t"), b_t=arrays.pop("b_t"))
        return cls(
            variant=str(obj["variant"]),
            params=arrays,
            feature_dim=int(obj["feature_dim"]),
            topic=topic,
            use_boundary_context=bool(obj.get("boundary_context", False)),
        )


def make_span_context(
    model: DecoderModel,
    seq: FeatureSequence,
    span: SegmentSpan,
    ctx: ContextSequence | None = None,
) -> SpanContext:
    """Assemble the conditioning inputs of one proposal for one model."""
    rows = seq.data[span.first : span.last + 1].astype(np.float64)
    if model.use_boundary_context:
        if ctx is None:
            raise DataError("boundary-context conditioning needs a ContextSequence")
        rows = np.vstack([rows, ctx.forward[span.last], ctx.backward[span.first]])
    mean = rows.mean(axis=0)
    topic_dist = model.topic.predict(mean) if model.variant == "topic" else None
    return SpanContext(pool=rows, mean=mean, topic_dist=topic_dist)


def conditioning_vector(
    model: DecoderModel, cond: SpanContext, h_prev: np.ndarray
) -> np.ndarray:
    """The conditioning input c for one step; h_prev may be (d_h,) or (B, d_h)."""
    batched = h_prev.ndim == 2
    if model.variant == "vanilla":
        c = cond.mean
        return np.broadcast_to(c, (h_prev.shape[0], c.shape[0])) if batched else c
    if model.variant == "topic":
        c = np.concatenate([cond.mean, cond.topic_dist])
        return np.broadcast_to(c, (h_prev.shape[0], c.shape[0])) if batched else c
    # attention: bilinear scores against every pooled row
    scores = (h_prev @ model.params["W_a"]) @ cond.pool.T
    alpha = softmax(scores, axis=-1)
    return alpha @ cond.pool


def decode_step(
    model: DecoderModel,
    h_prev: np.ndarray,
    prev_token: int | np.ndarray,
    cond: SpanContext,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance the recurrent state one token and return (h, word distribution).

    Accepts a single state ``(d_h,)`` with a scalar token or a batch
    ``(B, d_h)`` with a token array; shapes of the outputs match.
    """
    p = model.params
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = p["E"][prev_token]
    h = np.tanh(h_prev @ p["W_h"].T + x @ p["W_x"].T + p["b_h"])
    c = conditioning_vector(model, cond, h_prev)
    u = np.concatenate([h, c], axis=-1)
    logits = u @ p["W_o"].T + p["b_o"]
    check_finite(logits, "decoder logits")
    return h, softmax(logits, axis=-1)


def initial_state(model: DecoderModel, batch: int | None = None) -> np.ndarray:
    if batch is None:
        return np.zeros(model.d_hidden)
    return np.zeros((batch, model.d_hidden))


def _check_ensemble(models: list[DecoderModel]) -> None:
    if not models:
        raise DataError("ensemble needs at least one model")
    v = models[0].vocab_size
    if any(m.vocab_size != v for m in models):
        raise DataError("ensemble models disagree on vocabulary size")


def ensemble_step(
    models: list[DecoderModel],
    states: list[np.ndarray],
    prev_token: int | np.ndarray,
    conds: list[SpanContext],
) -> tuple[list[np.ndarray], np.ndarray]:
    """Advance every model independently and average their word distributions."""
    _check_ensemble(models)
    if not (len(models) == len(states) == len(conds)):
        raise DataError("models, states and conditioning inputs must align")
    new_states = []
    dist = None
    for model, h, cond in zip(models, states, conds):
        h_next, d = decode_step(model, h, prev_token, cond)
        new_states.append(h_next)
        dist = d if dist is None else dist + d
    return new_states, dist / len(models)


@dataclass
class CaptionHypothesis:
    """A decoded caption: token ids ending in <eos>, with per-token score."""

    tokens: list[int]
    log_prob: float
    s_c: float = field(default=0.0)
    completed: bool = True

    def __post_init__(self):
        if not self.tokens:
            raise DataError("caption hypothesis cannot be empty")
        if self.s_c == 0.0:
            self.s_c = hypothesis_score(self.log_prob, len(self.tokens))


def hypothesis_score(log_prob: float, n_tokens: int) -> float:
    """Length-normalized caption score s_c = exp(log_prob / n_tokens)."""
    return float(math.exp(log_prob / max(1, n_tokens)))


def greedy_decode(
    models: list[DecoderModel],
    conds: list[SpanContext],
    eos_id: int,
    bos_id: int,
    max_len: int = DEFAULT_MAX_LEN,
) -> CaptionHypothesis:
    """Argmax decoding (ties to the lowest token index) until <eos> or max_len."""
    _check_ensemble(models)
    states = [initial_state(m) for m in models]
    prev = bos_id
    tokens: list[int] = []
    log_prob = 0.0
    for _ in range(max_len):
        states, dist = ensemble_step(models, states, prev, conds)
        tok = int(np.argmax(dist))
        tokens.append(tok)
        log_prob += float(np.log(dist[tok]))
        if tok == eos_id:
            return CaptionHypothesis(tokens=tokens, log_prob=log_prob)
        prev = tok
    tokens.append(eos_id)
    return CaptionHypothesis(tokens=tokens, log_prob=log_prob, completed=False)


def sample_decode(
    models: list[DecoderModel],
    conds: list[SpanContext],
    eos_id: int,
    bos_id: int,
    rng: np.random.Generator,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[CaptionHypothesis, list[np.ndarray]]:
    """Per-step multinomial sampling; also returns the per-step distributions."""
    _check_ensemble(models)
    states = [initial_state(m) for m in models]
    prev = bos_id
    tokens: list[int] = []
    dists: list[np.ndarray] = []
    log_prob = 0.0
    for _ in range(max_len):
        states, dist = ensemble_step(models, states, prev, conds)
        dists.append(dist)
        tok = int(rng.choice(dist.shape[0], p=dist / dist.sum()))
        tokens.append(tok)
        log_prob += float(np.log(dist[tok]))
        if tok == eos_id:
            return CaptionHypothesis(tokens=tokens, log_prob=log_prob), dists
        prev = tok
    tokens.append(eos_id)
    return CaptionHypothesis(tokens=tokens, log_prob=log_prob, completed=False), dists


def beam_search(
    models: list[DecoderModel],
    conds: list[SpanContext],
    eos_id: int,
    bos_id: int,
    beam: int = DEFAULT_BEAM,
    max_len: int = DEFAULT_MAX_LEN,
) -> CaptionHypothesis:
    """Length-synchronous beam search over the model ensemble.

    Every extension that emits <eos> moves to a completed pool; the top
    ``beam`` remaining extensions (by cumulative log-probability, ties by
    lexicographic token order) stay live. The search stops once the pool
    holds ``beam`` hypotheses or ``max_len`` is reached, and returns the
    pool's best hypothesis under per-token length normalization. If nothing
    completed, the best partial is returned with <eos> appended and
    ``completed=False``.
    """
    _check_ensemble(models)
    if beam < 1:
        raise ConfigError(f"beam width must be >= 1, got {beam}")
    n_models = len(models)
    v = models[0].vocab_size

    # Each live hypothesis: (token tuple, cumulative log-prob).
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    states = [initial_state(m, batch=1) for m in models]
    prev = np.array([bos_id])
    pool: list[tuple[tuple[int, ...], float]] = []

    for _ in range(max_len):
        new_states = []
        dist = None
        for mi in range(n_models):
            h_next, d = decode_step(models[mi], states[mi], prev, conds[mi])
            new_states.append(h_next)
            dist = d if dist is None else dist + d
        dist /= n_models
        log_dist = np.log(dist)

        candidates = []  # (tokens, cum_logprob, parent_row, token)
        for row, (toks, cum) in enumerate(live):
            for tok in range(v):
                candidates.append((toks + (tok,), cum + float(log_dist[row, tok]), row, tok))
        candidates.sort(key=lambda c: (-c[1], c[0]))

        # Walk best-first: <eos> extensions ranking above the beam-th survivor
        # are finalized, everything after the live set fills is pruned.
        ongoing = []
        for cand in candidates:
            if cand[3] == eos_id:
                pool.append((cand[0], cand[1]))
            else:
                ongoing.append(cand)
                if len(ongoing) == beam:
                    break
        if len(pool) >= beam or not ongoing:
            break

        live = [(toks, cum) for toks, cum, _, _ in ongoing]
        rows = [row for _, _, row, _ in ongoing]
        states = [h[rows] for h in new_states]
        prev = np.array([tok for _, _, _, tok in ongoing])

    if pool:
        best = min(pool, key=lambda h: (-(h[1] / max(1, len(h[0]))), h[0]))
        return CaptionHypothesis(tokens=list(best[0]), log_prob=best[1])
    # Nothing reached <eos> within max_len: fall back to the best partial.
    best = min(live, key=lambda h: (-(h[1] / max(1, len(h[0]))), h[0]))
    return CaptionHypothesis(
        tokens=list(best[0]) + [eos_id], log_prob=best[1], completed=False
    )
