"""Training for the caption decoders: teacher-forced cross-entropy with
backpropagation through time, self-critical policy-gradient fine-tuning,
and the topic classifier.

All gradients are derived by hand against the forward pass in
:mod:`densecap.decoder`; ``tests`` verify each parameter against central
finite differences, so keep the two modules in lockstep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderModel, SpanContext, TopicPredictor, greedy_decode, sample_decode
from .errors import ConfigError, DataError
from .metrics import NGramStats, cider, meteor_lite
from .numerics import softmax
from .optim import Adam, clip_grad_norm
from .vocab import Vocabulary

log = logging.getLogger(__name__)


def _zero_grads(model: DecoderModel) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def forward_sequence(
    model: DecoderModel, cond: SpanContext, input_tokens: list[int]
) -> tuple[list[np.ndarray], dict]:
    """Teacher-forced forward pass; returns per-step distributions and caches.

    ``input_tokens[t]`` is the token fed at step t (``<bos>`` first). The
    step math mirrors :func:`densecap.decoder.decode_step` exactly.
    """
    p = model.params
    d_h = model.d_hidden
    n = len(input_tokens)
    h_prev = np.zeros(d_h)
    hs = [h_prev]  # h_0 .. h_n
    xs, cs, alphas, us, dists = [], [], [], [], []
    for t in range(n):
        x = p["E"][input_tokens[t]]
        h = np.tanh(p["W_h"] @ h_prev + p["W_x"] @ x + p["b_h"])
        if model.variant == "vanilla":
            c = cond.mean
            alpha = None
        elif model.variant == "topic":
            c = np.concatenate([cond.mean, cond.topic_dist])
            alpha = None
        else:
            scores = (h_prev @ p["W_a"]) @ cond.pool.T
            alpha = softmax(scores)
            c = alpha @ cond.pool
        u = np.concatenate([h, c])
        logits = p["W_o"] @ u + p["b_o"]
        dist = softmax(logits)
        xs.append(x)
        hs.append(h)
        cs.append(c)
        alphas.append(alpha)
        us.append(u)
        dists.append(dist)
        h_prev = h
    caches = {"xs": xs, "hs": hs, "alphas": alphas, "us": us, "inputs": input_tokens}
    return dists, caches


def backward_sequence(
    model: DecoderModel,
    cond: SpanContext,
    caches: dict,
    dlogits: list[np.ndarray],
) -> dict[str, np.ndarray]:
    """Backpropagation through time given per-step logit gradients."""
    p = model.params
    d_h = model.d_hidden
    grads = _zero_grads(model)
    hs, xs, us, alphas = caches["hs"], caches["xs"], caches["us"], caches["alphas"]
    inputs = caches["inputs"]
    n = len(inputs)
    dh_carry = np.zeros(d_h)
    for t in range(n - 1, -1, -1):
        dl = dlogits[t]
        grads["W_o"] += np.outer(dl, us[t])
        grads["b_o"] += dl
        du = p["W_o"].T @ dl
        dh = du[:d_h] + dh_carry
        dc = du[d_h:]
        datt_hprev = 0.0
        if model.variant == "attention":
            alpha = alphas[t]
            dalpha = cond.pool @ dc
            dscores = alpha * (dalpha - float(alpha @ dalpha))
            sf = dscores @ cond.pool
            grads["W_a"] += np.outer(hs[t], sf)
            datt_hprev = p["W_a"] @ sf
        da = dh * (1.0 - hs[t + 1] ** 2)
        grads["W_h"] += np.outer(da, hs[t])
        grads["W_x"] += np.outer(da, xs[t])
        grads["b_h"] += da
        grads["E"][inputs[t]] += p["W_x"].T @ da
        dh_carry = p["W_h"].T @ da + datt_hprev
    return grads


def xe_loss_and_grads(
    model: DecoderModel, cond: SpanContext, target_tokens: list[int], bos_id: int
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed negative log-likelihood of a caption and its parameter gradients.

    ``target_tokens`` must already end with <eos>; teacher forcing feeds
    ``<bos>`` then the targets shifted right.
    """
    if not target_tokens:
        raise DataError("cannot train on an empty caption")
    inputs = [bos_id] + list(target_tokens[:-1])
    dists, caches = forward_sequence(model, cond, inputs)
    loss = 0.0
    dlogits = []
    for t, w in enumerate(target_tokens):
        loss -= float(np.log(dists[t][w]))
        dl = dists[t].copy()
        dl[w] -= 1.0
        dlogits.append(dl)
    return loss, backward_sequence(model, cond, caches, dlogits)


@dataclass
class XeConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    epochs: int = 10
    seed: int = 0


def train_xe(
    model: DecoderModel,
    pairs: list[tuple[SpanContext, list[int]]],
    vocab: Vocabulary,
    config: XeConfig | None = None,
) -> tuple[DecoderModel, list[float]]:
    """Cross-entropy pretraining over (proposal context, caption ids) pairs.

    Works on a copy; zero epochs return the copy bit-for-bit. Returns the
    trained model and the mean per-token NLL of each epoch.
    """
    if not pairs:
        raise DataError("no training pairs")
    for _, toks in pairs:
        if any(t >= len(vocab) or t < 0 for t in toks):
            raise DataError("caption token id outside the vocabulary")
    cfg = config or XeConfig()
    out = model.copy()
    opt = Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    rng = np.random.default_rng([cfg.seed, 0x58455452])
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        total_nll = 0.0
        total_tok = 0
        for idx in order:
            cond, targets = pairs[idx]
            loss, grads = xe_loss_and_grads(out, cond, targets, vocab.bos)
            grads = clip_grad_norm(grads, cfg.clip)
            opt.step(out.params, grads)
            total_nll += loss
            total_tok += len(targets)
        history.append(total_nll / total_tok)
    if history and len(history) > 1 and history[-1] >= history[0]:
        log.warning("cross-entropy training did not improve: %.4f -> %.4f", history[0], history[-1])
    return out, history


@dataclass
class ScstConfig:
    alpha_cider: float = 1.0
    alpha_meteor: float = 1.0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    max_len: int = 20


def caption_reward(
    tokens: list[int],
    references: list[list[str]],
    vocab: Vocabulary,
    cfg: ScstConfig,
    stats: NGramStats | None = None,
) -> float:
    """Weighted CIDEr + METEOR of a decoded token sequence against references."""
    words = vocab.decode(tokens)
    r = 0.0
    if cfg.alpha_cider != 0.0:
        if stats is None:
            stats = NGramStats.from_documents([references])
        r += cfg.alpha_cider * cider(words, references, stats)
    if cfg.alpha_meteor != 0.0:
        r += cfg.alpha_meteor * meteor_lite(words, references)
    return r


def scst_update(
    model: DecoderModel,
    cond: SpanContext,
    references: list[list[str]],
    vocab: Vocabulary,
    cfg: ScstConfig,
    opt: Adam,
    rng: np.random.Generator,
    stats: NGramStats | None = None,
) -> dict:
    """One self-critical policy-gradient step, in place.

    Samples a caption, decodes greedily as the baseline, and ascends
    ``advantage * sum_t log p(sampled_t)``. A zero advantage (including the
    sample equalling the greedy decode) leaves the model and optimizer
    bitwise untouched.
    """
    if not references:
        raise DataError("self-critical update needs at least one reference")
    sampled, _ = sample_decode([model], [cond], vocab.eos, vocab.bos, rng, max_len=cfg.max_len)
    if not vocab.decode(sampled.tokens):
        sampled, _ = sample_decode([model], [cond], vocab.eos, vocab.bos, rng, max_len=cfg.max_len)
        if not vocab.decode(sampled.tokens):
            log.warning("sampled caption empty twice; skipping update")
            return {"skipped": True, "advantage": 0.0, "sample_reward": 0.0, "greedy_reward": 0.0}
    greedy = greedy_decode([model], [cond], vocab.eos, vocab.bos, max_len=cfg.max_len)

    r_sample = caption_reward(sampled.tokens, references, vocab, cfg, stats)
    r_greedy = caption_reward(greedy.tokens, references, vocab, cfg, stats)
    advantage = r_sample - r_greedy
    info = {
        "skipped": False,
        "advantage": advantage,
        "sample_reward": r_sample,
        "greedy_reward": r_greedy,
    }
    if advantage == 0.0:
        return info

    steps = sampled.tokens if sampled.completed else sampled.tokens[:-1]
    inputs = [vocab.bos] + steps[:-1]
    dists, caches = forward_sequence(model, cond, inputs)
    dlogits = []
    for t, w in enumerate(steps):
        dl = dists[t].copy()
        dl[w] -= 1.0
        dlogits.append(advantage * dl)
    grads = backward_sequence(model, cond, caches, dlogits)
    grads = clip_grad_norm(grads, cfg.clip)
    opt.step(model.params, grads)
    return info


@dataclass
class TopicTrainConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0


def topic_loss_and_grads(
    predictor: TopicPredictor, x: np.ndarray, labels: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy over a batch of pooled features."""
    logits = x @ predictor.W_t.T + predictor.b_t
    probs = softmax(logits, axis=-1)
    n = x.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    dl = probs.copy()
    dl[np.arange(n), labels] -= 1.0
    dl /= n
    return loss, {"W_t": dl.T @ x, "b_t": dl.sum(axis=0)}


def train_topic_predictor(
    features: np.ndarray,
    labels: np.ndarray,
    n_topics: int,
    config: TopicTrainConfig | None = None,
) -> tuple[TopicPredictor, list[float]]:
    """Fit the topic classifier on (pooled feature, topic id) pairs."""
    cfg = config or TopicTrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if y.size == 0 or x.shape[0] != y.size:
        raise DataError("topic training needs aligned features and labels")
    if n_topics < 2:
        raise ConfigError(f"need at least 2 topics, got {n_topics}")
    present = np.unique(y)
    if present.size < 2:
        raise DataError("topic training data contains a single class")
    if present.min() < 0 or present.max() >= n_topics:
        raise DataError(f"topic label outside [0, {n_topics})")

    rng = np.random.default_rng([cfg.seed, 0x544F5049])
    predictor = TopicPredictor.init(x.shape[1], n_topics, rng)
    params = {"W_t": predictor.W_t, "b_t": predictor.b_t}
    opt = Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        losses = []
        for s in range(0, x.shape[0], cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            loss, grads = topic_loss_and_grads(predictor, x[idx], y[idx])
            opt.step(params, grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return predictor, history
