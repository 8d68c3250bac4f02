import math

import numpy as np
import pytest

from densecap.decoder import (
    CaptionHypothesis,
    DecoderModel,
    SpanContext,
    TopicPredictor,
    beam_search,
    decode_step,
    ensemble_step,
    greedy_decode,
    initial_state,
    make_span_context,
)
from densecap.errors import DataError
from densecap.features import FeatureSequence, context_summary
from densecap.timeline import SegmentSpan

V, D = 6, 3
EOS, BOS = 1, 0


def make_cond(rng, rows=4, topic_model=None):
    pool = rng.normal(size=(rows, D))
    mean = pool.mean(axis=0)
    topic_dist = topic_model.predict(mean) if topic_model is not None else None
    return SpanContext(pool=pool, mean=mean, topic_dist=topic_dist)


def make_model(rng, variant="vanilla", n_topics=4):
    return DecoderModel.init(
        variant,
        vocab_size=V,
        feature_dim=D,
        d_embed=4,
        d_hidden=5,
        n_topics=n_topics if variant == "topic" else None,
        rng=rng,
    )


def scalar_decode_oracle(model, h_prev, token, cond):
    """Pure-python loop re-implementation of decode_step."""
    p = model.params
    d_h = model.d_hidden
    x = [float(p["E"][token][j]) for j in range(model.d_embed)]
    h = []
    for i in range(d_h):
        a = float(p["b_h"][i])
        for j in range(d_h):
            a += float(p["W_h"][i, j]) * float(h_prev[j])
        for j in range(model.d_embed):
            a += float(p["W_x"][i, j]) * x[j]
        h.append(math.tanh(a))
    if model.variant == "vanilla":
        c = [float(v) for v in cond.mean]
    elif model.variant == "topic":
        c = [float(v) for v in cond.mean] + [float(v) for v in cond.topic_dist]
    else:
        scores = []
        for row in cond.pool:
            s = 0.0
            for i in range(d_h):
                for j in range(D):
                    s += float(h_prev[i]) * float(p["W_a"][i, j]) * float(row[j])
            scores.append(s)
        mx = max(scores)
        es = [math.exp(s - mx) for s in scores]
        z = sum(es)
        alpha = [e / z for e in es]
        c = [
            sum(alpha[k] * float(cond.pool[k][j]) for k in range(len(alpha)))
            for j in range(D)
        ]
    u = h + c
    logits = []
    for i in range(V):
        z = float(p["b_o"][i])
        for j in range(len(u)):
            z += float(p["W_o"][i, j]) * u[j]
        logits.append(z)
    mx = max(logits)
    es = [math.exp(l - mx) for l in logits]
    s = sum(es)
    return h, [e / s for e in es]


class TestDecodeStep:
    def test_zero_parameters_give_uniform(self):
        model = make_model(np.random.default_rng(0))
        for k in model.params:
            model.params[k] = np.zeros_like(model.params[k])
        cond = make_cond(np.random.default_rng(1))
        _, dist = decode_step(model, initial_state(model), 2, cond)
        np.testing.assert_allclose(dist, np.full(V, 1 / V))

    @pytest.mark.parametrize("variant", ["vanilla", "attention", "topic"])
    def test_matches_scalar_oracle(self, variant):
        rng = np.random.default_rng(7)
        model = make_model(rng, variant)
        cond = make_cond(rng, topic_model=model.topic)
        h_prev = rng.normal(size=model.d_hidden)
        h, dist = decode_step(model, h_prev, 3, cond)
        oh, odist = scalar_decode_oracle(model, h_prev, 3, cond)
        np.testing.assert_allclose(h, oh, atol=1e-12)
        np.testing.assert_allclose(dist, odist, atol=1e-12)

    @pytest.mark.parametrize("variant", ["vanilla", "attention", "topic"])
    def test_distribution_is_normalized(self, variant):
        rng = np.random.default_rng(11)
        for trial in range(10):
            model = make_model(rng, variant)
            cond = make_cond(rng, topic_model=model.topic)
            _, dist = decode_step(model, rng.normal(size=model.d_hidden), int(rng.integers(V)), cond)
            assert abs(dist.sum() - 1.0) < 1e-9
            assert np.all(dist >= 0)

    def test_attention_on_identical_rows_equals_vanilla(self):
        rng = np.random.default_rng(13)
        att = make_model(rng, "attention")
        van = DecoderModel(
            variant="vanilla",
            params={k: v.copy() for k, v in att.params.items() if k != "W_a"},
            feature_dim=D,
        )
        row = rng.normal(size=D)
        pool = np.tile(row, (5, 1))
        cond = SpanContext(pool=pool, mean=pool.mean(axis=0))
        h_prev = rng.normal(size=att.d_hidden)
        _, d_att = decode_step(att, h_prev, 2, cond)
        _, d_van = decode_step(van, h_prev, 2, cond)
        np.testing.assert_allclose(d_att, d_van, atol=1e-12)

    def test_batched_rows_match_single_calls(self):
        rng = np.random.default_rng(17)
        model = make_model(rng, "attention")
        cond = make_cond(rng)
        hs = rng.normal(size=(3, model.d_hidden))
        toks = np.array([1, 4, 2])
        h_b, d_b = decode_step(model, hs, toks, cond)
        for i in range(3):
            h_s, d_s = decode_step(model, hs[i], int(toks[i]), cond)
            np.testing.assert_allclose(h_b[i], h_s, atol=1e-12)
            np.testing.assert_allclose(d_b[i], d_s, atol=1e-12)


class TestEnsemble:
    def test_ensemble_of_identical_copies_is_identity(self):
        rng = np.random.default_rng(19)
        model = make_model(rng)
        cond = make_cond(rng)
        h = initial_state(model)
        _, single = decode_step(model, h, 2, cond)
        for n in (1, 2, 5):
            states = [initial_state(model) for _ in range(n)]
            _, dist = ensemble_step([model] * n, states, 2, [cond] * n)
            np.testing.assert_allclose(dist, single, atol=1e-12)

    def test_uniform_partner_averages(self):
        rng = np.random.default_rng(23)
        model = make_model(rng)
        flat = make_model(rng)
        for k in flat.params:
            flat.params[k] = np.zeros_like(flat.params[k])
        cond = make_cond(rng)
        _, one = decode_step(model, initial_state(model), 3, cond)
        _, dist = ensemble_step(
            [model, flat], [initial_state(model), initial_state(flat)], 3, [cond, cond]
        )
        np.testing.assert_allclose(dist, (one + np.full(V, 1 / V)) / 2, atol=1e-12)

    def test_three_models_match_hand_average(self):
        rng = np.random.default_rng(29)
        models = [make_model(rng, v) for v in ("vanilla", "attention", "topic")]
        conds = [make_cond(rng, topic_model=m.topic) for m in models]
        states = [initial_state(m) for m in models]
        _, dist = ensemble_step(models, states, 2, conds)
        singles = [decode_step(m, initial_state(m), 2, c)[1] for m, c in zip(models, conds)]
        hand = np.zeros(V)
        for s in singles:
            hand += s
        np.testing.assert_allclose(dist, hand / 3, atol=1e-12)

    def test_vocab_mismatch_rejected(self):
        rng = np.random.default_rng(31)
        a = make_model(rng)
        b = DecoderModel.init("vanilla", vocab_size=V + 1, feature_dim=D, d_embed=4, d_hidden=5, rng=rng)
        with pytest.raises(DataError):
            ensemble_step([a, b], [initial_state(a), initial_state(b)], 0, [make_cond(rng)] * 2)


def permutation_model(seq):
    """A model that deterministically emits ``seq`` then <eos>."""
    chain = {BOS: seq[0]}
    for a, b in zip(seq, seq[1:]):
        chain[a] = b
    chain[seq[-1]] = EOS
    E = np.eye(V) * 3.0
    W_x = np.zeros((V, V))
    for src, dst in chain.items():
        W_x[dst, src] = 10.0
    W_o = np.zeros((V, V + D))
    W_o[:, :V] = 60.0 * np.eye(V)
    params = {
        "E": E,
        "W_h": np.zeros((V, V)),
        "W_x": W_x,
        "b_h": np.zeros(V),
        "W_o": W_o,
        "b_o": np.zeros(V),
    }
    return DecoderModel(variant="vanilla", params=params, feature_dim=D)


def enumerate_best(models, conds, max_len):
    """Exhaustive decode enumeration: best completed hypothesis, beam's tie-break."""
    best = None
    vocab_size = models[0].vocab_size

    def rec(tokens, cum, states, prev):
        nonlocal best
        if len(tokens) >= max_len:
            return
        new_states, dist = ensemble_step(models, states, prev, conds)
        for tok in range(vocab_size):
            lp = cum + float(np.log(dist[tok]))
            seq = tokens + (tok,)
            if tok == EOS:
                key = (-(lp / len(seq)), seq)
                if best is None or key < best[0]:
                    best = (key, seq, lp)
            else:
                rec(seq, lp, new_states, tok)

    rec((), 0.0, [initial_state(m) for m in models], BOS)
    return best


class TestBeamSearch:
    def test_deterministic_chain_model(self):
        model = permutation_model([2, 4])
        cond = SpanContext(pool=np.zeros((2, D)), mean=np.zeros(D))
        hyp = beam_search([model], [cond], EOS, BOS, beam=5, max_len=10)
        assert hyp.tokens == [2, 4, EOS]
        assert hyp.completed
        assert hyp.s_c == pytest.approx(1.0, abs=1e-9)

    def test_beam_one_equals_greedy(self):
        rng = np.random.default_rng(37)
        for _ in range(40):
            model = make_model(rng)
            cond = make_cond(rng)
            g = greedy_decode([model], [cond], EOS, BOS, max_len=6)
            b = beam_search([model], [cond], EOS, BOS, beam=1, max_len=6)
            assert g.tokens == b.tokens
            assert g.log_prob == pytest.approx(b.log_prob, abs=1e-12)
            assert g.completed == b.completed

    def test_matches_exhaustive_enumeration_on_tiny_models(self):
        rng = np.random.default_rng(41)
        for _ in range(25):
            model = DecoderModel.init(
                "vanilla", vocab_size=4, feature_dim=2, d_embed=3, d_hidden=3, rng=rng
            )
            model.params["b_o"][EOS] += 1.5  # caption-like stopping mass
            pool = rng.normal(size=(3, 2))
            cond = SpanContext(pool=pool, mean=pool.mean(axis=0))
            best = enumerate_best([model], [cond], max_len=3)
            hyp = beam_search([model], [cond], EOS, BOS, beam=5, max_len=3)
            assert tuple(hyp.tokens) == best[1]
            assert hyp.log_prob == pytest.approx(best[2], abs=1e-9)

    def test_normalized_score_at_least_greedy(self):
        rng = np.random.default_rng(43)
        for _ in range(30):
            model = make_model(rng)
            model.params["b_o"][EOS] += 1.0
            cond = make_cond(rng)
            g = greedy_decode([model], [cond], EOS, BOS, max_len=8)
            b = beam_search([model], [cond], EOS, BOS, beam=5, max_len=8)
            g_norm = g.log_prob / max(1, len(g.tokens))
            b_norm = b.log_prob / max(1, len(b.tokens))
            assert b_norm >= g_norm - 1e-12

    def test_partial_fallback_is_flagged(self):
        # The chain never reaches <eos> within 3 steps, and with beam=2 the
        # near-zero <eos> extensions rank below the walk cutoff every step,
        # so nothing completes and the flagged-partial path triggers.
        model = permutation_model([2, 4, 3, 5])
        cond = SpanContext(pool=np.zeros((2, D)), mean=np.zeros(D))
        hyp = beam_search([model], [cond], EOS, BOS, beam=2, max_len=3)
        assert not hyp.completed
        assert hyp.tokens == [2, 4, 3, EOS]

    def test_identical_beam_output_for_ensembled_copies(self):
        rng = np.random.default_rng(47)
        model = make_model(rng)
        model.params["b_o"][EOS] += 0.5
        cond = make_cond(rng)
        solo = beam_search([model], [cond], EOS, BOS, beam=5, max_len=6)
        trio = beam_search([model] * 3, [cond] * 3, EOS, BOS, beam=5, max_len=6)
        assert solo.tokens == trio.tokens
        assert solo.log_prob == pytest.approx(trio.log_prob, abs=1e-9)


class TestHypothesisScore:
    def test_s_c_definition(self):
        hyp = CaptionHypothesis(tokens=[2, 3, EOS], log_prob=-1.5)
        assert hyp.s_c == pytest.approx(math.exp(-1.5 / 3))

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            CaptionHypothesis(tokens=[], log_prob=0.0)


class TestMakeSpanContext:
    def test_pool_and_mean(self):
        rng = np.random.default_rng(53)
        seq = FeatureSequence("v", rng.normal(size=(8, D)).astype(np.float32))
        model = make_model(rng)
        cond = make_span_context(model, seq, SegmentSpan(2, 5))
        np.testing.assert_allclose(cond.pool, seq.data[2:6].astype(np.float64))
        np.testing.assert_allclose(cond.mean, seq.data[2:6].mean(axis=0), atol=1e-6)

    def test_topic_dist_attached_for_topic_variant(self):
        rng = np.random.default_rng(59)
        seq = FeatureSequence("v", rng.normal(size=(6, D)).astype(np.float32))
        model = make_model(rng, "topic")
        cond = make_span_context(model, seq, SegmentSpan(0, 3))
        assert cond.topic_dist is not None
        assert cond.topic_dist.sum() == pytest.approx(1.0, abs=1e-9)

    def test_boundary_context_rows_appended(self):
        rng = np.random.default_rng(61)
        seq = FeatureSequence("v", rng.normal(size=(6, D)).astype(np.float32))
        ctx = context_summary(seq)
        model = make_model(rng)
        model.use_boundary_context = True
        cond = make_span_context(model, seq, SegmentSpan(1, 3), ctx)
        assert cond.pool.shape == (3 + 2, D)
        np.testing.assert_allclose(cond.pool[-2], ctx.forward[3])
        np.testing.assert_allclose(cond.pool[-1], ctx.backward[1])


class TestCheckpoint:
    @pytest.mark.parametrize("variant", ["vanilla", "attention", "topic"])
    def test_roundtrip(self, tmp_path, variant):
        rng = np.random.default_rng(67)
        model = make_model(rng, variant)
        path = tmp_path / f"{variant}.json"
        model.save(path)
        back = DecoderModel.load(path)
        assert back.variant == variant
        for k, v in model.params.items():
            np.testing.assert_array_equal(back.params[k], v)
        if variant == "topic":
            np.testing.assert_array_equal(back.topic.W_t, model.topic.W_t)
