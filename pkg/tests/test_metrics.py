import math
import random

import numpy as np
import pytest

from densecap.errors import DataError
from densecap.metrics import (
    NGramStats,
    bleu4,
    cider,
    dense_caption_eval,
    meteor_lite,
    proposal_pr,
)
from densecap.timeline import Interval


class TestBleu4:
    def test_identical_is_one(self):
        cand = "a person slices the onion".split()
        assert bleu4(cand, [cand]) == 1.0

    def test_no_overlap_is_zero(self):
        cand = list("abcdefghij")
        ref = list("klmnopqrst")
        score = bleu4(cand, [ref])
        assert score == 0.0
        assert score < 0.05

    def test_hand_worked_example(self):
        cand = "the cat sat on mat".split()
        ref = "the cat sat on the mat".split()
        # clipped precisions by hand: 5/5, 3/4, 2/3, 1/2; BP = exp(1 - 6/5)
        expected = math.exp(1.0 - 6.0 / 5.0) * (1.0 * 0.75 * (2.0 / 3.0) * 0.5) ** 0.25
        assert bleu4(cand, [ref]) == pytest.approx(expected, abs=1e-9)

    def test_smoothing_on_higher_orders(self):
        # shares unigrams but no bigram: p2..p4 get +1 smoothing, score > 0
        cand = "a c b".split()
        ref = "a b c".split()
        assert 0.0 < bleu4(cand, [ref]) < 1.0

    def test_brevity_penalty_uses_closest_reference(self):
        cand = "a b c".split()
        refs = [list("ab"), list("abcdefg")]
        # closest length to 3 is 2; c > r so BP = 1
        p1 = 2 / 3  # a, b match the 2-token reference... compute directly instead
        score = bleu4(cand, [["a", "b"], ["a", "b", "c", "d", "e", "f", "g"]])
        assert score > 0.0

    def test_longer_candidate_no_penalty(self):
        # candidate longer than reference: BP = 1 by the min(0, .) clamp.
        # precisions by hand: 3/4, 2/3, 1/2, and 0/1 smoothed to 1/(1+1)
        cand = "a b c d".split()
        ref = "a b c".split()
        assert bleu4(cand, [ref]) == pytest.approx(
            ((3 / 4) * (2 / 3) * (1 / 2) * (1 / 2)) ** 0.25, abs=1e-9
        )

    def test_reference_order_invariance(self):
        cand = "a b c".split()
        refs = [["a", "b"], ["b", "c", "d"], ["a", "b", "c", "e"]]
        assert bleu4(cand, refs) == bleu4(cand, list(reversed(refs)))

    def test_empty_candidate_rejected(self):
        with pytest.raises(DataError):
            bleu4([], [["a"]])

    def test_empty_references_rejected(self):
        with pytest.raises(DataError):
            bleu4(["a"], [])


def two_doc_stats():
    return NGramStats.from_documents([[["a", "b"]], [["c", "d"]]])


class TestCider:
    def test_disjoint_vocabulary_hand_oracle(self):
        stats = two_doc_stats()
        # idf = log 2 everywhere; n=1,2 cosines are 1, n=3,4 empty -> 0
        assert cider(["a", "b"], [["a", "b"]], stats) == pytest.approx(5.0, abs=1e-9)

    def test_hand_oracle_with_length_penalty(self):
        stats = two_doc_stats()
        cos1 = 2.0 / math.sqrt(6.0)  # three equal-idf unigrams vs two
        cos2 = 1.0 / math.sqrt(2.0)  # bigrams (a,b),(b,x) vs (a,b)
        pen = math.exp(-1.0 / 72.0)  # length delta 1, sigma 6
        expected = 10.0 * (cos1 * pen + cos2 * pen) / 4.0
        assert cider(["a", "b", "x"], [["a", "b"]], stats) == pytest.approx(expected, abs=1e-9)

    def test_all_idf_zero_gives_zero(self):
        # every n-gram occurs in every document -> idf log(1) = 0 -> zero vectors
        stats = NGramStats.from_documents([[["a", "b"]], [["a", "b"]]])
        assert cider(["a", "b"], [["a", "b"]], stats) == 0.0

    def test_self_is_argmax_among_same_length_candidates(self):
        stats = two_doc_stats()
        ref = ["a", "b"]
        candidates = [["a", "a"], ["a", "b"], ["b", "a"], ["b", "b"], ["c", "d"]]
        scores = {tuple(c): cider(c, [ref], stats) for c in candidates}
        assert max(scores, key=scores.get) == ("a", "b")

    def test_plain_variant_skips_length_penalty(self):
        stats = two_doc_stats()
        with_pen = cider(["a", "b", "x"], [["a", "b"]], stats, gaussian_penalty=True)
        without = cider(["a", "b", "x"], [["a", "b"]], stats, gaussian_penalty=False)
        assert without > with_pen

    def test_empty_df_rejected(self):
        with pytest.raises(DataError):
            cider(["a"], [["a"]], NGramStats())


class TestMeteorLite:
    def test_identical_ten_tokens(self):
        cand = [f"w{i}" for i in range(10)]
        assert meteor_lite(cand, [cand]) == pytest.approx(0.9995, abs=1e-12)

    def test_no_common_tokens(self):
        assert meteor_lite(["a", "b"], [["c", "d"]]) == 0.0

    def test_reversed_distinct_tokens(self):
        cand = [f"w{i}" for i in range(6)]
        assert meteor_lite(list(reversed(cand)), [cand]) == pytest.approx(0.5, abs=1e-12)

    def test_two_token_swap(self):
        # m=2, chunks=2: F=1, penalty 0.5
        assert meteor_lite(["b", "a"], [["a", "b"]]) == pytest.approx(0.5, abs=1e-12)

    def test_exact_chunk_minimization_beats_greedy(self):
        # "a x a b" vs "a b a": the crossing alignment [(0,2), (2,0), (3,1)]
        # reaches m=3 with only 2 chunks; naive left-to-right gives 3.
        p, r = 3 / 4, 1.0
        f = 10 * p * r / (r + 9 * p)
        expected = f * (1 - 0.5 * (2 / 3) ** 3)
        assert meteor_lite(["a", "x", "a", "b"], [["a", "b", "a"]]) == pytest.approx(
            expected, abs=1e-12
        )

    def test_repeated_tokens_align_diagonally(self):
        cand = ["the"] * 8
        assert meteor_lite(cand, [cand]) == pytest.approx(
            1.0 * (1 - 0.5 * (1 / 8) ** 3), abs=1e-12
        )

    def test_best_reference_wins(self):
        cand = ["a", "b", "c"]
        weak = ["a", "z", "y"]
        exact = ["a", "b", "c"]
        assert meteor_lite(cand, [weak, exact]) == meteor_lite(cand, [exact])

    def test_bounded(self):
        rng = random.Random(5)
        words = ["a", "b", "c", "d"]
        for _ in range(50):
            cand = rng.choices(words, k=rng.randint(1, 6))
            ref = rng.choices(words, k=rng.randint(1, 6))
            assert 0.0 <= meteor_lite(cand, [ref]) <= 1.0


class TestProposalPR:
    def test_perfect_predictions(self):
        gt = {"v": [Interval(0, 10), Interval(20, 30)]}
        pr = proposal_pr(gt, gt)
        for t in (0.3, 0.5, 0.7):
            assert pr.precision[t] == 1.0
            assert pr.recall[t] == 1.0

    def test_zero_predictions_flagged(self):
        pr = proposal_pr({}, {"v": [Interval(0, 10)]})
        assert pr.zero_predictions
        assert all(p == 0.0 for p in pr.precision.values())
        assert all(r == 0.0 for r in pr.recall.values())

    def test_hand_worked_three_by_two(self):
        preds = {"v": [Interval(0, 10), Interval(13, 20), Interval(50, 60)]}
        gts = {"v": [Interval(0, 10), Interval(11, 19)]}
        # tIoU table by hand: p1-g1 = 1.0, p2-g2 = 6/9, p3-* = 0
        pr = proposal_pr(preds, gts)
        assert pr.precision[0.3] == pytest.approx(2 / 3)
        assert pr.recall[0.3] == pytest.approx(1.0)
        assert pr.precision[0.5] == pytest.approx(2 / 3)
        assert pr.recall[0.5] == pytest.approx(1.0)
        assert pr.precision[0.7] == pytest.approx(1 / 3)
        assert pr.recall[0.7] == pytest.approx(1 / 2)
        assert pr.matched_pairs[0.5] == 2
        assert pr.avg_precision == pytest.approx((2 / 3 + 2 / 3 + 1 / 3) / 3)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        preds, gts = {}, {}
        for v in range(5):
            preds[f"v{v}"] = [
                Interval(s, s + 1 + rng.uniform(0, 5)) for s in rng.uniform(0, 50, 6)
            ]
            gts[f"v{v}"] = [
                Interval(s, s + 1 + rng.uniform(0, 5)) for s in rng.uniform(0, 50, 3)
            ]
        pr = proposal_pr(preds, gts, thresholds=(0.1, 0.3, 0.5, 0.7, 0.9))
        ps = [pr.precision[t] for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        rs = [pr.recall[t] for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert ps == sorted(ps, reverse=True)
        assert rs == sorted(rs, reverse=True)

    def test_matching_is_per_video(self):
        preds = {"a": [Interval(0, 10)]}
        gts = {"b": [Interval(0, 10)]}
        pr = proposal_pr(preds, gts)
        assert pr.precision[0.3] == 0.0
        assert pr.recall[0.3] == 0.0


class TestDenseCaptionEval:
    def perfect_case(self):
        events = {
            "v1": [(Interval(0, 10), "a person slices the onion")],
            "v2": [
                (Interval(5, 15), "a person swims the lake"),
                (Interval(30, 40), "a person paints the canvas"),
            ],
        }
        return events

    def test_identical_predictions(self):
        events = self.perfect_case()
        report = dense_caption_eval(events, events)
        for t in (0.3, 0.5, 0.7):
            assert report.caption_scores["Bleu4"][t] == 1.0
            assert report.caption_scores["Meteor"][t] > 0.99
            assert report.caption_scores["CIDEr"][t] > 0.0
        assert report.caption_mean("Bleu4") == 1.0
        assert report.proposals.avg_precision == 1.0

    def test_disjoint_predictions_all_zero(self):
        gt = self.perfect_case()
        preds = {
            v: [(Interval(iv.start + 100, iv.end + 100), cap) for iv, cap in evs]
            for v, evs in gt.items()
        }
        report = dense_caption_eval(preds, gt)
        for name in ("Bleu4", "Meteor", "CIDEr"):
            assert report.caption_mean(name) == 0.0

    def test_two_video_hand_case(self):
        gt = {
            "v1": [(Interval(0, 10), "a b"), (Interval(20, 30), "c d")],
            "v2": [(Interval(0, 16), "c d")],
        }
        preds = {
            "v1": [(Interval(0, 10), "a b")],
            "v2": [(Interval(0, 8), "c d")],  # tIoU exactly 0.5
        }
        report = dense_caption_eval(preds, gt, thresholds=(0.3, 0.5, 0.7))
        # v2's prediction matches at 0.3 and 0.5 but not 0.7
        assert report.caption_scores["Bleu4"][0.3] == pytest.approx(1.0, abs=1e-9)
        assert report.caption_scores["Bleu4"][0.5] == pytest.approx(1.0, abs=1e-9)
        assert report.caption_scores["Bleu4"][0.7] == pytest.approx(0.5, abs=1e-9)
        assert report.caption_mean("Bleu4") == pytest.approx((1 + 1 + 0.5) / 3, abs=1e-9)
        m = 0.5 * (1 - 0.5 * (1 / 2) ** 3)  # per-event meteor is 0.9375
        assert report.caption_scores["Meteor"][0.7] == pytest.approx(0.9375 / 2, abs=1e-9)
        # CIDEr by hand: idf(a)=idf(b)=log 3, idf(c)=idf(d)=log(3/2); both
        # matched candidates are exact so each scores (10+10)/4 = 5.
        assert report.caption_scores["CIDEr"][0.3] == pytest.approx(5.0, abs=1e-9)
        assert report.caption_scores["CIDEr"][0.7] == pytest.approx(2.5, abs=1e-9)

    def test_order_invariance(self):
        gt = self.perfect_case()
        preds = {
            "v1": [(Interval(0, 9), "a person slices the onion")],
            "v2": [
                (Interval(31, 40), "a person paints the canvas"),
                (Interval(5, 14), "a person swims the lake"),
            ],
        }
        r1 = dense_caption_eval(preds, gt)
        shuffled = {v: list(reversed(evs)) for v, evs in preds.items()}
        r2 = dense_caption_eval(shuffled, gt)
        for name in ("Bleu4", "Meteor", "CIDEr"):
            assert r1.caption_mean(name) == pytest.approx(r2.caption_mean(name), abs=1e-12)

    def test_cider_dilution_direction(self):
        gt = self.perfect_case()
        perfect = {v: list(evs) for v, evs in gt.items()}
        diluted = {
            v: list(evs)
            + [(Interval(500 + 20 * i, 510 + 20 * i), "a person naps") for i in range(5)]
            for v, evs in gt.items()
        }
        base = dense_caption_eval(perfect, gt)
        worse = dense_caption_eval(diluted, gt)
        assert worse.caption_mean("CIDEr") < base.caption_mean("CIDEr")

    def test_report_serialization(self, tmp_path):
        events = self.perfect_case()
        report = dense_caption_eval(events, events)
        report.save(tmp_path / "r.json", tmp_path / "r.txt")
        table = (tmp_path / "r.txt").read_text()
        assert "Bleu4" in table and "CIDEr" in table
        assert "0.3" in table and "avg" in table
