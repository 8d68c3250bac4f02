"""Caption metrics and the tIoU-gated dense-captioning evaluation protocol.

BLEU-4 uses clipped modified n-gram precisions with +1 smoothing on orders
that matched nothing (beyond unigrams) and the closest-reference brevity
penalty. CIDEr follows the consensus tf-idf cosine formulation with a
gaussian length penalty (sigma 6). METEOR here is an exact-match
simplification: unigram alignment maximizing matches then minimizing
chunks, harmonic mean F = 10PR/(R+9P), fragmentation penalty
0.5*(chunks/m)^3. Absolute METEOR values therefore differ from the
WordNet-backed original.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .errors import DataError
from .ioutil import atomic_path
from .timeline import Interval, tiou
from .vocab import tokenize

MAX_NGRAM = 4
CIDER_SIGMA = 6.0
DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7)
METRIC_NAMES = ("Bleu4", "Meteor", "CIDEr")


def ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class NGramStats:
    """Document frequencies over a reference corpus (1..4-grams).

    One document is the full reference set of one groundtruth event.
    """

    df: dict[tuple, int] = field(default_factory=dict)
    n_docs: int = 0

    @classmethod
    def from_documents(cls, documents: list[list[list[str]]]) -> "NGramStats":
        df: dict[tuple, int] = defaultdict(int)
        for refs in documents:
            seen = set()
            for ref in refs:
                for n in range(1, MAX_NGRAM + 1):
                    seen.update(ngram_counts(ref, n))
            for g in seen:
                df[g] += 1
        return cls(df=dict(df), n_docs=len(documents))

    def idf(self, gram: tuple) -> float:
        if self.n_docs == 0:
            raise DataError("empty document-frequency table")
        return math.log(self.n_docs / max(1, self.df.get(gram, 0)))


def bleu4(candidate: list[str], references: list[list[str]]) -> float:
    """Corpus-free sentence BLEU-4 in [0, 1]."""
    if not candidate:
        raise DataError("BLEU needs a non-empty candidate")
    if not references or any(not r for r in references):
        raise DataError("BLEU needs non-empty references")
    log_sum = 0.0
    for n in range(1, MAX_NGRAM + 1):
        cand = ngram_counts(candidate, n)
        total = max(0, len(candidate) - n + 1)
        max_ref: Counter = Counter()
        for ref in references:
            for g, c in ngram_counts(ref, n).items():
                max_ref[g] = max(max_ref[g], c)
        matched = sum(min(c, max_ref.get(g, 0)) for g, c in cand.items())
        if n == 1:
            p = matched / total
            if p == 0.0:
                return 0.0
        elif matched == 0:
            p = 1.0 / (total + 1)
        else:
            p = matched / total
        log_sum += math.log(p)
    c_len = len(candidate)
    r_len = min((abs(len(r) - c_len), len(r)) for r in references)[1]
    bp = math.exp(min(0.0, 1.0 - r_len / c_len))
    return bp * math.exp(log_sum / MAX_NGRAM)


def cider(
    candidate: list[str],
    references: list[list[str]],
    stats: NGramStats,
    sigma: float = CIDER_SIGMA,
    gaussian_penalty: bool = True,
) -> float:
    """Consensus tf-idf n-gram similarity, >= 0 (10 * cosine per order)."""
    if stats.n_docs == 0:
        raise DataError("CIDEr needs a document-frequency table")
    if not references:
        raise DataError("CIDEr needs at least one reference")
    score = 0.0
    for n in range(1, MAX_NGRAM + 1):
        cand_vec = {g: c * stats.idf(g) for g, c in ngram_counts(candidate, n).items()}
        cand_norm = math.sqrt(sum(v * v for v in cand_vec.values()))
        per_ref = 0.0
        for ref in references:
            ref_vec = {g: c * stats.idf(g) for g, c in ngram_counts(ref, n).items()}
            ref_norm = math.sqrt(sum(v * v for v in ref_vec.values()))
            if cand_norm == 0.0 or ref_norm == 0.0:
                continue
            dot = sum(v * ref_vec.get(g, 0.0) for g, v in cand_vec.items())
            sim = dot / (cand_norm * ref_norm)
            if gaussian_penalty:
                delta = len(candidate) - len(ref)
                sim *= math.exp(-(delta * delta) / (2.0 * sigma * sigma))
            per_ref += sim
        score += 10.0 * per_ref / len(references)
    return score / MAX_NGRAM


def _max_matches(candidate: list[str], reference: list[str]) -> int:
    cc, rc = Counter(candidate), Counter(reference)
    return sum(min(c, rc[w]) for w, c in cc.items())


def _min_chunks(candidate: list[str], reference: list[str], m: int, node_cap: int = 1_000_000) -> int:
    """Fewest chunks over all maximum exact-match alignments.

    A chunk is a maximal run of matches contiguous and in order in both
    sentences. Exact branch-and-bound; caption-length sentences explore a
    handful of nodes. ``node_cap`` bounds pathological inputs, returning the
    best alignment found by then.
    """
    ref_positions: dict[str, list[int]] = defaultdict(list)
    for j, w in enumerate(reference):
        ref_positions[w].append(j)

    # Matches still achievable from candidate position i on, given full ref.
    suffix_cap = [0] * (len(candidate) + 1)
    suffix_counts: Counter = Counter()
    for i in range(len(candidate) - 1, -1, -1):
        w = candidate[i]
        if suffix_counts[w] < len(ref_positions.get(w, ())):
            suffix_counts[w] += 1
        suffix_cap[i] = sum(suffix_counts.values())

    best = m + 1  # chunks can never exceed the number of matches
    nodes = 0

    def dfs(i: int, used: set, matched: int, chunks: int, prev: tuple | None):
        nonlocal best, nodes
        nodes += 1
        if nodes > node_cap:
            return
        if max(chunks, 1) >= best:
            return
        if matched == m:
            best = chunks
            return
        if i >= len(candidate) or matched + suffix_cap[i] < m:
            return
        w = candidate[i]
        choices = [j for j in ref_positions.get(w, ()) if j not in used]
        # Continuing the current chunk first finds low-chunk solutions early.
        if prev is not None and i == prev[0] + 1 and prev[1] + 1 in choices:
            choices.remove(prev[1] + 1)
            choices.insert(0, prev[1] + 1)
        for j in choices:
            cont = prev is not None and i == prev[0] + 1 and j == prev[1] + 1
            used.add(j)
            dfs(i + 1, used, matched + 1, chunks if cont else chunks + 1, (i, j))
            used.remove(j)
        dfs(i + 1, used, matched, chunks, prev)

    dfs(0, set(), 0, 0, None)
    return best


def meteor_lite(candidate: list[str], references: list[list[str]]) -> float:
    """Exact-match METEOR variant in [0, 1]; best score over the references."""
    best = 0.0
    for ref in references:
        if not candidate or not ref:
            continue
        m = _max_matches(candidate, ref)
        if m == 0:
            continue
        chunks = _min_chunks(candidate, ref, m)
        p = m / len(candidate)
        r = m / len(ref)
        f = 10.0 * p * r / (r + 9.0 * p)
        penalty = 0.5 * (chunks / m) ** 3
        best = max(best, f * (1.0 - penalty))
    return best


@dataclass
class ProposalPR:
    """Precision/recall of predicted intervals at each tIoU threshold."""

    thresholds: tuple[float, ...]
    precision: dict[float, float]
    recall: dict[float, float]
    matched_pairs: dict[float, int]
    n_predictions: int
    n_groundtruth: int
    zero_predictions: bool = False

    @property
    def avg_precision(self) -> float:
        return sum(self.precision.values()) / len(self.thresholds)

    @property
    def avg_recall(self) -> float:
        return sum(self.recall.values()) / len(self.thresholds)


def proposal_pr(
    predictions: dict[str, list[Interval]],
    groundtruth: dict[str, list[Interval]],
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
) -> ProposalPR:
    """Many-to-one matched precision/recall over a whole prediction set.

    A prediction counts at threshold t if its best tIoU against any same-video
    groundtruth reaches t; recall mirrors that for groundtruth events. With
    zero predictions precision is reported as 0 and flagged.
    """
    videos = sorted(set(predictions) | set(groundtruth))
    n_pred = sum(len(predictions.get(v, ())) for v in videos)
    n_gt = sum(len(groundtruth.get(v, ())) for v in videos)
    precision = {}
    recall = {}
    pairs = {}
    for t in thresholds:
        pred_hit = 0
        gt_hit = 0
        n_pairs = 0
        for v in videos:
            preds = predictions.get(v, [])
            gts = groundtruth.get(v, [])
            matrix = [[tiou(p, g) for g in gts] for p in preds]
            for row in matrix:
                if row and max(row) >= t:
                    pred_hit += 1
                n_pairs += sum(1 for x in row if x >= t)
            for gi in range(len(gts)):
                if matrix and max(matrix[pi][gi] for pi in range(len(preds))) >= t:
                    gt_hit += 1
        precision[t] = pred_hit / n_pred if n_pred else 0.0
        recall[t] = gt_hit / n_gt if n_gt else 0.0
        pairs[t] = n_pairs
    return ProposalPR(
        thresholds=tuple(thresholds),
        precision=precision,
        recall=recall,
        matched_pairs=pairs,
        n_predictions=n_pred,
        n_groundtruth=n_gt,
        zero_predictions=(n_pred == 0),
    )


@dataclass
class EvalReport:
    """Joint proposal-quality and caption-quality report."""

    proposals: ProposalPR
    caption_scores: dict[str, dict[float, float]]  # metric -> threshold -> mean

    def caption_mean(self, metric: str) -> float:
        per_t = self.caption_scores[metric]
        return sum(per_t.values()) / len(per_t)

    def to_dict(self) -> dict:
        ts = list(self.proposals.thresholds)
        return {
            "thresholds": ts,
            "proposals": {
                "n_predictions": self.proposals.n_predictions,
                "n_groundtruth": self.proposals.n_groundtruth,
                "zero_predictions": self.proposals.zero_predictions,
                "precision": {str(t): self.proposals.precision[t] for t in ts},
                "recall": {str(t): self.proposals.recall[t] for t in ts},
                "matched_pairs": {str(t): self.proposals.matched_pairs[t] for t in ts},
                "avg_precision": self.proposals.avg_precision,
                "avg_recall": self.proposals.avg_recall,
            },
            "captions": {
                metric: {
                    **{str(t): self.caption_scores[metric][t] for t in ts},
                    "avg": self.caption_mean(metric),
                }
                for metric in self.caption_scores
            },
        }

    def format_table(self) -> str:
        ts = list(self.proposals.thresholds)
        header = "metric".ljust(14) + "".join(f"{t:>9}" for t in ts) + f"{'avg':>9}"
        lines = [header, "-" * len(header)]
        p = self.proposals
        lines.append(
            "P".ljust(14)
            + "".join(f"{p.precision[t]:>9.3f}" for t in ts)
            + f"{p.avg_precision:>9.3f}"
        )
        lines.append(
            "R".ljust(14)
            + "".join(f"{p.recall[t]:>9.3f}" for t in ts)
            + f"{p.avg_recall:>9.3f}"
        )
        for metric in self.caption_scores:
            row = self.caption_scores[metric]
            lines.append(
                metric.ljust(14)
                + "".join(f"{row[t]:>9.4f}" for t in ts)
                + f"{self.caption_mean(metric):>9.4f}"
            )
        lines.append(
            "pairs".ljust(14) + "".join(f"{p.matched_pairs[t]:>9}" for t in ts)
        )
        if p.zero_predictions:
            lines.append("note: zero predictions; precision reported as 0")
        return "\n".join(lines)

    def save(self, json_path: str | os.PathLike, table_path: str | os.PathLike | None = None) -> None:
        with atomic_path(json_path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        if table_path is not None:
            with atomic_path(table_path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
                fh.write(self.format_table())
                fh.write("\n")


CaptionedEvents = dict[str, list[tuple[Interval, str]]]


def dense_caption_eval(
    predictions: CaptionedEvents,
    groundtruth: CaptionedEvents,
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Score captions of predicted events against tIoU-overlapping references.

    At each threshold every predicted event is scored against each
    groundtruth event of the same video with tIoU >= t (contributing the mean
    over those references, or 0 with no match); the threshold's metric is the
    mean over all predicted events, and the headline number averages the
    thresholds. Identical protocol for BLEU-4, METEOR-lite and CIDEr; CIDEr
    document frequencies come from the groundtruth reference corpus.
    """
    documents = [
        [tokenize(cap)] for events in groundtruth.values() for _, cap in events
    ]
    stats = NGramStats.from_documents(documents)

    pred_tokens: dict[str, list[tuple[Interval, list[str]]]] = {
        v: [(iv, tokenize(cap)) for iv, cap in events] for v, events in predictions.items()
    }
    gt_tokens: dict[str, list[tuple[Interval, list[str]]]] = {
        v: [(iv, tokenize(cap)) for iv, cap in events] for v, events in groundtruth.items()
    }

    n_pred = sum(len(v) for v in pred_tokens.values())
    scores: dict[str, dict[float, float]] = {name: {} for name in METRIC_NAMES}
    for t in thresholds:
        sums = dict.fromkeys(METRIC_NAMES, 0.0)
        for vid, events in pred_tokens.items():
            gts = gt_tokens.get(vid, [])
            for iv, cand in events:
                refs = [ref for giv, ref in gts if tiou(iv, giv) >= t]
                if not refs or not cand:
                    continue  # contributes 0 to every metric
                sums["Bleu4"] += sum(bleu4(cand, [r]) for r in refs) / len(refs)
                sums["Meteor"] += sum(meteor_lite(cand, [r]) for r in refs) / len(refs)
                sums["CIDEr"] += sum(cider(cand, [r], stats) for r in refs) / len(refs)
        for name in METRIC_NAMES:
            scores[name][t] = sums[name] / n_pred if n_pred else 0.0

    pr = proposal_pr(
        {v: [iv for iv, _ in events] for v, events in predictions.items()},
        {v: [iv for iv, _ in events] for v, events in groundtruth.items()},
        thresholds,
    )
    return EvalReport(proposals=pr, caption_scores=scores)
