"""Command-line pipeline orchestration.

Subcommands cover the full flow: ``synth`` -> ``cluster`` -> ``propose`` ->
``train-ranker`` -> ``rank`` -> ``train-captioner`` (x3 variants) -> ``scst``
-> ``caption`` -> ``rerank`` -> ``eval-props`` / ``eval-caps``. Every stage
reads and writes conventional names inside ``--run-dir``, records its fully
resolved configuration for replay, and is deterministic for a fixed seed.

Exit codes: 0 ok, 1 internal error, 2 bad input data, 3 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import caption_training as ct
from . import config as cfgmod
from .decoder import (
    CaptionHypothesis,
    DecoderModel,
    beam_search,
    make_span_context,
)
from .errors import ConfigError, DataError, PipelineError
from .features import context_summary, load_features_for, read_manifest
from .ioutil import atomic_path
from .metrics import dense_caption_eval, proposal_pr, EvalReport
from .proposals import (
    WindowBank,
    cluster_proportions,
    generate_candidates,
    label_candidates,
    read_candidates,
    write_candidates,
)
from .ranker import (
    RankerModel,
    RankerTrainConfig,
    assemble_feature_matrix,
    read_scored,
    score_and_filter,
    train_ranker,
    write_scored,
)
from .rerank import rerank, write_submission
from .synth import SynthConfig, event_length_proportions, generate
from .timeline import Interval, interval_to_segments
from .vocab import Vocabulary, build_vocab

VARIANT_ORDER = ("vanilla", "attention", "topic")


def _run_path(args, name: str) -> str:
    return os.path.join(args.run_dir, name)


def _manifest_path(args, split: str) -> str:
    return _run_path(args, f"manifest.{split}.json")


def _write_resolved(args, cfg: dict, command: str, paths: dict) -> None:
    os.makedirs(args.run_dir, exist_ok=True)
    root = os.path.abspath(args.run_dir)

    def relativize(value):
        if isinstance(value, str):
            ap = os.path.abspath(value)
            if ap == root or ap.startswith(root + os.sep):
                return os.path.relpath(ap, root)
            return value
        if isinstance(value, list):
            return [relativize(v) for v in value]
        return value

    extra = {"command": command, **{k: relativize(v) for k, v in paths.items()}}
    cfgmod.write_resolved(cfg, extra, _run_path(args, f"{command}.config.json"))


def _load_manifest_features(args, cfg, split):
    manifest_path = _manifest_path(args, split)
    manifest = read_manifest(manifest_path)
    decay = cfg["context"]["decay"]

    def loader(entry):
        seq = load_features_for(entry, manifest_path)
        return seq, context_summary(seq, decay)

    return manifest, loader


def cmd_synth(args, cfg) -> None:
    s = cfg["synth"]
    synth_cfg = SynthConfig(
        seed=cfg["seed"],
        n_videos=s["n_videos"],
        n_videos_val=s["n_videos_val"],
        duration_range=(s["duration_min"], s["duration_max"]),
        fps=s["fps"],
        feature_dim=s["feature_dim"],
        n_topics=s["n_topics"],
        events_range=(s["events_min"], s["events_max"]),
        mixture_means=tuple(s["mixture_means"]),
        mixture_weights=tuple(s["mixture_weights"]),
        mixture_sigma=s["mixture_sigma"],
        noise_sigma=s["noise_sigma"],
    )
    os.makedirs(args.run_dir, exist_ok=True)
    train, val = generate(synth_cfg, args.run_dir)
    _write_resolved(args, cfg, "synth", {"run_dir": args.run_dir})
    print(f"synth: wrote {len(train)} train / {len(val)} val videos to {args.run_dir}")


def cmd_cluster(args, cfg) -> None:
    manifest_path = args.manifest or _manifest_path(args, "train")
    manifest = read_manifest(manifest_path)
    bank = cluster_proportions(event_length_proportions(manifest), k=cfg["cluster"]["k"])
    out = args.out or _run_path(args, "window_bank.json")
    bank.to_json(out)
    _write_resolved(args, cfg, "cluster", {"manifest": manifest_path, "out": out})
    print(f"cluster: {bank.k} centers -> {out}")


def cmd_propose(args, cfg) -> None:
    manifest_path = args.manifest or _manifest_path(args, args.split)
    manifest = read_manifest(manifest_path)
    bank = WindowBank.from_json(args.bank or _run_path(args, "window_bank.json"))
    out = args.out or _run_path(args, f"candidates.{args.split}.jsonl")
    by_video = {}
    total = 0
    for entry in manifest:
        cands = generate_candidates(entry.meta, bank)
        label_candidates(
            cands,
            [ev.interval for ev in entry.events],
            pos_tiou=cfg["propose"]["pos_tiou"],
            neg_tiou=cfg["propose"]["neg_tiou"],
        )
        by_video[entry.meta.video_id] = cands
        total += len(cands)
    write_candidates(out, by_video)
    _write_resolved(args, cfg, "propose", {"manifest": manifest_path, "out": out})
    print(f"propose: {total} candidates over {len(manifest)} videos -> {out}")


def _assemble_split(args, cfg, split, candidates_path):
    """Feature matrices and labels for every candidate of a split."""
    manifest, loader = _load_manifest_features(args, cfg, split)
    by_video = read_candidates(candidates_path)
    mats, cands_in_order, vids = [], [], []
    for entry in manifest:
        vid = entry.meta.video_id
        cands = by_video.get(vid, [])
        if not cands:
            continue
        seq, ctx = loader(entry)
        mats.append(assemble_feature_matrix(seq, ctx, cands, entry.meta))
        cands_in_order.append(cands)
        vids.append((vid, entry.meta))
    if not mats:
        raise DataError(f"no candidates found in '{candidates_path}'")
    return manifest, vids, cands_in_order, mats


def cmd_train_ranker(args, cfg) -> None:
    candidates_path = args.candidates or _run_path(args, "candidates.train.jsonl")
    _, _, cands, mats = _assemble_split(args, cfg, args.split, candidates_path)
    x = np.vstack(mats)
    labels = [c.label for group in cands for c in group]
    r = cfg["ranker"]
    model, history = train_ranker(
        x,
        labels,
        RankerTrainConfig(
            hidden=r["hidden"],
            lr=r["lr"],
            beta1=r["beta1"],
            beta2=r["beta2"],
            eps=r["eps"],
            batch_size=r["batch_size"],
            epochs=r["epochs"],
            seed=cfg["seed"],
        ),
    )
    out = args.out or _run_path(args, "ranker.json")
    model.save(out)
    _write_resolved(args, cfg, "train-ranker", {"candidates": candidates_path, "out": out})
    print(
        f"train-ranker: {len(x)} candidates, loss {history[0]:.4f} -> {history[-1]:.4f}, "
        f"model -> {out}"
    )


def cmd_rank(args, cfg) -> None:
    candidates_path = args.candidates or _run_path(args, f"candidates.{args.split}.jsonl")
    model = RankerModel.load(args.model or _run_path(args, "ranker.json"))
    threshold = args.threshold if args.threshold is not None else cfg["ranker"]["threshold"]
    _, vids, cands, mats = _assemble_split(args, cfg, args.split, candidates_path)
    scored = {}
    kept = 0
    for (vid, _meta), group, mat in zip(vids, cands, mats):
        sps = score_and_filter(model, group, mat, threshold=threshold)
        scored[vid] = sps
        kept += len(sps)
    out = args.out or _run_path(args, f"scored.{args.split}.jsonl")
    write_scored(out, scored)
    _write_resolved(args, cfg, "rank", {"candidates": candidates_path, "out": out})
    print(f"rank: kept {kept} proposals at s_p > {threshold} -> {out}")


def _load_or_build_vocab(args, cfg, manifest) -> Vocabulary:
    path = _run_path(args, "vocab.json")
    if os.path.exists(path):
        return Vocabulary.load(path)
    vocab = build_vocab(manifest, min_count=cfg["captioner"]["min_count"])
    vocab.save(path)
    return vocab


def _xe_pairs(manifest, loader, model):
    pairs = []
    for entry in manifest:
        seq, ctx = loader(entry)
        for ev in entry.events:
            span = interval_to_segments(ev.interval, entry.meta)
            pairs.append((make_span_context(model, seq, span, ctx), ev))
    return pairs


def cmd_train_captioner(args, cfg) -> None:
    variant = args.variant
    manifest, loader = _load_manifest_features(args, cfg, args.split)
    vocab = _load_or_build_vocab(args, cfg, manifest)
    cap = cfg["captioner"]
    seed = cfg["seed"]
    vidx = VARIANT_ORDER.index(variant)
    feature_dim = load_features_for(manifest.entries[0], _manifest_path(args, args.split)).dims

    topic = None
    if variant == "topic":
        feats, labels = [], []
        for entry in manifest:
            seq, _ = loader(entry)
            for ev in entry.events:
                if ev.topic_id is None:
                    raise DataError(
                        f"video '{entry.meta.video_id}': topic variant needs topic_id labels"
                    )
                span = interval_to_segments(ev.interval, entry.meta)
                feats.append(seq.data[span.first : span.last + 1].mean(axis=0))
                labels.append(ev.topic_id)
        n_topics = max(labels) + 1
        topic, thist = ct.train_topic_predictor(
            np.asarray(feats),
            np.asarray(labels),
            n_topics,
            ct.TopicTrainConfig(lr=cap["topic_lr"], epochs=cap["topic_epochs"], seed=seed * 8 + 5),
        )
        print(f"train-captioner: topic predictor loss {thist[0]:.4f} -> {thist[-1]:.4f}")

    model = DecoderModel.init(
        variant,
        vocab_size=len(vocab),
        feature_dim=feature_dim,
        d_embed=cap["d_embed"],
        d_hidden=cap["d_hidden"],
        topic=topic,
        rng=np.random.default_rng([seed, 0x494E4954, vidx]),
        use_boundary_context=cap["boundary_context"],
    )
    pairs = [
        (cond, vocab.encode(ev.caption) + [vocab.eos])
        for cond, ev in _xe_pairs(manifest, loader, model)
    ]
    trained, history = ct.train_xe(
        model,
        pairs,
        vocab,
        ct.XeConfig(lr=cap["lr"], clip=cap["clip"], epochs=cap["xe_epochs"], seed=seed * 8 + 1 + vidx),
    )
    out = args.out or _run_path(args, f"captioner.{variant}.json")
    trained.save(out)
    _write_resolved(args, cfg, "train-captioner", {"variant": variant, "out": out})
    ppl0, ppl1 = float(np.exp(history[0])), float(np.exp(history[-1]))
    print(f"train-captioner[{variant}]: perplexity {ppl0:.2f} -> {ppl1:.2f}, model -> {out}")


def cmd_scst(args, cfg) -> None:
    variant = args.variant
    manifest, loader = _load_manifest_features(args, cfg, args.split)
    vocab = Vocabulary.load(_run_path(args, "vocab.json"))
    checkpoint = args.checkpoint or _run_path(args, f"captioner.{variant}.json")
    model = DecoderModel.load(checkpoint)
    s = cfg["scst"]
    scfg = ct.ScstConfig(
        alpha_cider=args.alpha_cider if args.alpha_cider is not None else s["alpha_cider"],
        alpha_meteor=args.alpha_meteor if args.alpha_meteor is not None else s["alpha_meteor"],
        lr=s["lr"],
        clip=s["clip"],
        max_len=cfg["captioner"]["max_len"],
    )
    pairs = _xe_pairs(manifest, loader, model)
    from .metrics import NGramStats
    from .vocab import tokenize

    stats = NGramStats.from_documents([[tokenize(ev.caption)] for _, ev in pairs])
    opt = ct.Adam(lr=scfg.lr, beta1=scfg.beta1, beta2=scfg.beta2, eps=scfg.eps)
    rng = np.random.default_rng([cfg["seed"], 0x53435354, VARIANT_ORDER.index(variant)])
    rewards = []
    for _ in range(s["epochs"]):
        order = rng.permutation(len(pairs))
        for idx in order:
            cond, ev = pairs[idx]
            info = ct.scst_update(
                model, cond, [tokenize(ev.caption)], vocab, scfg, opt, rng, stats
            )
            rewards.append(info["greedy_reward"])
    out = args.out or _run_path(args, f"captioner.{variant}.scst.json")
    model.save(out)
    _write_resolved(args, cfg, "scst", {"variant": variant, "checkpoint": checkpoint, "out": out})
    mean_r = float(np.mean(rewards)) if rewards else 0.0
    print(f"scst[{variant}]: {len(rewards)} updates, mean greedy reward {mean_r:.3f}, -> {out}")


def _default_checkpoints(args) -> list[str]:
    picks = []
    for variant in VARIANT_ORDER:
        scst_path = _run_path(args, f"captioner.{variant}.scst.json")
        xe_path = _run_path(args, f"captioner.{variant}.json")
        if os.path.exists(scst_path):
            picks.append(scst_path)
        elif os.path.exists(xe_path):
            picks.append(xe_path)
    if not picks:
        raise DataError(f"no captioner checkpoints found under '{args.run_dir}'")
    return picks


def cmd_caption(args, cfg) -> None:
    manifest, loader = _load_manifest_features(args, cfg, args.split)
    vocab = Vocabulary.load(_run_path(args, "vocab.json"))
    paths = args.checkpoints or _default_checkpoints(args)
    models = [DecoderModel.load(p) for p in paths]
    beam = args.beam if args.beam is not None else cfg["caption"]["beam"]
    max_len = cfg["captioner"]["max_len"]
    scored = read_scored(args.scored or _run_path(args, f"scored.{args.split}.jsonl"))
    out = args.out or _run_path(args, f"captions.{args.split}.jsonl")
    n = 0
    with atomic_path(out) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        for entry in manifest:
            vid = entry.meta.video_id
            props = scored.get(vid, [])
            if not props:
                continue
            seq, ctx = loader(entry)
            for sp in props:
                span = interval_to_segments(sp.interval, entry.meta)
                conds = [make_span_context(m, seq, span, ctx) for m in models]
                hyp = beam_search(models, conds, vocab.eos, vocab.bos, beam=beam, max_len=max_len)
                fh.write(
                    json.dumps(
                        {
                            "video_id": vid,
                            "start": float(sp.interval.start),
                            "end": float(sp.interval.end),
                            "caption": " ".join(vocab.decode(hyp.tokens)),
                            "s_c": float(hyp.s_c),
                            "log_prob": float(hyp.log_prob),
                        }
                    )
                )
                fh.write("\n")
                n += 1
    _write_resolved(args, cfg, "caption", {"checkpoints": paths, "out": out})
    print(f"caption: {n} proposals captioned with {len(models)}-model ensemble -> {out}")


def _read_caption_dump(path) -> dict[str, list[dict]]:
    by_video: dict[str, list[dict]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                by_video.setdefault(str(obj["video_id"]), []).append(obj)
            except (KeyError, ValueError) as exc:
                raise DataError(f"'{path}' line {line_no + 1}: {exc}") from exc
    return by_video


def cmd_rerank(args, cfg) -> None:
    captions_path = args.captions or _run_path(args, f"captions.{args.split}.jsonl")
    scored_path = args.scored or _run_path(args, f"scored.{args.split}.jsonl")
    vocab = Vocabulary.load(_run_path(args, "vocab.json"))
    top_k = args.top_k if args.top_k is not None else cfg["rerank"]["top_k"]
    caps = _read_caption_dump(captions_path)
    scored = read_scored(scored_path)

    events_by_video = {}
    jsonl_rows = []
    for vid, rows in caps.items():
        sp_index = {
            (sp.interval.start, sp.interval.end): sp for sp in scored.get(vid, [])
        }
        events = []
        for row in rows:
            key = (float(row["start"]), float(row["end"]))
            if key not in sp_index:
                raise DataError(
                    f"caption for {vid} [{key[0]}, {key[1]}) has no scored proposal"
                )
            hyp = CaptionHypothesis(
                tokens=vocab.encode(row["caption"]) + [vocab.eos],
                log_prob=float(row["log_prob"]),
                s_c=float(row["s_c"]),
            )
            events.append((sp_index[key], hyp, row["caption"].split()))
        ranked = rerank(events, top_k=top_k)
        events_by_video[vid] = ranked
        for ev in ranked:
            jsonl_rows.append(
                {
                    "video_id": vid,
                    "start": float(ev.interval.start),
                    "end": float(ev.interval.end),
                    "caption": " ".join(ev.caption),
                    "s_c": float(ev.s_c),
                    "log_prob": 0.0,
                }
            )

    out_jsonl = args.out_jsonl or _run_path(args, f"reranked.{args.split}.jsonl")
    with atomic_path(out_jsonl) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        for row in jsonl_rows:
            fh.write(json.dumps(row))
            fh.write("\n")
    out_sub = args.out_submission or _run_path(args, f"submission.{args.split}.json")
    write_submission(out_sub, events_by_video)
    _write_resolved(args, cfg, "rerank", {"captions": captions_path, "out": out_sub})
    n = sum(len(v) for v in events_by_video.values())
    print(f"rerank: kept {n} events (top {top_k} per video) -> {out_sub}")


def _intervals_from_predictions(path) -> dict[str, list[Interval]]:
    """Read intervals from either a scored or a candidate JSONL dump."""
    by_video: dict[str, list[Interval]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            by_video.setdefault(str(obj["video_id"]), []).append(
                Interval(float(obj["start"]), float(obj["end"]))
            )
    return by_video


def cmd_eval_props(args, cfg) -> None:
    manifest = read_manifest(args.manifest or _manifest_path(args, args.split))
    predictions_path = args.predictions or _run_path(args, f"scored.{args.split}.jsonl")
    preds = _intervals_from_predictions(predictions_path)
    gt = {
        e.meta.video_id: [ev.interval for ev in e.events] for e in manifest
    }
    pr = proposal_pr(preds, gt, thresholds=tuple(cfg["eval"]["thresholds"]))
    report = EvalReport(proposals=pr, caption_scores={})
    out = args.out or _run_path(args, f"eval.proposals.{args.split}.json")
    report.save(out, out.replace(".json", ".txt"))
    _write_resolved(args, cfg, "eval-props", {"predictions": predictions_path, "out": out})
    print(report.format_table())


def cmd_eval_caps(args, cfg) -> None:
    manifest = read_manifest(args.manifest or _manifest_path(args, args.split))
    predictions_path = args.predictions or _run_path(args, f"reranked.{args.split}.jsonl")
    caps = _read_caption_dump(predictions_path)
    preds = {
        vid: [(Interval(float(r["start"]), float(r["end"])), str(r["caption"])) for r in rows]
        for vid, rows in caps.items()
    }
    gt = {
        e.meta.video_id: [(ev.interval, ev.caption) for ev in e.events] for e in manifest
    }
    report = dense_caption_eval(preds, gt, thresholds=tuple(cfg["eval"]["thresholds"]))
    out = args.out or _run_path(args, f"eval.captions.{args.split}.json")
    report.save(out, out.replace(".json", ".txt"))
    _write_resolved(args, cfg, "eval-caps", {"predictions": predictions_path, "out": out})
    print(report.format_table())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densecap",
        description="Dense video event captioning pipeline on segment features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, split_default="train"):
        p.add_argument("--run-dir", required=True, help="working directory for all artifacts")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--split", default=split_default, choices=("train", "val"))

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)

    p = sub.add_parser("cluster", help="fit the window bank on groundtruth proportions")
    common(p)
    p.add_argument("--k", type=int, default=None, help="number of window clusters")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("propose", help="enumerate and label sliding-window candidates")
    common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--bank", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train-ranker", help="train the proposal scorer")
    common(p)
    p.add_argument("--candidates", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("rank", help="score candidates and filter by threshold")
    common(p, split_default="val")
    p.add_argument("--candidates", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train-captioner", help="cross-entropy pretrain one caption model")
    common(p)
    p.add_argument("--variant", required=True, choices=VARIANT_ORDER)
    p.add_argument("--out", default=None)

    p = sub.add_parser("scst", help="self-critical fine-tuning of one caption model")
    common(p)
    p.add_argument("--variant", required=True, choices=VARIANT_ORDER)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--alpha-cider", type=float, default=None)
    p.add_argument("--alpha-meteor", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("caption", help="ensemble beam-search captions for scored proposals")
    common(p, split_default="val")
    p.add_argument("--checkpoints", nargs="+", default=None)
    p.add_argument("--scored", default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("rerank", help="combine scores and keep the top-k events per video")
    common(p, split_default="val")
    p.add_argument("--captions", default=None)
    p.add_argument("--scored", default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--out-jsonl", default=None)
    p.add_argument("--out-submission", default=None)

    p = sub.add_parser("eval-props", help="proposal precision/recall report")
    common(p, split_default="val")
    p.add_argument("--predictions", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("eval-caps", help="dense captioning metric report")
    common(p, split_default="val")
    p.add_argument("--predictions", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None)

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "propose": cmd_propose,
    "train-ranker": cmd_train_ranker,
    "rank": cmd_rank,
    "train-captioner": cmd_train_captioner,
    "scst": cmd_scst,
    "caption": cmd_caption,
    "rerank": cmd_rerank,
    "eval-props": cmd_eval_props,
    "eval-caps": cmd_eval_caps,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config)
        overrides = {"seed": args.seed}
        if args.command == "cluster" and getattr(args, "k", None) is not None:
            overrides["cluster.k"] = args.k
        cfg = cfgmod.apply_overrides(cfg, overrides)
        _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: internal: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
