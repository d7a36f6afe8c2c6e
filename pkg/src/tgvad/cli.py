"""Command-line entry point. Subcommands exchange data through files only.

Typical pipeline::

    tgvad synth --out data
    tgvad msta-summarize --manifest data/manifest.json --out work/summaries.jsonl
    tgvad msta-annotate --manifest data/manifest.json --summaries work/summaries.jsonl --out work/annotated.jsonl
    tgvad msta-generate --summaries work/summaries.jsonl --annotated work/annotated.jsonl --out work/generated.jsonl
    tgvad train-text-head --samples work/summaries.jsonl work/annotated.jsonl work/generated.jsonl --out work/text.prm
    tgvad train --manifest data/manifest.json --out work/model.prm
    tgvad score --manifest data/manifest.json --model work/model.prm --text-head work/text.prm --out work/scores.csv
    tgvad eval --manifest data/manifest.json --scores work/scores.csv

Exit status: 0 on success, 2 for usage errors, 1 for any other failure. Errors
are reported on stderr as ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import synth as synth_mod
from .config import RunConfig
from .errors import ConfigError, TgvadError
from .experiments import ABLATIONS, build_text_channel, format_reports, run_ablations
from .io import read_captions, read_manifest, read_scores, write_captions, write_loss_trace, write_scores
from .msta.backends import make_backend
from .msta.embedders import FileEmbedder
from .msta.pipeline import (
    anomaly_pool,
    annotate_captions,
    balance_deficit,
    labeled,
    positive_fraction,
    stage3_generate,
    summarize_videos,
)
from .workflow import (
    config_for_manifest,
    dump_json,
    evaluate,
    fit_detector,
    fit_text_head,
    load_label_records,
    load_model,
    load_text_head,
    load_videos,
    save_model,
    save_text_head,
    score_videos,
    text_prob_fn,
)

logger = logging.getLogger("tgvad")

EXIT_FAILURE = 1


# ---------------------------------------------------------------------------
# configuration helpers
# ---------------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if overrides:
        merged = {k: v for k, v in _as_strings(cfg).items()}
        merged.update(overrides)
        cfg = RunConfig.from_mapping(merged)
    return cfg


def _as_strings(cfg: RunConfig) -> dict:
    out = {}
    for line in cfg.to_ini().splitlines():
        key, _, value = line.partition(" = ")
        out[key] = value
    return out


def _backend(args, cfg: RunConfig):
    return make_backend(args.backend, seed=cfg.seed)


def _captioned_split(manifest, split: str):
    """Captions of one split without loading any feature files."""
    out = []
    for entry in manifest.split(split):
        if entry.captions:
            out.append((entry.id, read_captions(manifest.resolve(entry.captions)), entry.label))
    if not out:
        raise ConfigError(f"no {split} videos with captions in the manifest")
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = synth_mod.SynthSpec(
        train_normal=args.train_normal,
        train_abnormal=args.train_abnormal,
        test_normal=args.test_normal,
        test_abnormal=args.test_abnormal,
        min_snippets=args.min_snippets,
        max_snippets=args.max_snippets,
        strength=args.strength,
        seed=args.seed if args.seed is not None else 0,
    )
    manifest = synth_mod.generate_synthetic_dataset(spec, args.out)
    print(f"wrote {len(manifest.entries)} videos to {args.out}")
    return 0


def cmd_msta_summarize(args) -> int:
    cfg = _run_config(args)
    manifest = read_manifest(args.manifest)
    videos = _captioned_split(manifest, "train")
    summaries = summarize_videos(
        [(vid, [c.text for c in caps], y) for vid, caps, y in videos], _backend(args, cfg)
    )
    write_captions(args.out, summaries)
    print(f"summaries={len(summaries)}")
    return 0


def cmd_msta_annotate(args) -> int:
    cfg = _run_config(args)
    manifest = read_manifest(args.manifest)
    summaries = read_captions(args.summaries)
    captions = [c for _, caps, _ in _captioned_split(manifest, "train") for c in caps]
    annotated = annotate_captions(captions, summaries, cfg.msta_config(), _backend(args, cfg))
    write_captions(args.out, annotated)
    unlabeled = sum(1 for c in annotated if c.label is None)
    print(f"annotated={len(annotated)} unlabeled={unlabeled}")
    return 0


def cmd_msta_generate(args) -> int:
    cfg = _run_config(args)
    mcfg = cfg.msta_config()
    summaries = read_captions(args.summaries)
    annotated = read_captions(args.annotated)
    n = mcfg.n_generate if mcfg.n_generate is not None else balance_deficit(summaries + annotated)
    generated = stage3_generate(anomaly_pool(annotated, mcfg.delta), n, mcfg, _backend(args, cfg))
    write_captions(args.out, generated)
    frac = positive_fraction(summaries + annotated + generated)
    print(f"generated={len(generated)} positive_fraction={frac:.4f}")
    return 0


def cmd_train_text_head(args) -> int:
    cfg = _run_config(args)
    samples = [s for path in args.samples for s in read_captions(path)]
    embedder = FileEmbedder(args.embeddings) if args.embeddings else None
    head, embedder, losses = fit_text_head(labeled(samples), cfg, embedder)
    save_text_head(args.out, head, embedder)
    if args.loss_trace:
        write_loss_trace(args.loss_trace, losses)
    print(f"samples={len(labeled(samples))} final_loss={losses[-1]:.6f}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    manifest = read_manifest(args.manifest)
    dims = config_for_manifest(cfg, manifest)
    videos = load_videos(manifest, "train", list(dims))

    def progress(step, loss):
        logger.info("step %d loss %.6f", step, loss)

    model, result = fit_detector(videos, cfg, dims, progress)
    save_model(args.out, model, cfg)
    if args.loss_trace:
        write_loss_trace(args.loss_trace, result.losses)
    print(f"steps={result.steps} final_loss={result.losses[-1] if result.losses else float('nan'):.6f}")
    return 0


def cmd_score(args) -> int:
    model, cfg = load_model(args.model)
    alpha = cfg.alpha if args.alpha is None else args.alpha
    manifest = read_manifest(args.manifest)
    videos = load_videos(manifest, args.split, list(model.cfg.modalities))
    prob_fn = None
    if args.text_head:
        head, embedder = load_text_head(args.text_head)
        prob_fn = text_prob_fn(head, embedder)
    rows = score_videos(model, videos, alpha, prob_fn)
    write_scores(args.out, rows)
    print(f"scored {len(videos)} videos, {len(rows)} snippets")
    return 0


def cmd_eval(args) -> int:
    manifest = read_manifest(args.manifest)
    videos = load_label_records(manifest, args.split, args.frames_per_snippet)
    report = evaluate(read_scores(args.scores), videos, args.column)
    for line in report.lines():
        print(line)
    if args.json:
        dump_json(args.json, report.to_dict())
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    manifest = read_manifest(args.manifest)
    dims = config_for_manifest(cfg, manifest)
    train = load_videos(manifest, "train", list(dims))
    test = load_videos(manifest, "test", list(dims))
    text = build_text_channel(cfg, train, _backend(args, cfg)) if any(v.captions for v in train) else None
    names = args.variants or list(ABLATIONS)
    unknown = [n for n in names if n not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown ablation variants {unknown}; choose from {list(ABLATIONS)}")
    reports = run_ablations(cfg, train, test, dims, {n: ABLATIONS[n] for n in names}, text)
    print(format_reports(reports))
    if args.out:
        dump_json(args.out, {"reports": [r.to_dict() for r in reports]})
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, backend: bool = False):
    p.add_argument("--config", type=Path, help="flat key = value run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    if backend:
        p.add_argument("--backend", choices=("mock", "remote"), default="mock")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgvad", description="Text-guided multimodal video anomaly detection")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-normal", type=int, default=20)
    p.add_argument("--train-abnormal", type=int, default=20)
    p.add_argument("--test-normal", type=int, default=10)
    p.add_argument("--test-abnormal", type=int, default=10)
    p.add_argument("--min-snippets", type=int, default=synth_mod.SynthSpec.min_snippets)
    p.add_argument("--max-snippets", type=int, default=synth_mod.SynthSpec.max_snippets)
    p.add_argument("--strength", type=float, default=synth_mod.SynthSpec.strength)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("msta-summarize", help="stage I: one summary per training video")
    _common(p, backend=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_msta_summarize)

    p = sub.add_parser("msta-annotate", help="stage II: pseudo-label training captions")
    _common(p, backend=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--summaries", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_msta_annotate)

    p = sub.add_parser("msta-generate", help="stage III: generate anomaly captions")
    _common(p, backend=True)
    p.add_argument("--summaries", type=Path, required=True)
    p.add_argument("--annotated", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_msta_generate)

    p = sub.add_parser("train-text-head", help="fit the text anomaly classifier")
    _common(p)
    p.add_argument("--samples", type=Path, nargs="+", required=True)
    p.add_argument("--embeddings", type=Path, help="precomputed caption embeddings (JSON lines)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--loss-trace", type=Path)
    p.set_defaults(func=cmd_train_text_head)

    p = sub.add_parser("train", help="train the detector with the top-K MIL loss")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--loss-trace", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write per-snippet score curves as CSV")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--text-head", type=Path)
    p.add_argument("--alpha", type=float, help="defaults to the alpha stored with the model")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="frame-level AUC and AP of a score file")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--column", choices=("s_hat", "s", "p"), default="s_hat")
    p.add_argument("--frames-per-snippet", type=int, help="defaults to the value in the feature file headers")
    p.add_argument("--json", type=Path, help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train fusion variants and print comparable reports")
    _common(p, backend=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--variants", nargs="+", metavar="NAME")
    p.add_argument("--out", type=Path, help="JSON report")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except TgvadError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
