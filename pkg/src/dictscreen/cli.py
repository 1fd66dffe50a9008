"""Subcommand CLI over the experiment pipeline.

Every pipeline command takes ``--config`` plus optional ``--out`` /
``--seed`` overrides; ``synth`` generates a planted-keyword dataset.
Stage commands are targets: each one loads or computes its prerequisites,
so running ``score`` on a fresh directory ingests and trains first.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .pipeline import ExperimentContext, StageError, load_config


def _add_config_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="experiment config file")
    sub.add_argument("--out", default=None, help="override the output directory")
    sub.add_argument("--seed", type=int, default=None, help="override the seed")


def _load(args) -> pipeline.ExperimentConfig:
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _cmd_stage(args, upto: str) -> None:
    ctx = ExperimentContext(config=_load(args))
    train_corpus, test_corpus = pipeline.ensure_corpora(ctx)
    if upto == "ingest":
        print(f"dictionary: {train_corpus.dictionary.size} keywords")
        return
    benchmark = pipeline.ensure_benchmark(ctx, train_corpus)
    if upto == "train":
        print(f"benchmark checkpoint: {ctx.path('benchmark_ckpt')}")
        return
    table = pipeline.ensure_scores(ctx, benchmark, train_corpus)
    if upto == "score":
        print(f"scores ({table.scorer}): {ctx.path('scores')}")
        return
    kept = pipeline.ensure_screened(ctx, table, train_corpus.dictionary)
    if upto == "screen":
        print(f"kept {len(kept) - 1} keywords: {ctx.path('screened_dictionary')}")
        return
    reduced, reduced_train = pipeline.ensure_reduced(ctx, train_corpus, kept)
    if upto == "retrain":
        print(f"reduced checkpoint: {ctx.path('reduced_ckpt')}")
        return
    report = pipeline.ensure_report(
        ctx, benchmark, reduced, train_corpus, reduced_train, test_corpus, kept
    )
    pipeline.write_manifest(ctx.config.out_dir)
    print(
        f"benchmark {report.benchmark_acc:.4f}  reduced {report.reduced_acc:.4f}  "
        f"prr {report.prr:.4f}  drr {report.drr:.4f}  trr {report.trr:.4f}"
    )


def _cmd_sweep(args) -> None:
    config = _load(args)
    k_values = [int(v) for v in args.k.split(",") if v.strip()]
    reports = pipeline.sweep_k(config, k_values)
    for r in reports:
        print(
            f"K={r.k_kept}  acc {r.reduced_acc:.4f}  prr {r.prr:.4f}  trr {r.trr:.4f}"
        )


def _cmd_synth(args) -> None:
    train_path, test_path = pipeline.make_synthetic(
        classes=args.classes,
        docs_per_class=args.docs_per_class,
        vocab_size=args.vocab,
        planted_per_class=args.planted,
        doc_length=args.length,
        noise_rate=args.noise,
        seed=args.seed,
        out_dir=args.out,
        test_docs_per_class=args.test_per_class,
    )
    print(train_path)
    print(test_path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dictscreen",
        description="Compress a text classifier by screening its keyword dictionary.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in ("ingest", "train", "score", "screen", "retrain", "report"):
        p = sub.add_parser(stage, help=f"run stages up to and including {stage}")
        _add_config_args(p)
        p.set_defaults(func=lambda a, s=stage: _cmd_stage(a, s))

    p = sub.add_parser("run-all", help="run the full pipeline and write the report")
    _add_config_args(p)
    p.set_defaults(func=lambda a: _cmd_stage(a, "report"))

    p = sub.add_parser("sweep", help="screen/retrain/report once per K value")
    _add_config_args(p)
    p.add_argument("--k", required=True, help="comma-separated K values, e.g. 1000,3000")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("synth", help="generate a planted-keyword dataset")
    p.add_argument("--out", required=True, help="directory for train.csv/test.csv")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--docs-per-class", type=int, default=1000)
    p.add_argument("--test-per-class", type=int, default=None)
    p.add_argument("--vocab", type=int, default=500)
    p.add_argument("--planted", type=int, default=10)
    p.add_argument("--length", type=int, default=30)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except StageError as exc:
        print(f"dictscreen: stage '{exc.stage}' failed: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"dictscreen: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
