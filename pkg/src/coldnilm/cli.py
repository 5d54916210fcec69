"""``coldnilm`` command line: gen-toy, normalize, synthesize, featurize, train, search,
tune-threshold, evaluate.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from . import pipeline as P
from .config import SPLITS, ConfigError, load_config
from .features import ShapeMismatch as FeatureShapeMismatch
from .model import ShapeMismatch as ModelShapeMismatch
from .sns import Exhausted

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2


def _splits(value: str) -> list[str]:
    return list(SPLITS) if value == "all" else [value]


def cmd_gen_toy(cfg, out, args):
    if args.specs:
        cfg.raw["toy"]["specs"] = str(Path(args.specs).resolve())
    counts = P.gen_toy(cfg, out, args.n_per_label)
    print(f"wrote {sum(counts.values())} signatures for {len(counts)} labels to {cfg.path('raw', out)}")


def cmd_normalize(cfg, out, args):
    print(P.rejection_text(P.normalize(cfg, out)), end="")


def cmd_synthesize(cfg, out, args):
    for split in _splits(args.split):
        rows = P.synthesize(cfg, out, split)
        print(f"[{split}]")
        print(P.schedule_text(rows), end="")


def cmd_featurize(cfg, out, args):
    for split in _splits(args.split):
        info = P.featurize(cfg, out, split, fit_stats=True if args.fit_stats else None)
        print(f"[{split}] {info['n']} spectrograms of {info['shape'][0]} x {info['shape'][1]}")


def cmd_train(cfg, out, args):
    def progress(row):
        print(f"step {row['step']:>6}  loss {row['loss']:.5f}  val wmF1 {row['val_wmf1']:.4f}", flush=True)

    result = P.train(cfg, out, progress if not args.quiet else None)
    print(f"best val weighted mF1 {result.best_score:.4f} at step {result.best_step} "
          f"(threshold {result.best_threshold:.4f})")


def cmd_search(cfg, out, args):
    result = P.search(cfg, out)
    print(f"{len(result.trials)} trials, rungs {result.rungs}, promotions {result.promotions}")
    print(f"best {result.best_config} score {result.best_score:.4f}")


def cmd_tune_threshold(cfg, out, args):
    rec = P.tune_threshold(cfg, out, args.split)
    print(f"threshold {rec['threshold']:.4f} weighted mF1 {rec['weighted_mf1']:.4f} on {args.split}")


def cmd_evaluate(cfg, out, args):
    ev = P.evaluate(cfg, out, args.split, args.threshold)
    print(ev.report.text(), end="")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the flags without defaults so they never mask earlier values
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=d(None), help="pipeline YAML (default: built-in desk config)")
    common.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    common.add_argument("--threads", type=int, default=d(None), help="worker threads")
    common.add_argument("--out", default=d("."), help="working directory for all artifacts")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coldnilm", parents=[_global_flags(False)],
                                     description="Synthetic concurrent-load NILM pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    p = sub.add_parser("gen-toy", parents=[common], help="generate parametric toy signatures")
    p.add_argument("--specs", help="YAML/JSON list of toy signature specs")
    p.add_argument("--n-per-label", type=int)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("normalize", parents=[common], help="normalize raw signatures into the baseline set")
    p.set_defaults(func=cmd_normalize)

    for name, func, help_ in (("synthesize", cmd_synthesize, "synthesize aggregate datasets"),
                              ("featurize", cmd_featurize, "compute standardized spectrograms")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--split", choices=[*SPLITS, "all"], default="all")
        if name == "featurize":
            p.add_argument("--fit-stats", action="store_true", help="fit statistics (train split only)")
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[common], help="train the network")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", parents=[common], help="hyperparameter search")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("tune-threshold", parents=[common], help="pick the decision threshold")
    p.add_argument("--split", choices=SPLITS, default="val")
    p.set_defaults(func=cmd_tune_threshold)

    p = sub.add_parser("evaluate", parents=[common], help="score a split and write plot data")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.func(cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (io.DataError, Exhausted, FeatureShapeMismatch, ModelShapeMismatch, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
