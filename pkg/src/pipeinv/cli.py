"""Command-line entry point.

    pipeinv dataset build --config exp.yaml [--out CACHE_DIR]
    pipeinv run --config exp.yaml [--out DIR] [--seed S] [--folds 0,1] [--resume]
    pipeinv report --out DIR
    pipeinv cka --out DIR [--seed S] [--folds 0,1]
    pipeinv probe --out DIR [--folds 0,1]

Exit status is 2 for configuration errors (the message names the field) and
1 for failures while running.  The dataset cache root comes from
``PIPEINV_DATA`` (default ``~/.cache/pipeinv``).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError
from .experiment import build_dataset, emit_report, load_config, recompute, run_experiment

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _folds(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated fold indices, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipeinv", description="Train and compare multi-view image classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="dataset operations")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    build = ds_sub.add_parser("build", help="build and cache the dataset named in a config")
    build.add_argument("--config", required=True)
    build.add_argument("--out", help="cache directory (default: under the data root)")

    run = sub.add_parser("run", help="train and evaluate every run, seed and fold of a config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="results directory (default: config 'output' or runs/<name>)")
    run.add_argument("--seed", type=int, action="append", help="training seed; repeat for several")
    run.add_argument("--folds", type=_folds)
    run.add_argument("--resume", action="store_true", help="continue an unfinished results directory")

    rep = sub.add_parser("report", help="summarize a results directory")
    rep.add_argument("--out", required=True)
    rep.add_argument("--report-dir")

    for verb, text in (("cka", "recompute between-view CKA grids"), ("probe", "recompute frozen-encoder probes")):
        p = sub.add_parser(verb, help=text + " from saved checkpoints")
        p.add_argument("--out", required=True)
        p.add_argument("--folds", type=_folds)
        if verb == "cka":
            p.add_argument("--seed", type=int, help="minibatch assignment seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "dataset":
            bench, path = build_dataset(load_config(args.config).dataset, args.out)
            print(f"{bench.name}: {len(bench.pool)} pool pairs, {len(bench.test)} test pairs, {bench.folds.k} folds -> {path}")
        elif args.command == "run":
            out, worked = run_experiment(load_config(args.config), args.out, args.seed, args.folds, args.resume)
            print(f"{out}: {'done' if worked else 'complete, nothing to do'}")
        elif args.command == "report":
            print(emit_report(args.out, args.report_dir))
        else:
            seed = getattr(args, "seed", None)
            for path in recompute(args.out, args.command, seed, args.folds):
                print(path)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - report any failure with exit 1
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
