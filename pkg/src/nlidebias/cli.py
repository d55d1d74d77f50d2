"""Command-line entry point.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
Every command takes an experiment config file; logs go to the run's
output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import (
    ConfigError,
    load_config,
    run_augment,
    run_eval,
    run_gen_synthetic,
    run_merge,
    run_report,
    run_sweep,
    run_train,
    run_train_expert,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nli-debias",
        description="Train, debias, augment, merge, and evaluate text-pair classifiers.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log to stderr too")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config file (INI)")
        return p

    with_config("gen-synthetic", "generate a planted-bias corpus")

    p = with_config("train-expert", "train one frozen bias-only expert")
    p.add_argument("--name", required=True, help="expert name (e.g. partialInput)")

    with_config("train", "train per the configured plan and evaluate the suite")
    with_config("augment", "augment the configured training set")
    with_config("merge", "merge training sets with the configured weights")
    with_config("sweep", "run the plan x seed cross product")

    p = with_config("eval", "evaluate a checkpoint or predictions file")
    p.add_argument("--checkpoint", help="model checkpoint to score")
    p.add_argument("--predictions", help="predictions TSV to score")

    p = sub.add_parser("report", help="re-emit a stored report")
    p.add_argument("--from", dest="source", required=True, help="report.json path")
    p.add_argument("--format", choices=("tsv", "markdown"), default="markdown")
    p.add_argument("--out", required=True, help="output path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)

    try:
        if args.command == "report":
            path = run_report(args.source, args.format, args.out)
            print(path)
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "gen-synthetic":
            artifacts = {"written": run_gen_synthetic(cfg)}
        elif args.command == "train-expert":
            artifacts = {"checkpoint": run_train_expert(cfg, args.name)}
        elif args.command == "train":
            artifacts = run_train(cfg)
        elif args.command == "augment":
            artifacts = run_augment(cfg)
        elif args.command == "merge":
            artifacts = run_merge(cfg)
        elif args.command == "sweep":
            artifacts = run_sweep(cfg)
        elif args.command == "eval":
            artifacts = run_eval(cfg, args.checkpoint, args.predictions)
        else:  # pragma: no cover - argparse enforces the choices
            raise AssertionError(args.command)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logging.getLogger(__name__).exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    for label, value in artifacts.items():
        if isinstance(value, list):
            for item in value:
                print(f"{label}: {item}")
        else:
            print(f"{label}: {value}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
