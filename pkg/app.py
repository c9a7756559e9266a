#!/usr/bin/env python3
"""
Main application entry point for tabbin.

Sub-commands:
  bin       fit quantile (or equal-width) bins on the train split
  pretrain  self-supervised pretraining of encoder and decoders
  eval      probe / finetune / bin_error / pca / supervised evaluation
  grid      pretrain + probe every cell of a hyperparameter grid
  ablate    retrain with one property of the bin targets removed

Exit codes: 0 success, 1 validation error, 2 runtime or numerical failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from dotenv import load_dotenv

load_dotenv()

from config import Config, ExperimentConfig  # noqa: E402

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None):
    """Log to stdout in the same format for every command."""
    logging.basicConfig(
        level=getattr(logging, (level or Config.LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stdout,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabbin",
        description="Binning as a pretext task: self-supervised learning for tabular data.",
    )
    parser.add_argument("--config", help="experiment config (JSON)")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="training seed (overrides seed)")
    parser.add_argument("--threads", type=int, help=f"worker threads (default: TABBIN_THREADS={Config.THREADS_SETTING})")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field; the value is parsed as JSON when possible")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bin", help="fit and save the binning")
    sub.add_parser("pretrain", help="self-supervised pretraining")

    evaluate = sub.add_parser("eval", help="evaluate a pretrained encoder")
    evaluate.add_argument("--mode", default="probe",
                          choices=["probe", "finetune", "bin_error", "pca", "supervised"])

    grid = sub.add_parser("grid", help="grid search over masking probability, bin count and objective")
    grid.add_argument("--resume", action="store_true", help="skip cells that already have a report")

    ablate = sub.add_parser("ablate", help="ablate a property of the bin targets")
    ablate.add_argument("--which", required=True,
                        choices=["shuffle_order", "bin_averages", "per_value", "equal_width"])
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then --set overrides, then the global flags."""
    config = ExperimentConfig.load(args.config, args.set)
    changes = {}
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if changes:
        config = replace(config, **changes)
        config.validate()
    return config


def dispatch(args: argparse.Namespace, config: ExperimentConfig):
    if args.command == "bin":
        from commands import bin as command
        return command.run(config)
    if args.command == "pretrain":
        from commands import pretrain as command
        return command.run(config)
    if args.command == "eval":
        from commands import evaluate as command
        return command.run(config, args.mode)
    if args.command == "grid":
        from commands import grid as command
        return command.run(config, resume=args.resume)
    from commands import ablate as command
    return command.run(config, args.which)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        Config.validate()
    except ValueError as e:
        setup_logging("INFO")
        logger.error(f"Configuration Error: {e}")
        return 1
    setup_logging()

    try:
        config = resolve_config(args)
        dispatch(args, config)
    except ValueError as e:
        logger.error(f"Validation Error: {e}")
        return 1
    except (RuntimeError, OSError) as e:
        logger.error(f"Run failed: {e}")
        return 2
    except KeyboardInterrupt:
        logger.info("Interrupted. Shutting down...")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
