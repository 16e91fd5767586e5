#!/usr/bin/env python3
"""
Config-driven experiment runner.

Usage examples:
  ./run_experiment.py train-central --config configs/central_blobs.yaml --seed 1 --out results/central
  ./run_experiment.py train-fed --config configs/fed_two_class_sweep.yaml --verbose
  ./run_experiment.py attack-eval --config configs/attack_eval.yaml
  ./run_experiment.py partition-inspect --config configs/partition_inspect.yaml
  ./run_experiment.py fit-regression --config configs/fit_regression.yaml

Exit codes: 0 success, 2 invalid config or missing input files, 1 anything else.
"""

import argparse
import logging
import os
import sys
from typing import Optional

try:
    from dotenv import load_dotenv
except Exception:
    load_dotenv = None

_weave_enabled = True
try:
    import weave  # type: ignore
except Exception:
    weave = None  # type: ignore
    _weave_enabled = False

from src.Auxiliary.Errors import CifarParseError, ExperimentConfigError, ModelFileError, ShapeMismatchError
from src.Harness.Experiment_Config import load_config
from src.Harness.Experiment_Runner import COMMANDS, run_experiment


def _setup_logging(verbose: bool) -> logging.Logger:
    default = os.getenv("FEDAT_LOG_LEVEL", "INFO").upper()
    level = logging.DEBUG if verbose else getattr(logging, default, logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s | %(levelname)s | %(message)s")
    return logging.getLogger("run_experiment")


def _start_tracing(project: Optional[str], logger: logging.Logger):
    if not project:
        return None
    if not _weave_enabled:
        logger.warning("weave is not installed; running without tracing")
        return None
    try:
        weave.init(project)  # type: ignore
        logger.info("Weave tracing enabled (project %s).", project)
        return weave.op(run_experiment)  # type: ignore
    except Exception as exc:
        logger.warning("Weave init failed, continuing without tracing: %s", exc)
        return None


def parse_args(argv: Optional[list[str]] = None):
    parser = argparse.ArgumentParser(description="Adversarial and federated training experiments")
    parser.add_argument("command", choices=sorted(COMMANDS), help="Pipeline to run")
    parser.add_argument("--config", required=True, help="Path to the YAML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="Override experiment.seed")
    parser.add_argument("--out", default=None, help="Override the output directory")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    parser.add_argument("--no-env", action="store_true", help="Do not load .env automatically")
    parser.add_argument("--weave-project", default=None, help="Trace the run with Weave under this project name")
    return parser.parse_args(argv)


def main(argv: Optional[list[str]] = None) -> int:
    args = parse_args(argv)
    if load_dotenv is not None and not args.no_env:
        load_dotenv()
    logger = _setup_logging(args.verbose)

    try:
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return 2
    except ExperimentConfigError as exc:
        logger.error("%s", exc)
        return 2

    runner = _start_tracing(args.weave_project, logger) or run_experiment
    try:
        report = runner(args.command, cfg)
    except (ExperimentConfigError, FileNotFoundError, CifarParseError, ModelFileError, ShapeMismatchError) as exc:
        logger.error("%s", exc)
        return 2
    except Exception as exc:
        logger.exception("Run failed: %s", exc)
        return 1

    logger.info("Done. natural=%s robust=%s", report.natural_acc, {k: v for k, v in report.robust_acc.items() if v is not None})
    return 0


if __name__ == "__main__":
    sys.exit(main())
