#!/usr/bin/env python3
"""
Asynchronous activation / schedule / PGD-strength study.

Trains one centralized model per (activation, schedule, pgd_iters) triple from
a base config and writes one CSV row per triple.

Usage examples:
  ./01_Activation_Sweep.py --config configs/central_blobs.yaml \
    --output results/activation_sweep.csv --max-concurrency 4 --verbose
  ./01_Activation_Sweep.py --config configs/central_blobs.yaml --activations relu telu --pgd-iters 7
"""

import argparse
import asyncio
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import pandas as pd

try:
    from dotenv import load_dotenv
except Exception:
    load_dotenv = None

from src.Auxiliary.Errors import ExperimentConfigError
from src.Auxiliary.Seeding import derive_seed
from src.Engine.Activations import ACTIVATION_NAMES
from src.Federation.Client import adversarial_train
from src.Harness.Evaluation import evaluate_all
from src.Harness.Experiment_Config import ExperimentConfig, load_config, parse_config
from src.Harness.Experiment_Runner import CENTRAL_TRAIN_STREAM, EVAL_STREAM, build_network, load_data

COLUMNS = ["activation", "schedule", "pgd_iters", "natural_acc", "robust_acc"]


def variant(base: ExperimentConfig, activation: str, schedule: str, pgd_iters: int) -> ExperimentConfig:
    data = base.model_dump()
    data["nn"]["activation"] = activation
    data["nn"]["schedule"] = schedule
    data["attack"]["pgd_iters"] = pgd_iters
    return parse_config(data)


def train_and_evaluate(cfg: ExperimentConfig, train, test) -> Dict[str, Any]:
    net = build_network(cfg, train.image_shape, train.n_classes)
    result = adversarial_train(
        net, train, cfg.augment_plan(), cfg.nn.sgd(),
        epochs=cfg.nn.epochs,
        batch_size=cfg.nn.batch_size,
        seed=derive_seed(cfg.seed, CENTRAL_TRAIN_STREAM),
    )
    snapshot = evaluate_all(result.net.in_mode("test"), test, cfg.eval, cfg.attack, derive_seed(cfg.seed, EVAL_STREAM))
    return {
        "activation": cfg.nn.activation.kind,
        "schedule": cfg.nn.schedule,
        "pgd_iters": cfg.attack.pgd_iters,
        "natural_acc": snapshot.natural_acc,
        "robust_acc": snapshot.robust_acc.get(cfg.eval.headline_attack),
    }


async def run_variant(cfg: ExperimentConfig, train, test, *, logger: logging.Logger, sem: asyncio.Semaphore) -> Dict[str, Any]:
    async with sem:
        logger.debug("Training %s / %s / PGD-%d", cfg.nn.activation.kind, cfg.nn.schedule, cfg.attack.pgd_iters)
        return await asyncio.to_thread(train_and_evaluate, cfg, train, test)


async def amain(args) -> int:
    if load_dotenv is not None and not args.no_env:
        load_dotenv()

    default = os.getenv("FEDAT_LOG_LEVEL", "INFO").upper()
    level = logging.DEBUG if args.verbose else getattr(logging, default, logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s | %(levelname)s | %(message)s")
    logger = logging.getLogger("activation_sweep")

    try:
        base = load_config(args.config, seed=args.seed)
        variants = [
            variant(base, activation, schedule, iters)
            for activation in args.activations
            for schedule in args.schedules
            for iters in args.pgd_iters
        ]
    except (FileNotFoundError, ExperimentConfigError) as exc:
        logger.error("%s", exc)
        return 2

    train, test = load_data(base)
    max_conc = max(1, int(args.max_concurrency or os.getenv("FEDAT_MAX_CONCURRENCY", 1)))
    sem = asyncio.Semaphore(max_conc)
    logger.info("Launching %d variant tasks with max concurrency=%d", len(variants), max_conc)

    tasks = {
        asyncio.create_task(run_variant(cfg, train, test, logger=logger, sem=sem)): cfg
        for cfg in variants
    }
    rows: List[Dict[str, Any]] = []
    completed, total, failed = 0, len(tasks), 0
    for fut in asyncio.as_completed(list(tasks)):
        try:
            row = await fut
        except Exception as exc:
            logger.exception("Variant failed: %s", exc)
            failed += 1
            continue
        rows.append(row)
        completed += 1
        logger.info(
            "Progress: %d/%d | %s %s PGD-%d natural=%.4f robust=%s",
            completed, total, row["activation"], row["schedule"], row["pgd_iters"], row["natural_acc"], row["robust_acc"],
        )

    # as_completed order depends on timing; the file must not
    out = pd.DataFrame(rows, columns=COLUMNS).sort_values(["activation", "schedule", "pgd_iters"], kind="stable")
    os.makedirs(os.path.dirname(os.path.abspath(args.output)) or ".", exist_ok=True)
    out.to_csv(args.output, index=False)
    logger.info("Done. Rows written: %d to %s (%d failed)", len(out), args.output, failed)
    return 1 if failed else 0


def parse_args(argv: Optional[list[str]] = None):
    parser = argparse.ArgumentParser(description="Activation / schedule / PGD-strength study")
    parser.add_argument("--config", required=True, help="Base YAML experiment config")
    parser.add_argument("--output", default="results/activation_sweep.csv", help="Path to output CSV file")
    parser.add_argument("--activations", nargs="+", default=list(ACTIVATION_NAMES), choices=ACTIVATION_NAMES)
    parser.add_argument("--schedules", nargs="+", default=["fixed", "piecewise"], choices=["fixed", "piecewise"])
    parser.add_argument("--pgd-iters", nargs="+", type=int, default=[7, 14, 21], help="PGD iteration counts")
    parser.add_argument("--seed", type=int, default=None, help="Override experiment.seed")
    parser.add_argument("--max-concurrency", type=int, default=None, help="Max concurrent training tasks")
    parser.add_argument("--verbose", action="store_true", help="Enable debug logging")
    parser.add_argument("--no-env", action="store_true", help="Do not load .env automatically")
    return parser.parse_args(argv)


def main(argv: Optional[list[str]] = None) -> int:
    args = parse_args(argv)
    return asyncio.run(amain(args))


if __name__ == "__main__":
    sys.exit(main())
