"""
Server side of the simulated federation: FedAvg and the round loop.

Clients of a round train concurrently as asyncio tasks (bounded by a
semaphore, CPU work moved to threads). Results are consumed in client-id
order and averaged left to right, so any concurrency level yields the same
bits as a serial run.
"""

import asyncio
import hashlib
import logging
import time
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

from src.Auxiliary.Errors import ClientTrainingError, ShapeMismatchError
from src.Auxiliary.Seeding import spawn_seeds
from src.Data.Augmentation import AugmentPlan
from src.Data.Labeled_Batch import LabeledBatch
from src.Data.Partition import PartitionPlan
from src.Engine.Network import Network
from src.Engine.Optimizer import SgdConfig
from src.Federation.Client import ClientState, FedConfig, TrainResult, build_clients, local_adv_train
from src.Harness.Evaluation import EvalSnapshot

logger = logging.getLogger(__name__)


def fedavg(models: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    """Size-weighted mean of parameter vectors, summed in the given order."""
    if not models:
        raise ValueError("fedavg needs at least one model")
    if len(models) != len(sizes):
        raise ValueError(f"{len(models)} models but {len(sizes)} sizes")
    if any(n <= 0 for n in sizes):
        raise ValueError("client sizes must be > 0")
    shape = np.shape(models[0])
    total = float(sum(sizes))
    out = np.zeros(shape)
    for k, (theta, n) in enumerate(zip(models, sizes)):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != shape:
            raise ShapeMismatchError(f"client {k} parameters", shape, theta.shape)
        out = out + (n / total) * theta
    return out


def fedavg_networks(nets: Sequence[Network], sizes: Sequence[int]) -> Network:
    """FedAvg of parameters and of BatchNorm running buffers."""
    params = fedavg([net.params for net in nets], sizes)
    buffers = {key: fedavg([net.buffers[key] for net in nets], sizes) for key in nets[0].buffers}
    return nets[0].with_params(params).with_buffers(buffers)


def param_checksum(net: Network) -> str:
    return hashlib.sha256(np.ascontiguousarray(net.params, dtype="<f8").tobytes()).hexdigest()[:16]


class RoundReport(BaseModel):
    round: int
    natural_acc: Optional[float] = None
    robust_acc: Dict[str, Optional[float]] = {}
    attack_failures: Dict[str, int] = {}
    client_sizes: List[int]
    client_losses: List[float]
    "Mean training loss of each client's last local epoch"
    param_norm: float
    param_checksum: str
    wall_time_s: float


class FedResult(NamedTuple):
    net: Network
    reports: List[RoundReport]


Evaluator = Callable[[Network, int], EvalSnapshot]


async def _train_round(
    clients: List[ClientState],
    global_net: Network,
    cfg: FedConfig,
    augment: AugmentPlan,
    sgd: SgdConfig,
    round_index: int,
) -> List[TrainResult]:
    semaphore = asyncio.Semaphore(cfg.max_concurrency)

    async def _one(client: ClientState) -> TrainResult:
        async with semaphore:
            started = time.perf_counter()
            result = await asyncio.to_thread(
                local_adv_train, client, global_net, cfg.E, augment, sgd, cfg.batch_size, round_index
            )
            logger.debug("round %d client %d: %.2fs", round_index, client.id, time.perf_counter() - started)
            return result

    tasks = [asyncio.create_task(_one(client)) for client in clients]
    outcomes = await asyncio.gather(*tasks, return_exceptions=True)
    results = []
    for client, outcome in zip(clients, outcomes):
        if isinstance(outcome, BaseException):
            raise ClientTrainingError(client.id, outcome) from outcome
        results.append(outcome)
    return results


async def run_rounds_async(
    cfg: FedConfig,
    plan: PartitionPlan,
    train: LabeledBatch,
    net: Network,
    augment: AugmentPlan,
    sgd: SgdConfig,
    seed: int,
    evaluate: Optional[Evaluator] = None,
    eval_every: int = 1,
    progress: bool = False,
) -> FedResult:
    """R rounds of broadcast, local adversarial training on all K clients, and FedAvg.

    `evaluate(global_net, round)` runs every `eval_every` rounds and after the last one.
    """
    if plan.n_clients != cfg.K:
        raise ValueError(f"partition plan has {plan.n_clients} clients, config expects K={cfg.K}")
    clients = build_clients(plan, train, spawn_seeds(seed, cfg.K))
    sizes = [len(client.local_indices) for client in clients]
    global_net = net.in_mode("train")
    reports: List[RoundReport] = []

    rounds = range(1, cfg.R + 1)
    if progress:
        rounds = tqdm(rounds, desc="rounds")
    for r in rounds:
        started = time.perf_counter()
        results = await _train_round(clients, global_net, cfg, augment, sgd, r)
        global_net = fedavg_networks([res.net for res in results], sizes)

        snapshot = EvalSnapshot()
        if evaluate is not None and (r % eval_every == 0 or r == cfg.R):
            snapshot = evaluate(global_net, r)
        report = RoundReport(
            round=r,
            natural_acc=snapshot.natural_acc,
            robust_acc=snapshot.robust_acc,
            attack_failures=snapshot.attack_failures,
            client_sizes=sizes,
            client_losses=[res.epoch_losses[-1] for res in results],
            param_norm=float(np.linalg.norm(global_net.params)),
            param_checksum=param_checksum(global_net),
            wall_time_s=time.perf_counter() - started,
        )
        reports.append(report)
        logger.info(
            "round %d/%d: natural %s, robust %s",
            r, cfg.R, snapshot.natural_acc, snapshot.robust_acc or "-",
        )
    return FedResult(global_net, reports)


def run_rounds(*args, **kwargs) -> FedResult:
    """Blocking wrapper around `run_rounds_async`."""
    return asyncio.run(run_rounds_async(*args, **kwargs))
