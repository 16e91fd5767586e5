"""
Local adversarial training.

`adversarial_train` is the single training loop of the project: the
centralized runs call it directly on the full training set, federated clients
call it through `local_adv_train` on their local set once per round.
"""

import logging
import os
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from src.Auxiliary.Seeding import derive_rng, derive_seed
from src.Data.Augmentation import AugmentPlan, augment_batch
from src.Data.Labeled_Batch import LabeledBatch
from src.Engine.Network import Network, loss_and_grads
from src.Engine.Optimizer import SgdConfig, sgd_step

logger = logging.getLogger(__name__)

# stream keys under the training seed
_ORDER_STREAM = 0x0D3
_FIXED_STREAM = 0xF1
_BATCH_STREAM = 0xBA7C
_FORWARD_STREAM = 0xF0D


class FedConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    K: int = Field(default=5, ge=1)
    "Number of clients; every client takes part in every round"
    R: int = Field(default=10, ge=1)
    E: int = Field(default=1, ge=1)
    "Local epochs per round"
    batch_size: int = Field(default=128, ge=1)
    max_concurrency: int = Field(default_factory=lambda: int(os.getenv("FEDAT_MAX_CONCURRENCY", "1")), ge=1)
    "Clients trained at once; defaults to $FEDAT_MAX_CONCURRENCY, then 1"


class ClientState(BaseModel):
    """A simulated client. Its local index list and seed are fixed for the whole run."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: int
    local_indices: Tuple[int, ...]
    seed: int
    data: LabeledBatch


class TrainResult(NamedTuple):
    net: Network
    epoch_losses: List[float]


def _minibatches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def adversarial_train(
    net: Network,
    data: LabeledBatch,
    plan: AugmentPlan,
    sgd: SgdConfig,
    epochs: int,
    batch_size: int,
    seed: int,
    epoch_offset: int = 0,
    progress: bool = False,
    on_epoch: Optional[Callable[[int, Network], None]] = None,
) -> TrainResult:
    """Mini-batch SGD on augmented data with soft targets.

    Momentum starts from zero on every call. The learning-rate schedule sees
    the cumulative epoch index `epoch_offset + e`. With
    `plan.regenerate_each_epoch` adversarial and noisy rows are crafted per
    mini-batch against the current weights; otherwise they are crafted once
    against the incoming weights and reused by every epoch.

    `on_epoch(e, net)` is called after local epoch e (0-based) with the
    current network.
    """
    if len(data) == 0:
        raise ValueError("Cannot train on an empty data set")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1 (got {epochs})")
    n = len(data)
    net = net.in_mode("train")
    velocity = np.zeros(net.n_params)

    fixed: Optional[LabeledBatch] = None
    if not plan.regenerate_each_epoch:
        fixed = augment_batch(data, plan, net, derive_rng(seed, _FIXED_STREAM), example_ids=np.arange(n))

    losses: List[float] = []
    epoch_iter = range(epochs)
    if progress:
        epoch_iter = tqdm(epoch_iter, desc="epochs", leave=False)
    for e in epoch_iter:
        epoch = epoch_offset + e
        order = derive_rng(seed, _ORDER_STREAM, epoch).permutation(n)
        batch_losses = []
        for b, ids in enumerate(_minibatches(order, batch_size)):
            if fixed is not None:
                rows = np.concatenate([ids + v * n for v in range(plan.views)])
                augmented = fixed.subset(rows)
            else:
                batch_rng = derive_rng(seed, _BATCH_STREAM, epoch, b)
                augmented = augment_batch(data.subset(ids), plan, net, batch_rng, example_ids=ids)
            stats: dict = {}
            result = loss_and_grads(
                net, augmented.images, augmented.targets(),
                rng=derive_rng(seed, _FORWARD_STREAM, epoch, b), batch_stats=stats,
            )
            if not np.isfinite(result.loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            net, velocity = sgd_step(net, result.grad_params, sgd, velocity, epoch=epoch)
            net = net.absorb_batch_stats(stats)
            batch_losses.append(result.loss)
        losses.append(float(np.mean(batch_losses)))
        logger.debug("epoch %d: loss %.6f (lr %.2e)", epoch, losses[-1], sgd.lr_for(epoch))
        if on_epoch is not None:
            on_epoch(e, net)
    return TrainResult(net, losses)


def build_clients(plan, train: LabeledBatch, client_seeds: List[int]) -> List[ClientState]:
    """One client per plan entry, holding its local list plus the shared sample."""
    clients = []
    for k in range(plan.n_clients):
        indices = plan.client_set(k)
        clients.append(
            ClientState(
                id=k,
                local_indices=indices,
                seed=client_seeds[k],
                data=train.subset(np.asarray(indices, dtype=np.int64)),
            )
        )
    return clients


def local_adv_train(
    client: ClientState,
    global_net: Network,
    E: int,
    augment: AugmentPlan,
    sgd: SgdConfig,
    batch_size: int = 128,
    round_index: int = 1,
) -> TrainResult:
    """E local epochs from the broadcast model; round r uses cumulative epochs (r - 1) * E + e."""
    if len(client.local_indices) == 0:
        raise ValueError(f"client {client.id} has an empty local set")
    return adversarial_train(
        global_net.copy(),
        client.data,
        augment,
        sgd,
        epochs=E,
        batch_size=batch_size,
        seed=derive_seed(client.seed, round_index),
        epoch_offset=(round_index - 1) * E,
    )
