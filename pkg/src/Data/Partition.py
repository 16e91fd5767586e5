"""
Client data assignment for the federated simulation.

A plan is built in two stages. First a class-balanced shared pool is carved
out of the training indices (`make_shared_pool`) and a fraction of it is
sampled for every client (`sample_shared`). The remaining indices are then
split across K clients by one of four strategies:

    iid        class-balanced, equal-sized random subsets
    one_class  every client holds a single whole class
    two_class  every client holds shards of exactly two classes
    dirichlet  per-class client proportions drawn from Dirichlet(beta)

Classes that a skewed strategy cannot hand out (one_class with K < N,
two_class with 2K < N) are recorded as `unassigned`.
"""

import logging
from typing import Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.Auxiliary.Errors import PartitionError
from src.Auxiliary.Seeding import derive_rng

logger = logging.getLogger(__name__)

Strategy = Literal["iid", "one_class", "two_class", "dirichlet"]
IndexTuple = Tuple[int, ...]


class SharedPool(NamedTuple):
    pool: Tuple[IndexTuple, ...]
    "Per-class index lists, equal length"
    remainder: np.ndarray


class PartitionPlan(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    strategy: Strategy
    seed: int
    client_indices: Tuple[IndexTuple, ...]
    shared_pool: Tuple[IndexTuple, ...] = ()
    shared_sample: IndexTuple = ()
    alpha_share: float = Field(default=0.0, ge=0.0, le=1.0)
    beta: Optional[float] = None
    unassigned: IndexTuple = ()

    @model_validator(mode="after")
    def _check_disjoint(self) -> "PartitionPlan":
        seen = set(i for cls in self.shared_pool for i in cls)
        for k, indices in enumerate(self.client_indices):
            clash = seen.intersection(indices)
            if clash:
                raise ValueError(f"client {k} shares index {min(clash)} with another list")
            seen.update(indices)
        return self

    @property
    def n_clients(self) -> int:
        return len(self.client_indices)

    def client_set(self, k: int) -> IndexTuple:
        return assemble_client_set(self.client_indices[k], self.shared_sample)

    def histograms(self, labels: Sequence[int], n_classes: Optional[int] = None) -> np.ndarray:
        """[K, N] class counts of each client's local list (shared sample excluded)."""
        labels = np.asarray(labels)
        n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
        return np.stack([
            np.bincount(labels[list(idx)], minlength=n_classes) if idx else np.zeros(n_classes, dtype=np.int64)
            for idx in self.client_indices
        ])

    def report(self, labels: Sequence[int], n_classes: Optional[int] = None) -> Dict:
        hist = self.histograms(labels, n_classes)
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "beta": self.beta,
            "alpha_share": self.alpha_share,
            "K": self.n_clients,
            "shared_pool_per_class": len(self.shared_pool[0]) if self.shared_pool else 0,
            "shared_sample_size": len(self.shared_sample),
            "unassigned": len(self.unassigned),
            "clients": [
                {
                    "client": k,
                    "local_size": len(idx),
                    "total_size": len(idx) + len(self.shared_sample),
                    "histogram": [int(c) for c in hist[k]],
                }
                for k, idx in enumerate(self.client_indices)
            ],
        }


def _by_class(indices: np.ndarray, labels: np.ndarray) -> Dict[int, np.ndarray]:
    indices = np.sort(np.asarray(indices, dtype=np.int64))
    return {int(c): indices[labels[indices] == c] for c in np.unique(labels[indices])}


def make_shared_pool(
    labels: Sequence[int], per_class: int, rng: np.random.Generator, n_classes: Optional[int] = None
) -> SharedPool:
    """Draw `per_class` indices of every class without replacement."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    if per_class < 0:
        raise PartitionError(f"per_class must be >= 0 (got {per_class})")
    pool = []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if len(members) < per_class:
            raise PartitionError(f"class {c} has {len(members)} examples, {per_class} needed for the shared pool")
        pool.append(tuple(int(i) for i in np.sort(rng.choice(members, size=per_class, replace=False))))
    taken = np.fromiter((i for cls in pool for i in cls), dtype=np.int64)
    remainder = np.setdiff1d(np.arange(labels.size), taken)
    return SharedPool(tuple(pool), remainder)


def sample_shared(pool: Sequence[Sequence[int]], alpha_share: float, rng: np.random.Generator) -> IndexTuple:
    """floor(alpha * per_class) indices of every class of the pool; one sample serves every client."""
    if not 0.0 <= alpha_share <= 1.0:
        raise PartitionError(f"alpha_share must lie in [0, 1] (got {alpha_share})")
    if not pool:
        return ()
    per_class = len(pool[0])
    count = int(np.floor(alpha_share * per_class + 1e-9))
    picked: List[int] = []
    for members in pool:
        if count:
            picked.extend(int(i) for i in np.sort(rng.choice(np.asarray(members), size=count, replace=False)))
    return tuple(picked)


def _check_k(remainder: np.ndarray, K: int) -> None:
    if K < 1:
        raise PartitionError(f"K must be >= 1 (got {K})")
    if K > len(remainder):
        raise PartitionError(f"K={K} clients exceed the {len(remainder)} examples available")


def partition_iid(remainder, labels, K: int, rng: np.random.Generator) -> List[IndexTuple]:
    labels = np.asarray(labels)
    remainder = np.asarray(remainder, dtype=np.int64)
    _check_k(remainder, K)
    # class-sorted, shuffled within class, dealt round-robin: sizes and per-class counts differ by at most 1
    sequence = np.concatenate([rng.permutation(idx) for idx in _by_class(remainder, labels).values()])
    return [tuple(int(i) for i in np.sort(sequence[k::K])) for k in range(K)]


def partition_one_class(remainder, labels, K: int, rng: np.random.Generator) -> Tuple[List[IndexTuple], IndexTuple]:
    """Each client receives one whole class; returns (client lists, unassigned indices)."""
    labels = np.asarray(labels)
    remainder = np.asarray(remainder, dtype=np.int64)
    _check_k(remainder, K)
    groups = _by_class(remainder, labels)
    classes = np.array(sorted(groups))
    if K > len(classes):
        raise PartitionError(f"one_class needs K <= number of classes ({K} > {len(classes)})")
    order = rng.permutation(classes)
    clients = [tuple(int(i) for i in groups[int(c)]) for c in order[:K]]
    leftover = sorted(int(i) for c in order[K:] for i in groups[int(c)])
    return clients, tuple(leftover)


def partition_two_class(remainder, labels, K: int, rng: np.random.Generator) -> Tuple[List[IndexTuple], IndexTuple]:
    """Each client receives data of exactly two classes.

    With 2K >= N every class is cut into s = 2K / N shards (2K must be a
    multiple of N) and the class-major shard list L is paired as
    (L[i], L[i + K]), which always joins two different classes. With 2K < N
    the clients take 2K whole classes and the rest stay unassigned.
    """
    labels = np.asarray(labels)
    remainder = np.asarray(remainder, dtype=np.int64)
    _check_k(remainder, K)
    groups = _by_class(remainder, labels)
    n_classes = len(groups)
    if n_classes < 2:
        raise PartitionError("two_class needs at least two classes")
    order = [int(c) for c in rng.permutation(sorted(groups))]

    if 2 * K < n_classes:
        pairs = [(groups[order[k]], groups[order[k + K]]) for k in range(K)]
        leftover = sorted(int(i) for c in order[2 * K:] for i in groups[c])
    else:
        if (2 * K) % n_classes:
            raise PartitionError(f"two_class with K={K} needs 2K to be a multiple of the {n_classes} classes")
        shards_per_class = 2 * K // n_classes
        shards = []
        for c in order:
            members = rng.permutation(groups[c])
            if len(members) < shards_per_class:
                raise PartitionError(f"class {c} has {len(members)} examples, fewer than {shards_per_class} shards")
            shards.extend(np.array_split(members, shards_per_class))
        pairs = [(shards[k], shards[k + K]) for k in range(K)]
        leftover = []

    slots = rng.permutation(K)
    clients: List[IndexTuple] = [()] * K
    for pair, slot in zip(pairs, slots):
        clients[int(slot)] = tuple(int(i) for i in np.sort(np.concatenate(pair)))
    return clients, tuple(leftover)


def largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to `total`; leftover units go to the largest fractional parts (lowest index on ties)."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(remainder, labels, K: int, beta: float, rng: np.random.Generator) -> List[IndexTuple]:
    if beta <= 0:
        raise PartitionError(f"beta must be > 0 (got {beta})")
    labels = np.asarray(labels)
    remainder = np.asarray(remainder, dtype=np.int64)
    _check_k(remainder, K)
    buckets: List[List[int]] = [[] for _ in range(K)]
    for c, members in _by_class(remainder, labels).items():
        members = rng.permutation(members)
        proportions = rng.dirichlet(np.full(K, beta))
        counts = largest_remainder_counts(proportions, len(members))
        for k, part in enumerate(np.split(members, np.cumsum(counts)[:-1])):
            buckets[k].extend(int(i) for i in part)
    return [tuple(sorted(b)) for b in buckets]


def assemble_client_set(local: Sequence[int], shared: Sequence[int]) -> IndexTuple:
    overlap = set(local).intersection(shared)
    if overlap:
        raise PartitionError(f"local and shared sets overlap at index {min(overlap)}")
    return tuple(local) + tuple(shared)


def build_partition(
    labels: Sequence[int],
    strategy: Strategy,
    K: int,
    seed: int,
    shared_per_class: int = 0,
    alpha_share: float = 0.0,
    beta: float = 0.5,
    n_classes: Optional[int] = None,
) -> PartitionPlan:
    """Shared pool, shared sample, then the client split, each from its own stream of `seed`."""
    labels = np.asarray(labels, dtype=np.int64)
    pool, remainder = make_shared_pool(labels, shared_per_class, derive_rng(seed, 1), n_classes)
    sample = sample_shared(pool, alpha_share, derive_rng(seed, 2))
    split_rng = derive_rng(seed, 3)
    unassigned: IndexTuple = ()
    if strategy == "iid":
        clients = partition_iid(remainder, labels, K, split_rng)
    elif strategy == "one_class":
        clients, unassigned = partition_one_class(remainder, labels, K, split_rng)
    elif strategy == "two_class":
        clients, unassigned = partition_two_class(remainder, labels, K, split_rng)
    elif strategy == "dirichlet":
        clients = partition_dirichlet(remainder, labels, K, beta, split_rng)
    else:
        raise PartitionError(f"Unknown partition strategy '{strategy}'")
    plan = PartitionPlan(
        strategy=strategy,
        seed=seed,
        client_indices=tuple(clients),
        shared_pool=pool,
        shared_sample=sample,
        alpha_share=alpha_share,
        beta=beta if strategy == "dirichlet" else None,
        unassigned=unassigned,
    )
    logger.debug(
        "partition %s: K=%d, local sizes %s, shared sample %d, unassigned %d",
        strategy, K, [len(c) for c in clients], len(sample), len(unassigned),
    )
    return plan
