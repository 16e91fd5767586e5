import numpy as np
import pytest

from src.Auxiliary.Errors import PartitionError
from src.Data.Partition import (
    PartitionPlan,
    assemble_client_set,
    build_partition,
    largest_remainder_counts,
    make_shared_pool,
    partition_dirichlet,
    partition_iid,
    partition_one_class,
    partition_two_class,
    sample_shared,
)

TOY_LABELS = np.repeat(np.arange(10), 1000)


def flat(lists):
    return [i for lst in lists for i in lst]


def assert_exact_cover(clients, remainder, unassigned=()):
    everything = flat(clients) + list(unassigned)
    assert len(everything) == len(set(everything))
    assert sorted(everything) == sorted(int(i) for i in remainder)


# -- shared pool ------------------------------------------------------------------


def test_shared_pool_per_class_counts():
    labels = np.repeat(np.arange(3), 10)
    pool, remainder = make_shared_pool(labels, 2, np.random.default_rng(0))
    assert len(flat(pool)) == 6
    assert [np.bincount(labels[list(cls)], minlength=3)[c] for c, cls in enumerate(pool)] == [2, 2, 2]
    assert len(remainder) == 24
    assert not set(flat(pool)) & set(remainder.tolist())


def test_empty_shared_pool_keeps_everything():
    labels = np.repeat(np.arange(3), 4)
    pool, remainder = make_shared_pool(labels, 0, np.random.default_rng(0))
    assert flat(pool) == []
    assert remainder.tolist() == list(range(12))


def test_shared_pool_names_the_short_class():
    labels = np.array([0, 0, 0, 1])
    with pytest.raises(PartitionError, match="class 1"):
        make_shared_pool(labels, 2, np.random.default_rng(0))


@pytest.mark.parametrize("alpha, per_class", [(0.0, 0), (0.5, 500), (0.3, 300), (1.0, 1000)])
def test_shared_sample_sizes(alpha, per_class):
    pool, _ = make_shared_pool(TOY_LABELS, 1000, np.random.default_rng(1))
    sample = sample_shared(pool, alpha, np.random.default_rng(2))
    assert len(sample) == 10 * per_class
    assert np.bincount(TOY_LABELS[list(sample)], minlength=10).tolist() == [per_class] * 10
    if alpha == 1.0:
        assert sorted(sample) == sorted(flat(pool))


def test_shared_sample_rejects_bad_fraction():
    with pytest.raises(PartitionError):
        sample_shared(((0, 1),), 1.5, np.random.default_rng(0))


# -- strategies -------------------------------------------------------------------


def test_iid_equal_split():
    remainder = np.arange(50000)
    labels = np.repeat(np.arange(10), 5000)
    clients = partition_iid(remainder, labels, 5, np.random.default_rng(0))
    assert [len(c) for c in clients] == [10000] * 5


def test_iid_single_client_gets_remainder():
    remainder = np.arange(30)
    clients = partition_iid(remainder, np.repeat(np.arange(3), 10), 1, np.random.default_rng(0))
    assert list(clients[0]) == list(range(30))


def test_iid_toy_histograms():
    labels = np.repeat(np.arange(3), 10)
    clients = partition_iid(np.arange(30), labels, 3, np.random.default_rng(4))
    hist = np.stack([np.bincount(labels[list(c)], minlength=3) for c in clients])
    assert hist.sum(axis=0).tolist() == [10, 10, 10]
    assert np.all(hist.max(axis=0) - hist.min(axis=0) <= 1)


def test_too_many_clients():
    with pytest.raises(PartitionError):
        partition_iid(np.arange(3), np.array([0, 1, 2]), 4, np.random.default_rng(0))


def test_one_class_each_client_gets_a_distinct_class():
    clients, unassigned = partition_one_class(np.arange(TOY_LABELS.size), TOY_LABELS, 10, np.random.default_rng(0))
    owned = [set(TOY_LABELS[list(c)].tolist()) for c in clients]
    assert all(len(s) == 1 for s in owned)
    assert sorted(s.pop() for s in owned) == list(range(10))
    assert unassigned == ()


def test_one_class_single_client():
    clients, unassigned = partition_one_class(np.arange(TOY_LABELS.size), TOY_LABELS, 1, np.random.default_rng(0))
    assert len(set(TOY_LABELS[list(clients[0])].tolist())) == 1
    assert len(unassigned) == 9000


def test_one_class_rejects_more_clients_than_classes():
    with pytest.raises(PartitionError):
        partition_one_class(np.arange(TOY_LABELS.size), TOY_LABELS, 11, np.random.default_rng(0))


def test_two_class_uses_every_shard_once():
    clients, unassigned = partition_two_class(np.arange(TOY_LABELS.size), TOY_LABELS, 10, np.random.default_rng(0))
    assert all(len(set(TOY_LABELS[list(c)].tolist())) == 2 for c in clients)
    assert unassigned == ()
    assert_exact_cover(clients, np.arange(TOY_LABELS.size))
    # 2 shards per class, each client holds one shard of each of its two classes
    per_class = np.stack([np.bincount(TOY_LABELS[list(c)], minlength=10) for c in clients])
    assert set(per_class[per_class > 0].tolist()) == {500}


def test_two_class_single_client():
    clients, unassigned = partition_two_class(np.arange(TOY_LABELS.size), TOY_LABELS, 1, np.random.default_rng(0))
    assert len(set(TOY_LABELS[list(clients[0])].tolist())) == 2
    assert len(unassigned) == 8000


def test_two_class_rejects_infeasible_shard_count():
    with pytest.raises(PartitionError, match="multiple"):
        partition_two_class(np.arange(TOY_LABELS.size), TOY_LABELS, 7, np.random.default_rng(0))


def test_dirichlet_huge_beta_is_near_uniform():
    clients = partition_dirichlet(np.arange(TOY_LABELS.size), TOY_LABELS, 5, 1e6, np.random.default_rng(0))
    sizes = np.array([len(c) for c in clients])
    assert np.abs(sizes - 2000).max() < 0.05 * 2000


def test_dirichlet_small_beta_is_skewed():
    labels = np.repeat(np.arange(10), 100)
    top_shares = []
    for seed in range(100):
        clients = partition_dirichlet(np.arange(labels.size), labels, 5, 0.1, np.random.default_rng(seed))
        hist = np.stack([np.bincount(labels[list(c)], minlength=10) for c in clients])
        top_shares.append((hist.max(axis=0) / 100).mean())
    assert np.mean(top_shares) > 0.5


def test_dirichlet_single_client_takes_all():
    clients = partition_dirichlet(np.arange(100), np.repeat(np.arange(4), 25), 1, 0.5, np.random.default_rng(0))
    assert list(clients[0]) == list(range(100))


def test_dirichlet_rejects_non_positive_beta():
    with pytest.raises(PartitionError):
        partition_dirichlet(np.arange(10), np.zeros(10, dtype=int), 2, 0.0, np.random.default_rng(0))


def test_largest_remainder_conserves_total():
    counts = largest_remainder_counts(np.array([0.335, 0.333, 0.332]), 10)
    assert counts.sum() == 10
    assert counts.tolist() == [4, 3, 3]


@pytest.mark.parametrize("strategy", ["iid", "one_class", "two_class", "dirichlet"])
def test_every_strategy_covers_the_remainder_exactly(strategy):
    labels = np.repeat(np.arange(10), 1000)
    for seed in range(100):
        plan = build_partition(labels, strategy, 5, seed, shared_per_class=20, alpha_share=0.5)
        pool_members = set(flat(plan.shared_pool))
        remainder = [i for i in range(labels.size) if i not in pool_members]
        assert_exact_cover(plan.client_indices, remainder, plan.unassigned)
        hist = plan.histograms(labels, 10)
        if strategy == "iid":
            assert np.all(hist.max(axis=0) - hist.min(axis=0) <= 1)
        elif strategy == "one_class":
            assert np.all((hist > 0).sum(axis=1) == 1)
        elif strategy == "two_class":
            assert np.all((hist > 0).sum(axis=1) == 2)
        else:
            assert hist.sum() == len(remainder)


# -- plans and client sets --------------------------------------------------------


def test_client_set_appends_shared_sample():
    labels = np.repeat(np.arange(10), 1000)
    plan = build_partition(labels, "iid", 2, 0, shared_per_class=500, alpha_share=0.5)
    assert len(plan.client_set(0)) == len(plan.client_indices[0]) + 2500


def test_empty_shared_sample_keeps_local_set():
    assert assemble_client_set((3, 1, 2), ()) == (3, 1, 2)


def test_overlapping_local_and_shared_sets_are_rejected():
    with pytest.raises(PartitionError, match="overlap"):
        assemble_client_set((1, 2), (2, 3))


def test_plan_rejects_overlapping_clients():
    with pytest.raises(ValueError):
        PartitionPlan(strategy="iid", seed=0, client_indices=((0, 1), (1, 2)))


def test_same_seed_same_plan():
    labels = np.repeat(np.arange(4), 50)
    a = build_partition(labels, "dirichlet", 3, 7, shared_per_class=5, alpha_share=0.4)
    b = build_partition(labels, "dirichlet", 3, 7, shared_per_class=5, alpha_share=0.4)
    assert a == b


def test_report_lists_every_client():
    labels = np.repeat(np.arange(4), 50)
    report = build_partition(labels, "two_class", 2, 0).report(labels, 4)
    assert report["K"] == 2
    assert [c["histogram"].count(0) for c in report["clients"]] == [2, 2]


def test_local_and_shared_sets_combine():
    assert len(assemble_client_set(tuple(range(5000)), tuple(range(5000, 10000)))) == 10000
