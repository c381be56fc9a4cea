"""Matching and partition tests against brute-force oracles."""

import numpy as np

from posefuse.assignment import (
    Partition,
    filter_matches,
    hungarian_max,
    partition_cycle_consistent,
)

from oracles import (
    all_partitions,
    bell_number,
    best_partition_total,
    brute_force_assignment_total,
    partition_objective,
)


def total_of(pairs, a):
    return sum(a[r, c] for r, c in pairs)


def test_hungarian_hand_example():
    a = np.array([[5.0, 1.0], [2.0, 3.0]])
    pairs = hungarian_max(a)
    assert sorted(pairs) == [(0, 0), (1, 1)]
    assert total_of(pairs, a) == 8.0


def test_hungarian_matches_brute_force_small():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        m = int(rng.integers(1, 6))
        a = rng.normal(size=(n, m))
        got = total_of(hungarian_max(a), a)
        want = brute_force_assignment_total(a)
        assert abs(got - want) < 1e-9


def test_hungarian_rectangular_counts():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 6))
    pairs = hungarian_max(a)
    assert len(pairs) == 3
    assert len({r for r, _ in pairs}) == 3
    assert len({c for _, c in pairs}) == 3


def test_hungarian_never_matches_forbidden():
    a = np.array([[float("-inf"), 5.0], [float("-inf"), 4.0]])
    pairs = hungarian_max(a)
    assert pairs == [(0, 1)]
    # forbidden pairs are excluded even when that shrinks the matching
    a = np.full((2, 2), float("-inf"))
    assert hungarian_max(a) == []


def test_hungarian_translation_invariance():
    rng = np.random.default_rng(17)
    for _ in range(50):
        a = rng.normal(size=(5, 5))
        base = sorted(hungarian_max(a))
        shifted = sorted(hungarian_max(a + 7.3))
        assert base == shifted


def test_hungarian_empty():
    assert hungarian_max(np.zeros((0, 4))) == []
    assert hungarian_max(np.zeros((3, 0))) == []


def test_filter_matches_threshold():
    a = np.array([[0.5, -1.0], [-2.0, 0.0]])
    pairs = [(0, 0), (1, 1)]
    acc, ur, uc = filter_matches(pairs, a, 0.0)
    assert acc == [(0, 0), (1, 1)]
    assert ur == [] and uc == []
    acc, ur, uc = filter_matches(pairs, a, 0.1)
    assert acc == [(0, 0)]
    assert ur == [1] and uc == [1]


def test_partition_hand_example():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 0.5
    a[0, 2] = a[2, 0] = 0.4
    a[1, 2] = a[2, 1] = -0.9
    part = partition_cycle_consistent(a)
    assert partition_objective(part.labels, a) == 0.5
    assert part.labels[0] == part.labels[1] != part.labels[2]


def test_partition_all_negative_gives_singletons():
    a = -np.ones((4, 4))
    np.fill_diagonal(a, 0.0)
    part = partition_cycle_consistent(a)
    assert len(set(part.labels.tolist())) == 4


def test_partition_matches_enumeration():
    rng = np.random.default_rng(23)
    n_checked = 0
    for _ in range(120):
        n = int(rng.integers(2, 8))
        a = rng.normal(scale=0.8, size=(n, n))
        a = (a + a.T) / 2.0
        np.fill_diagonal(a, 0.0)
        # sprinkle forbidden pairs like same-camera exclusions
        for _ in range(int(rng.integers(0, n))):
            i, j = rng.integers(0, n, size=2)
            if i != j:
                a[i, j] = a[j, i] = float("-inf")
        part = partition_cycle_consistent(a)
        got = partition_objective(part.labels, a)
        want = best_partition_total(a)
        assert abs(got - want) < 1e-9
        n_checked += 1
    assert n_checked == 120


def test_partition_camera_exclusivity_holds_even_with_positive_forbidden_neighbors():
    # strong mutual affinities around a forbidden pair must not co-cluster it
    a = np.array([
        [0.0, 5.0, 5.0],
        [5.0, 0.0, float("-inf")],
        [5.0, float("-inf"), 0.0],
    ])
    part = partition_cycle_consistent(a)
    assert part.labels[1] != part.labels[2]


def test_partition_greedy_path_feasible_and_sane():
    rng = np.random.default_rng(31)
    for _ in range(30):
        n = 20
        a = rng.normal(scale=0.5, size=(n, n))
        a = (a + a.T) / 2.0
        np.fill_diagonal(a, 0.0)
        ids = rng.integers(0, 5, size=n)
        same = ids[:, None] == ids[None, :]
        a[same] = float("-inf")
        np.fill_diagonal(a, 0.0)
        part = partition_cycle_consistent(a, max_exact=12)
        obj = partition_objective(part.labels, a)
        assert np.isfinite(obj)
        assert obj >= 0.0  # never worse than all singletons
        for cluster in part.clusters():
            cams = [ids[i] for i in cluster]
            assert len(cams) == len(set(cams))


def test_greedy_agrees_with_exact_on_easy_instances():
    # block-structured affinities: clear positive blocks, negative across
    rng = np.random.default_rng(41)
    for _ in range(20):
        n = 15
        truth = rng.integers(0, 3, size=n)
        a = np.where(truth[:, None] == truth[None, :],
                     rng.uniform(0.5, 1.0, size=(n, n)),
                     rng.uniform(-1.0, -0.4, size=(n, n)))
        a = (a + a.T) / 2.0
        np.fill_diagonal(a, 0.0)
        part = partition_cycle_consistent(a, max_exact=0)  # force greedy
        labels = part.labels
        for i in range(n):
            for j in range(n):
                assert (labels[i] == labels[j]) == (truth[i] == truth[j])


def test_partition_labels_are_canonical():
    a = np.zeros((5, 5))
    part = partition_cycle_consistent(a)
    assert isinstance(part, Partition)
    assert part.labels.min() == 0
    assert set(part.labels.tolist()) == set(range(part.labels.max() + 1))


def test_partition_enumeration_counts():
    # sanity-check the oracle itself: Bell numbers for small n
    assert bell_number(1) == 1
    assert bell_number(3) == 5
    assert bell_number(8) == 4140
    assert sum(1 for _ in all_partitions(3)) == 5
    assert sum(1 for _ in all_partitions(8)) == 4140
