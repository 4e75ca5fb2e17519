# tests/test_grouping.py - Partition objective and the greedy, spectral, brute-force and random partitioners
import numpy as np
import pytest

import config
from core.exceptions import ConfigurationError, DataError
from grouping.algorithms import PartitionAlgorithm, partition_layer
from grouping.bruteforce import partition_bruteforce, restricted_growth_strings
from grouping.greedy import partition_greedy
from grouping.partition import Partition, check_feasible, load_partitions, partition_objective, save_partitions
from grouping.random_partition import partition_random
from grouping.spectral import affinity, partition_spectral
from similarity.matrix import Metric, SimilarityMatrix, build_layer_similarity
from similarity.representations import RepresentationKind

PLANTED_GROUPS = ((0, 1), (2, 3), (4, 5), (6, 7))


def _random_similarity(rng, n, low=0.0, high=1.0):
    A = rng.uniform(low, high, size=(n, n))
    A = (A + A.T) / 2.0
    np.fill_diagonal(A, 1.0)
    return A


def _block_separated(rng, n, r):
    """Positive scores inside r planted blocks, negative across them"""
    labels = np.concatenate([np.arange(r), rng.integers(0, r, size=n - r)])
    rng.shuffle(labels)
    A = np.where(labels[:, None] == labels[None, :], rng.uniform(0.5, 1.0, (n, n)), rng.uniform(-1.0, -0.1, (n, n)))
    A = (A + A.T) / 2.0
    np.fill_diagonal(A, 1.0)
    return A, Partition.from_labels(labels)


def _scalar_objective(A, groups):
    label = {i: g for g, group in enumerate(groups) for i in group}
    n = len(label)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if label[i] == label[j]:
                total += A[i][j] / 2.0
            else:
                total -= A[i][j]
    return total


class TestPartition:
    def test_canonical_order(self):
        p = Partition(((3, 1), (0,), (2,)))
        assert p.groups == ((0,), (1, 3), (2,))
        assert p.r == 3 and p.n == 4
        np.testing.assert_array_equal(p.labels(), [0, 1, 2, 1])

    def test_overlap_rejected(self):
        with pytest.raises(DataError):
            Partition(((0, 1), (1, 2)))

    def test_from_labels(self):
        assert Partition.from_labels([1, 0, 1, 2]).groups == ((0, 2), (1,), (3,))

    def test_validate_protected(self):
        with pytest.raises(DataError):
            Partition(((0, 1), (2,))).validate(3, protected={1})

    def test_equality_ignores_objective(self):
        assert Partition(((0, 1),)).with_objective(2.0) == Partition(((0, 1),))

    def test_save_and_load(self, tmp_path):
        partitions = [Partition(((0, 1), (2,))).with_objective(0.5), Partition.singletons(3)]
        save_partitions(partitions, tmp_path / "groups.json", algorithm="greedy", r=2)
        assert load_partitions(tmp_path / "groups.json") == partitions

    def test_load_rejects_missing_layers(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"groups": []}', encoding="utf-8")
        with pytest.raises(DataError):
            load_partitions(tmp_path / "bad.json")


class TestObjective:
    def test_two_nodes(self):
        A = np.array([[1.0, 0.8], [0.8, 1.0]])
        assert partition_objective(A, Partition(((0, 1),))) == pytest.approx(0.8)
        assert partition_objective(A, Partition.singletons(2)) == pytest.approx(-1.6)

    def test_zero_off_diagonal(self):
        A = np.eye(4)
        for labels in restricted_growth_strings(4, 2):
            assert partition_objective(A, Partition.from_labels(labels)) == 0.0

    def test_matches_scalar_evaluator(self, rng):
        A = _random_similarity(rng, 4, -1.0, 1.0)
        partitions = [Partition.from_labels(labels) for labels in restricted_growth_strings(4, 2)]
        assert len(partitions) == 7
        for p in partitions:
            assert partition_objective(A, p) == pytest.approx(_scalar_objective(A, p.groups), abs=1e-12)

    @pytest.mark.parametrize("n,k,count", [(4, 2, 7), (5, 3, 25), (6, 3, 90), (3, 3, 1), (3, 1, 1)])
    def test_restricted_growth_counts(self, n, k, count):
        strings = list(restricted_growth_strings(n, k))
        assert len(strings) == count
        assert len({tuple(s) for s in strings}) == count


class TestFeasibility:
    def test_r_out_of_range(self):
        with pytest.raises(ConfigurationError):
            check_feasible(4, 5)
        with pytest.raises(ConfigurationError):
            check_feasible(4, 0)

    def test_protected_need_room(self):
        with pytest.raises(ConfigurationError):
            check_feasible(4, 2, protected={0, 1})
        check_feasible(4, 3, protected={0, 1})


class TestGreedy:
    def test_recovers_planted_groups(self, planted, batch):
        sim = build_layer_similarity(planted.layers[0], RepresentationKind.DATA, Metric.CKA_LINEAR, batch=batch)
        assert partition_greedy(sim, 4).groups == PLANTED_GROUPS

    def test_r_equals_n(self, rng):
        assert partition_greedy(_random_similarity(rng, 5), 5) == Partition.singletons(5)

    def test_dominant_pair(self):
        A = np.array([[1.0, 0.1, 0.2], [0.1, 1.0, 0.9], [0.2, 0.9, 1.0]])
        assert partition_greedy(A, 2).groups == ((0,), (1, 2))

    def test_single_expert(self):
        assert partition_greedy(np.ones((1, 1)), 1).groups == ((0,),)

    def test_ties_go_to_smallest_pair(self):
        assert partition_greedy(np.ones((4, 4)), 3).groups == ((0, 1), (2,), (3,))

    def test_protected_stay_singletons(self, rng):
        p = partition_greedy(np.ones((5, 5)), 2, protected={1})
        assert p.groups == ((0, 2, 3, 4), (1,))

    def test_objective_is_recorded(self, rng):
        A = _random_similarity(rng, 6)
        p = partition_greedy(A, 3)
        assert p.objective_value == pytest.approx(partition_objective(A, p))


class TestBruteForce:
    def test_size_guard(self):
        with pytest.raises(ConfigurationError, match="greedy"):
            partition_bruteforce(np.eye(config.BRUTE_FORCE_MAX_N + 1), 2)

    def test_is_optimal(self, rng):
        A = _random_similarity(rng, 6, -1.0, 1.0)
        best = partition_bruteforce(A, 3)
        for labels in restricted_growth_strings(6, 3):
            assert partition_objective(A, Partition.from_labels(labels)) <= best.objective_value + 1e-12

    def test_protected(self):
        p = partition_bruteforce(np.ones((4, 4)), 2, protected={3})
        assert p.groups == ((0, 1, 2), (3,))

    def test_agrees_with_greedy_on_separated_blocks(self, rng):
        for n in range(3, 9):
            A, _ = _block_separated(rng, n, 2)
            assert partition_bruteforce(A, 2) == partition_greedy(A, 2)


class TestOracleDominance:
    def test_brute_force_dominates(self, rng):
        for trial in range(200):
            n = int(rng.integers(4, 9))
            r = int(rng.integers(2, 4))
            A = _random_similarity(rng, n)
            best = partition_bruteforce(A, r).objective_value
            assert partition_greedy(A, r).objective_value <= best + 1e-9
            spectral = partition_spectral(A, r, seed=trial)
            assert spectral.r == r
            assert spectral.objective_value <= best + 1e-9

    def test_greedy_optimal_when_blocks_separate(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 9))
            r = int(rng.integers(2, 4))
            A, planted = _block_separated(rng, n, r)
            greedy = partition_greedy(A, r)
            assert greedy == planted
            assert greedy.objective_value == pytest.approx(partition_bruteforce(A, r).objective_value, abs=1e-9)


class TestSpectral:
    def test_disconnected_blocks(self):
        A = np.zeros((6, 6))
        A[:3, :3] = 1.0
        A[3:, 3:] = 1.0
        assert partition_spectral(A, 2).groups == ((0, 1, 2), (3, 4, 5))

    def test_r_one(self, rng):
        assert partition_spectral(_random_similarity(rng, 5), 1).groups == ((0, 1, 2, 3, 4),)

    def test_matches_greedy_on_planted_model(self, planted):
        sim = build_layer_similarity(planted.layers[0], RepresentationKind.VECTORIZED, Metric.COSINE)
        assert partition_spectral(sim, 4).groups == partition_greedy(sim, 4).groups == PLANTED_GROUPS

    def test_protected_and_isolated(self):
        A = np.ones((5, 5))
        A[4, :] = A[:, 4] = 0.0
        A[4, 4] = 1.0
        p = partition_spectral(A, 3, protected={0})
        assert p.groups == ((0,), (1, 2, 3), (4,))

    def test_too_many_isolated(self):
        with pytest.raises(ConfigurationError):
            partition_spectral(np.eye(4), 2)

    def test_neg_mse_affinity_is_shifted(self):
        W = affinity(np.array([[0.0, -1.0], [-1.0, 0.0]]), Metric.NEG_MSE)
        np.testing.assert_array_equal(W, [[0.0, 0.0], [0.0, 0.0]])
        W = affinity(np.array([[0.0, -1.0, -3.0], [-1.0, 0.0, -2.0], [-3.0, -2.0, 0.0]]), Metric.NEG_MSE)
        assert W[0, 1] == 2.0 and W[0, 2] == 0.0 and np.all(np.diag(W) == 0.0)

    def test_seeded(self, rng):
        A = _random_similarity(rng, 8)
        assert partition_spectral(A, 3, seed=5) == partition_spectral(A, 3, seed=5)


class TestRandom:
    def test_group_count_and_determinism(self, rng):
        A = _random_similarity(rng, 8)
        p = partition_random(A, 3, seed=4)
        assert p.r == 3
        p.validate(8)
        assert p == partition_random(A, 3, seed=4)

    def test_protected(self, rng):
        p = partition_random(_random_similarity(rng, 6), 2, protected={5}, seed=0)
        assert (5,) in p.groups and p.r == 2


class TestDispatch:
    @pytest.mark.parametrize("algorithm", list(PartitionAlgorithm))
    def test_every_algorithm_returns_r_groups(self, rng, algorithm):
        sim = SimilarityMatrix(_random_similarity(rng, 6), Metric.CKA_LINEAR)
        p = partition_layer(sim, 3, algorithm, seed=1)
        assert p.r == 3
        p.validate(6)

