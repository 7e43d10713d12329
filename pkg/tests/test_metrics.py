import itertools

import numpy as np
import pytest

from brifca.core import GroundTruth
from brifca.datagen import WorkerSpec
from brifca.metrics import cluster_accuracy, dist, match_clusters, max_misclustering
from brifca.model import Dataset


def brute_force_dist(est, truth):
    k = len(truth)
    best = np.inf
    for perm in itertools.permutations(range(k)):
        total = sum(float(np.linalg.norm(est[perm[j]] - truth[j])) for j in range(k))
        best = min(best, total / k)
    return best


def test_dist_identity():
    truth = np.eye(3)
    assert dist(truth, truth) == 0.0


def test_dist_label_swap():
    truth = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert dist(truth[::-1], truth) == 0.0
    assert match_clusters(truth[::-1], truth).tolist() == [1, 0]


def test_dist_accepts_ground_truth():
    truth = GroundTruth(np.eye(2), (1, 1))
    assert dist(np.eye(2) * 2, truth) == pytest.approx(1.0)


def test_dist_matches_exhaustive_permutations():
    rng = np.random.default_rng(0)
    for _ in range(300):
        k, d = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        truth = rng.normal(size=(k, d))
        est = truth[rng.permutation(k)] + rng.normal(scale=rng.uniform(0.01, 2), size=(k, d))
        ours, brute = dist(est, truth), brute_force_dist(est, truth)
        # permutations tied in exact arithmetic may differ in the last bit
        assert abs(ours - brute) <= 4 * np.finfo(float).eps * max(brute, 1.0)


def test_dist_permutation_invariant_in_estimates():
    rng = np.random.default_rng(1)
    truth, est = rng.normal(size=(2, 5, 3))
    base = dist(est, truth)
    for _ in range(20):
        assert dist(est[rng.permutation(5)], truth) == pytest.approx(base, abs=1e-15)


def test_dist_zero_iff_same_multiset():
    truth = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    assert dist(truth[[2, 0, 1]], truth) <= 1e-12
    assert dist(np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 1.0]]), truth) > 1e-12


def _workers(clusters, byz=0):
    data = Dataset(np.zeros((1, 1)))
    ws = [WorkerSpec(i, data, cluster=c) for i, c in enumerate(clusters)]
    ws += [WorkerSpec(len(ws) + b, data, strategy="scaled_eval") for b in range(byz)]
    return ws


def test_cluster_accuracy_examples():
    ws = _workers([0, 0, 1, 1], byz=1)
    identity = np.array([0, 1])
    assert cluster_accuracy(np.array([0, 0, 1, 1, 0]), ws, identity) == 1.0
    assert cluster_accuracy(np.array([0, 0, 0, 0, 1]), ws, identity) == 0.5
    assert cluster_accuracy(np.array([1, 1, 0, 0, 0]), ws, np.array([1, 0])) == 1.0


def test_cluster_accuracy_matches_counting_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        k = int(rng.integers(1, 5))
        clusters = rng.integers(0, k, size=20).tolist()
        ws = _workers(clusters, byz=3)
        assign = rng.integers(0, k, size=23)
        perm = rng.permutation(k)
        hits = sum(1 for i, c in enumerate(clusters) if assign[i] == perm[c])
        assert cluster_accuracy(assign, ws, perm) == hits / 20


def test_max_misclustering():
    ws = _workers([0, 0, 0, 1, 1, 1])
    assert max_misclustering(np.array([0, 0, 0, 1, 1, 1]), ws, np.array([0, 1])) == 0.0
    assert max_misclustering(np.array([0, 0, 1, 1, 1, 1]), ws, np.array([0, 1])) == 0.25
