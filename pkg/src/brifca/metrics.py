"""Evaluation metric, label matching, cluster accuracy and trial records."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import InvalidInputError


def match_clusters(estimates, truth_params) -> np.ndarray:
    """Optimal matching: ``perm[j]`` is the estimate paired with true cluster j."""
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truth_params, dtype=np.float64)
    if est.shape != tru.shape:
        raise InvalidInputError(f"estimates {est.shape} and truth {tru.shape} differ in shape")
    cost = np.linalg.norm(tru[:, None, :] - est[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(tru.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def cluster_errors(estimates, truth_params, perm) -> np.ndarray:
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truth_params, dtype=np.float64)
    return np.array([float(np.linalg.norm(est[perm[j]] - tru[j])) for j in range(tru.shape[0])])


def dist(estimates, truth_params, perm=None) -> float:
    """(1/k) * sum_j ||estimate matched to j - theta_j*||, minimized over matchings."""
    if hasattr(truth_params, "params"):
        truth_params = truth_params.params
    if perm is None:
        perm = match_clusters(estimates, truth_params)
    errs = cluster_errors(estimates, truth_params, perm)
    return sum(errs.tolist()) / len(errs)


def cluster_accuracy(assignments, workers, perm) -> float:
    """Fraction of honest workers whose reported cluster is the match of their true one."""
    hits = total = 0
    for w in workers:
        if w.cluster is None:
            continue
        total += 1
        hits += int(assignments[w.index] == perm[w.cluster])
    return hits / total if total else 1.0


def max_misclustering(labels, workers, perm) -> float:
    """Largest fraction, over estimated clusters, of honest members from another true cluster."""
    inverse = np.argsort(perm)
    worst = 0.0
    for c in range(len(perm)):
        members = [w for w in workers if w.cluster is not None and labels[w.index] == c]
        if members:
            wrong = sum(1 for w in members if inverse[c] != w.cluster)
            worst = max(worst, wrong / len(members))
    return worst


@dataclass(frozen=True)
class TrialRow:
    iteration: int
    dist: float
    cluster_accuracy: float
    cluster_errors: tuple[float, ...]
    elapsed_ms: float = 0.0


@dataclass
class TrialRecord:
    """Per-iteration trajectory of one seeded run (iterations 0..T)."""

    seed: int
    method: str
    config_hash: str
    rows: list[TrialRow] = field(default_factory=list)
    final_params: np.ndarray | None = None

    @property
    def final_dist(self) -> float:
        return self.rows[-1].dist

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].cluster_accuracy

    def dists(self) -> np.ndarray:
        return np.array([r.dist for r in self.rows])
