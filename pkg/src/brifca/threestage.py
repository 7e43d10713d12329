"""Three-Stage baseline: local ERMs, trimmed k-means on the ERMs, frozen-cluster aggregation."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .aggregation import AggregationRule, trim_count
from .core import (
    STREAM_KMEANS,
    ExperimentConfig,
    GroundTruth,
    InvalidInputError,
    ParameterSpace,
    rng_stream,
)
from .datagen import WorkerSpec
from .federation import run_algorithm
from .metrics import TrialRecord, match_clusters, max_misclustering
from .model import RIDGE, LossModel, get_model


@dataclass(frozen=True)
class TrimmedKMeansState:
    """Result of trimmed k-means.

    `labels` gives every point's nearest final center; `trimmed` marks the
    points excluded from their cluster's center estimate.
    """

    centers: np.ndarray
    labels: np.ndarray
    trimmed: np.ndarray
    trim: float
    iterations: int

    @property
    def memberships(self) -> np.ndarray:
        """Cluster per point, -1 for trimmed points."""
        return np.where(self.trimmed, -1, self.labels)


def stage1_erms(workers: list[WorkerSpec], model: LossModel, ridge: float | None = RIDGE) -> np.ndarray:
    """Local empirical risk minimizer of every machine, Byzantine ones included."""
    return np.stack([model.erm(w.data, ridge) for w in workers])


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator, local_trials: int | None = None) -> np.ndarray:
    """Greedy k-means++ seeding.

    Each new center is the best of `local_trials` D^2-weighted candidates,
    judged by the resulting potential; this keeps isolated outliers from
    being picked merely for being far away.
    """
    n = points.shape[0]
    trials = local_trials or 2 + int(np.log(k))
    centers = [points[rng.integers(n)]]
    d2 = _sq_dists(points, np.stack(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            cand = rng.integers(n, size=trials)
        else:
            cand = rng.choice(n, size=trials, p=d2 / total)
        cand_d2 = np.minimum(d2[None, :], _sq_dists(points, points[cand]).T)
        best = int(np.argmin(cand_d2.sum(axis=1)))
        centers.append(points[cand[best]])
        d2 = cand_d2[best]
    return np.stack(centers).astype(np.float64)


def _trim_and_update(points, centers, labels, trim):
    k = centers.shape[0]
    trimmed = np.zeros(points.shape[0], dtype=bool)
    new = centers.copy()
    empty = []
    for j in range(k):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            empty.append(j)
            continue
        d2 = np.sum((points[members] - centers[j]) ** 2, axis=1)
        cut = trim_count(members.size, trim)
        if cut:
            far = members[np.argsort(-d2, kind="stable")[:cut]]
            trimmed[far] = True
        kept = members[~trimmed[members]]
        new[j] = points[kept].mean(axis=0)
    for j in empty:
        # re-seed from the untrimmed point farthest from its own center
        pool = np.flatnonzero(~trimmed)
        gaps = np.sum((points[pool] - new[labels[pool]]) ** 2, axis=1)
        new[j] = points[pool[int(np.argmax(gaps))]]
    return new, trimmed


def _objective(points, centers, labels, trimmed) -> float:
    keep = ~trimmed
    diff = points[keep] - centers[labels[keep]]
    return float(np.sum(diff * diff))


def _lloyd(points, k, trim, S, rng):
    centers = kmeans_pp(points, k, rng)
    labels = np.argmin(_sq_dists(points, centers), axis=1)
    trimmed = np.zeros(points.shape[0], dtype=bool)
    it = 0
    while it < S:
        it += 1
        centers, trimmed = _trim_and_update(points, centers, labels, trim)
        new_labels = np.argmin(_sq_dists(points, centers), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return TrimmedKMeansState(centers, labels, trimmed, trim, it)


def trimmed_kmeans(points, k: int, trim: float, S: int, rng: np.random.Generator,
                   restarts: int = 10) -> TrimmedKMeansState:
    """Lloyd iterations with per-cluster distance trimming.

    Each iteration assigns points to their nearest center, drops the
    floor(trim * size) farthest members of every cluster and moves each
    center to the mean of its remaining members. A run stops after `S`
    iterations or once the labels stop changing; of `restarts` seeded runs
    the one with the smallest untrimmed within-cluster sum of squares wins.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or not 1 <= k <= points.shape[0]:
        raise InvalidInputError(f"need at least k={k} points, got shape {points.shape}")
    if not 0 <= trim < 0.5:
        raise InvalidInputError(f"trim must lie in [0, 1/2), got {trim}")
    best, best_obj = None, np.inf
    for _ in range(max(1, restarts)):
        run = _lloyd(points, k, trim, S, rng)
        obj = _objective(points, run.centers, run.labels, run.trimmed)
        if obj < best_obj:
            best, best_obj = run, obj
    return best


def stage3_aggregate(
    workers: list[WorkerSpec],
    labels,
    model: LossModel,
    beta: float,
    gamma: float,
    T: int,
    space: ParameterSpace | None,
    init: np.ndarray,
    *,
    config: ExperimentConfig | None = None,
    truth: GroundTruth | None = None,
) -> np.ndarray:
    """Trimmed-mean gradient descent per frozen cluster, starting from `init`."""
    record = _stage3_record(workers, labels, model, beta, gamma, T, space, init, config, truth)
    return record.final_params


def _stage3_record(workers, labels, model, beta, gamma, T, space, init, config, truth,
                   timing=False, method="three_stage"):
    init = np.asarray(init, dtype=np.float64)
    k, d = init.shape
    if config is None:
        config = ExperimentConfig(
            m=len(workers), k=k, d=d, alpha=0.0, beta=beta, gamma=gamma, T=T,
            model=model.family, projection=space is not None,
            radius=space.radius if space is not None else 10.0,
        )
    else:
        config = replace(config, beta=beta, gamma=gamma, T=T)
    if truth is None:
        # only the trajectory metric needs it; the initial centers serve as a stand-in
        truth = GroundTruth(init, (1,) * k)
    rule = AggregationRule.trimmed_mean(beta, config.trim_divisor)
    return run_algorithm(
        config, truth, workers, rule, method=method, model=model,
        init_params=init, fixed_assignments=labels, timing=timing,
    )


def run_three_stage(
    config: ExperimentConfig,
    truth: GroundTruth,
    workers: list[WorkerSpec],
    *,
    model: LossModel | None = None,
    timing: bool = False,
) -> tuple[TrialRecord, TrimmedKMeansState]:
    """All three stages; the record's rows trace stage III from the clustered centers."""
    model = model or get_model(config.model)
    erms = stage1_erms(workers, model)
    rng = rng_stream(config.seed, (STREAM_KMEANS,))
    clustering = trimmed_kmeans(erms, config.k, config.beta, config.kmeans_iterations, rng)
    record = _stage3_record(
        workers, clustering.labels, model, config.beta, config.gamma, config.T,
        config.space, clustering.centers, config, truth, timing=timing,
    )
    return record, clustering


def misclustering_rate(clustering: TrimmedKMeansState, workers, truth: GroundTruth) -> float:
    """Max per-cluster fraction of mis-clustered honest machines under the optimal matching."""
    perm = match_clusters(clustering.centers, truth.params)
    return max_misclustering(clustering.labels, workers, perm)
