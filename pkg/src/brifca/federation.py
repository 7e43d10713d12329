"""Byzantine-robust IFCA round loop and the plain FedAvg IFCA baseline."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .aggregation import AggregationRule
from .core import (
    LAMBDA_F,
    L_F,
    STREAM_ATTACK,
    STREAM_INIT,
    STREAM_RESAMPLE,
    ConfigError,
    ExperimentConfig,
    GroundTruth,
    InvalidInputError,
    ParameterSpace,
    project,
    rng_stream,
    uniform_ball,
)
from .datagen import WorkerSpec
from .metrics import TrialRecord, TrialRow, cluster_accuracy, cluster_errors, match_clusters
from .model import Dataset, LossModel, get_model

log = logging.getLogger(__name__)

SCALE = 3.0  # scaled_eval evaluates the gradient at SCALE * theta


@dataclass(frozen=True)
class GradientReport:
    index: int
    cluster: int
    g: np.ndarray
    weight: float = 1.0


@dataclass(frozen=True)
class RoundState:
    """Broadcast parameters at iteration t and the assignments that produced them."""

    t: int
    params: np.ndarray
    assignments: np.ndarray | None = None

    def rosters(self) -> list[np.ndarray]:
        k = self.params.shape[0]
        if self.assignments is None:
            return [np.array([], dtype=np.int64) for _ in range(k)]
        return [np.flatnonzero(self.assignments == j) for j in range(k)]


def assign_cluster(
    worker: WorkerSpec,
    params: np.ndarray,
    model: LossModel,
    *,
    data: Dataset | None = None,
    target: int | None = None,
) -> int:
    """Cluster estimate sent by `worker`: argmin of its empirical loss, lowest index on ties.

    Byzantine workers choose the same way except under
    ``omniscient_target_smallest``, which reports `target`.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 2 or params.shape[0] == 0:
        raise InvalidInputError("params must be a nonempty (k, d) array")
    if worker.strategy == "omniscient_target_smallest":
        if target is None:
            raise InvalidInputError("omniscient attack needs the target cluster")
        return int(target)
    losses = model.losses(params, data if data is not None else worker.data)
    return int(np.argmin(losses))


def worker_report(
    worker: WorkerSpec,
    params: np.ndarray,
    model: LossModel,
    assignment: int,
    *,
    data: Dataset | None = None,
    rng: np.random.Generator | None = None,
    magnitude: float = 100.0,
) -> GradientReport:
    """Gradient sent by `worker` for its reported cluster `assignment`."""
    if not 0 <= assignment < len(params):
        raise InvalidInputError(f"assignment {assignment} outside [0, {len(params)})")
    data = data if data is not None else worker.data
    theta = params[assignment]
    strategy = worker.strategy
    if strategy is None:
        g = model.gradient(theta, data)
    elif strategy in ("scaled_eval", "omniscient_target_smallest"):
        g = model.gradient(SCALE * theta, data)
    elif strategy == "sign_flip":
        g = -model.gradient(theta, data)
    elif strategy == "arbitrary_vector":
        if rng is None:
            raise InvalidInputError("arbitrary_vector attack needs a random stream")
        direction = rng.standard_normal(theta.shape[0])
        g = magnitude * direction / np.linalg.norm(direction)
    else:
        raise InvalidInputError(f"unknown strategy {strategy!r}")
    return GradientReport(worker.index, assignment, g, float(data.n))


def server_round(
    state: RoundState,
    reports: list[GradientReport],
    rule: AggregationRule,
    gamma: float,
    space: ParameterSpace | None,
) -> RoundState:
    """Aggregate each cluster's reports with `rule` and take a projected gradient step.

    Non-finite reports are dropped; a cluster with no surviving reports keeps
    its parameter unchanged.
    """
    k, _ = state.params.shape
    grouped: list[list[GradientReport]] = [[] for _ in range(k)]
    assignments = np.full(max((r.index for r in reports), default=-1) + 1, -1, dtype=np.int64)
    for r in reports:
        if not 0 <= r.cluster < k:
            raise InvalidInputError(f"report from machine {r.index} names cluster {r.cluster}")
        assignments[r.index] = r.cluster
        if np.all(np.isfinite(r.g)):
            grouped[r.cluster].append(r)
        else:
            log.warning("round %d: rejected non-finite report from machine %d", state.t, r.index)
    new = state.params.copy()
    for j, group in enumerate(grouped):
        if not group:
            continue
        batch = np.stack([r.g for r in group])
        g = rule(batch, [r.weight for r in group]) if rule.kind == "mean" else rule(batch)
        new[j] = project(state.params[j] - gamma * g, space)
    return RoundState(state.t + 1, new, assignments)


def warm_radius(truth: GroundTruth, space: ParameterSpace | None) -> float:
    """(1/4) * sqrt(lambda_F / L_F) * Delta, capped by the parameter ball for k = 1."""
    r = 0.25 * math.sqrt(LAMBDA_F / L_F) * truth.delta
    cap = space.radius if space is not None else 1.0
    return min(r, cap)


def initial_params(config: ExperimentConfig, truth: GroundTruth) -> np.ndarray:
    rng = rng_stream(config.seed, (STREAM_INIT,))
    space = config.space
    if config.init_mode == "warm":
        r = warm_radius(truth, space)
        params = [uniform_ball(rng, truth.params[j], r) for j in range(truth.k)]
    else:
        center = np.zeros(truth.d) if space is None else space.center_for(truth.d)
        radius = 1.0 if space is None else space.radius
        params = [uniform_ball(rng, center, radius) for _ in range(truth.k)]
    return np.stack([project(p, space) for p in params])


def _splits(config: ExperimentConfig, workers: list[WorkerSpec]) -> list[list[np.ndarray]] | None:
    if not config.resampling:
        return None
    out = []
    for w in workers:
        rng = rng_stream(config.seed, (STREAM_RESAMPLE, w.index))
        out.append(np.array_split(rng.permutation(w.data.n), 2 * config.T))
    return out


def run_algorithm(
    config: ExperimentConfig,
    truth: GroundTruth,
    workers: list[WorkerSpec],
    rule: AggregationRule,
    *,
    method: str = "brifca",
    model: LossModel | None = None,
    init_params: np.ndarray | None = None,
    fixed_assignments=None,
    timing: bool = False,
) -> TrialRecord:
    """Run T rounds and record dist and honest cluster accuracy at iterations 0..T.

    `fixed_assignments` (one cluster per machine) freezes cluster estimates
    instead of recomputing them each round.
    """
    config.validate()
    model = model or get_model(config.model)
    if len(workers) != config.m or [w.index for w in workers] != list(range(config.m)):
        raise ConfigError("workers must be indexed 0..m-1 in order")
    if truth.k != config.k or truth.d != config.d:
        raise ConfigError("ground truth does not match the config's k and d")
    space = config.space
    params = initial_params(config, truth) if init_params is None else np.array(init_params, float)
    if params.shape != (config.k, config.d):
        raise ConfigError(f"initial params have shape {params.shape}")
    fixed = None if fixed_assignments is None else np.asarray(fixed_assignments, dtype=np.int64)
    splits = _splits(config, workers)
    target = int(np.argmin(truth.cluster_sizes))

    state = RoundState(0, params)
    record = TrialRecord(config.seed, method, config.config_hash())
    start = time.perf_counter()

    def assign_all(t: int) -> np.ndarray:
        if fixed is not None:
            return fixed
        out = np.empty(config.m, dtype=np.int64)
        for w in workers:
            data = None
            if splits is not None and t < config.T:
                data = w.data.subset(splits[w.index][2 * t])
            out[w.index] = assign_cluster(w, state.params, model, data=data, target=target)
        return out

    def emit(t: int, assignments: np.ndarray):
        perm = match_clusters(state.params, truth.params)
        errs = cluster_errors(state.params, truth.params, perm)
        elapsed = (time.perf_counter() - start) * 1e3 if timing else 0.0
        record.rows.append(TrialRow(
            t, sum(errs.tolist()) / len(errs), cluster_accuracy(assignments, workers, perm),
            tuple(errs.tolist()), elapsed,
        ))

    for t in range(config.T):
        assignments = assign_all(t)
        emit(t, assignments)
        reports = []
        for w in workers:
            data = None
            if splits is not None:
                data = w.data.subset(splits[w.index][2 * t + 1])
            rng = None
            if w.strategy == "arbitrary_vector":
                rng = rng_stream(config.seed, (STREAM_ATTACK, t, w.index))
            reports.append(worker_report(
                w, state.params, model, int(assignments[w.index]),
                data=data, rng=rng, magnitude=config.attack_magnitude,
            ))
        state = server_round(state, reports, rule, config.gamma, space)
    emit(config.T, assign_all(config.T))
    record.final_params = state.params
    return record


METHOD_RULES = {
    "brifca_median": lambda cfg: AggregationRule.median(),
    "brifca_trimmed": lambda cfg: AggregationRule.trimmed_mean(cfg.beta, cfg.trim_divisor),
    "ifca_fedavg": lambda cfg: AggregationRule.mean(),
}
