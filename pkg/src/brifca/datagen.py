"""Ground truth, honest machine datasets and Byzantine machines.

Honest machines take indices 0..H-1 and are dealt round-robin into the k
clusters; Byzantine machines take the remaining indices H..m-1.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    STREAM_DATA,
    STREAM_TRUTH,
    ConfigError,
    ExperimentConfig,
    GroundTruth,
    InvalidInputError,
    rng_stream,
)
from .model import Dataset, LossModel, get_model

BYZANTINE_NORM = 3.0
ATTACKS = ("scaled_eval", "arbitrary_vector", "sign_flip", "omniscient_target_smallest")


@dataclass(frozen=True)
class WorkerSpec:
    """One machine. Honest workers carry `cluster`; Byzantine ones carry `strategy`."""

    index: int
    data: Dataset
    cluster: int | None = None
    strategy: str | None = None
    byz_param: np.ndarray | None = None

    def __post_init__(self):
        if (self.cluster is None) == (self.strategy is None):
            raise InvalidInputError("a worker is either honest (cluster) or Byzantine (strategy)")
        if self.strategy is not None and self.strategy not in ATTACKS:
            raise InvalidInputError(f"unknown attack strategy {self.strategy!r}")

    @property
    def honest(self) -> bool:
        return self.cluster is not None


def bernoulli_direction(d: int, norm: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(0.5) coordinates rescaled to the given Euclidean norm.

    The all-zero draw cannot be rescaled and is redrawn.
    """
    while True:
        v = rng.integers(0, 2, size=d).astype(np.float64)
        total = v.sum()
        if total > 0:
            return v * (norm / np.sqrt(total))


def cluster_sizes(honest: int, k: int) -> tuple[int, ...]:
    """Round-robin split of `honest` machines into `k` clusters."""
    return tuple(honest // k + (1 if j < honest % k else 0) for j in range(k))


def generate_ground_truth(k: int, d: int, rng: np.random.Generator, sizes=None) -> GroundTruth:
    if k < 1 or d < 1:
        raise InvalidInputError("k and d must be positive")
    params = np.stack([bernoulli_direction(d, 1.0, rng) for _ in range(k)])
    return GroundTruth(params, tuple(sizes) if sizes is not None else (1,) * k)


def ground_truth_for(config: ExperimentConfig) -> GroundTruth:
    """Ground truth drawn from the config's seed, with its honest cluster sizes."""
    rng = rng_stream(config.seed, (STREAM_TRUTH,))
    return generate_ground_truth(
        config.k, config.d, rng, cluster_sizes(config.honest_count, config.k)
    )


def generate_population(
    config: ExperimentConfig, truth: GroundTruth, model: LossModel | None = None
) -> list[WorkerSpec]:
    """Every machine's dataset; machine i draws from stream (seed, DATA, i)."""
    model = model or get_model(config.model)
    if truth.k != config.k or truth.d != config.d:
        raise ConfigError("ground truth does not match the config's k and d")
    honest = config.honest_count
    if honest < config.k:
        raise ConfigError("every cluster needs at least one honest machine")
    sizes = config.machine_sizes
    if len(sizes) != config.m:
        raise ConfigError(f"{len(sizes)} sample counts for {config.m} machines")
    workers = []
    for i in range(config.m):
        rng = rng_stream(config.seed, (STREAM_DATA, i))
        if i < honest:
            j = i % config.k
            data = model.sample(truth.params[j], sizes[i], config.sigma2, rng)
            workers.append(WorkerSpec(i, data, cluster=j))
        else:
            theta_b = bernoulli_direction(config.d, BYZANTINE_NORM, rng)
            data = model.sample(theta_b, sizes[i], config.sigma2, rng)
            workers.append(WorkerSpec(i, data, strategy=config.attack, byz_param=theta_b))
    return workers


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dump_worker(worker: WorkerSpec, path: str | Path) -> None:
    """Write one worker as text.

    Header lines start with ``#``: ``# index=<i> role=honest cluster=<j>`` or
    ``# index=<i> role=byzantine strategy=<tag>``, optionally followed by
    ``# byz_param <v1> ... <vd>``. Each later line is one sample: its d
    coordinates, then the response for regression data.
    """
    if worker.honest:
        head = f"# index={worker.index} role=honest cluster={worker.cluster}"
    else:
        head = f"# index={worker.index} role=byzantine strategy={worker.strategy}"
    lines = [head]
    if worker.byz_param is not None:
        lines.append("# byz_param " + _fmt(worker.byz_param))
    x, y = worker.data.x, worker.data.y
    for row in range(x.shape[0]):
        values = list(x[row]) + ([] if y is None else [y[row]])
        lines.append(_fmt(values))
    Path(path).write_text("\n".join(lines) + "\n")


def load_worker(path: str | Path, regression: bool) -> WorkerSpec:
    meta: dict[str, str] = {}
    byz_param = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("# byz_param"):
            byz_param = np.array([float(v) for v in line.split()[2:]])
        elif line.startswith("#"):
            meta.update(item.split("=", 1) for item in line[1:].split())
        else:
            rows.append([float(v) for v in line.split()])
    table = np.array(rows, dtype=np.float64)
    if table.ndim != 2:
        raise InvalidInputError(f"{path}: no samples")
    data = Dataset(table[:, :-1], table[:, -1]) if regression else Dataset(table)
    index = int(meta["index"])
    if meta.get("role") == "honest":
        return WorkerSpec(index, data, cluster=int(meta["cluster"]))
    return WorkerSpec(index, data, strategy=meta["strategy"], byz_param=byz_param)


def dump_population(workers, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for w in workers:
        path = directory / f"worker_{w.index:05d}.txt"
        dump_worker(w, path)
        paths.append(path)
    return paths


def load_population(directory: str | Path, regression: bool) -> list[WorkerSpec]:
    paths = sorted(Path(directory).glob("worker_*.txt"))
    return [load_worker(p, regression) for p in paths]
