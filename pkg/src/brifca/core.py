"""Shared numeric types, parameter-space projection, seeding and configuration."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np


class BrifcaError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(BrifcaError, ValueError):
    pass


class EmptyAggregateError(BrifcaError, ValueError):
    pass


class OverTrimError(BrifcaError, ValueError):
    pass


class DegenerateDesignError(BrifcaError, ValueError):
    pass


class ConfigError(BrifcaError, ValueError):
    pass


# Stream namespaces for rng_stream labels. The first label of every stream is
# one of these so that draws for different purposes never share state.
STREAM_TRUTH = 0
STREAM_DATA = 1
STREAM_INIT = 2
STREAM_ATTACK = 3
STREAM_RESAMPLE = 4
STREAM_KMEANS = 5
STREAM_DIAGNOSE = 6

L_F = 2.0  # smoothness of the population loss for every built-in family
LAMBDA_F = 2.0  # strong convexity of the same

INIT_MODES = ("warm", "random")


def as_vector(theta, d: int | None = None) -> np.ndarray:
    """Return `theta` as a finite float64 vector, optionally checking its length."""
    arr = np.asarray(theta, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInputError(f"expected a 1-d vector, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise InvalidInputError(f"expected dimension {d}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("vector has non-finite coordinates")
    return arr


@dataclass(frozen=True)
class ParameterSpace:
    """Euclidean ball standing in for the compact convex parameter set."""

    radius: float = 10.0
    center: np.ndarray | None = None

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InvalidInputError(f"radius must be positive and finite, got {self.radius}")
        if self.center is not None:
            object.__setattr__(self, "center", as_vector(self.center))

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def center_for(self, d: int) -> np.ndarray:
        if self.center is None:
            return np.zeros(d)
        if self.center.shape[0] != d:
            raise InvalidInputError(f"space center has dimension {self.center.shape[0]}, not {d}")
        return self.center


def project(theta, space: ParameterSpace | None) -> np.ndarray:
    """Euclidean projection of `theta` onto the ball `space`.

    ``space=None`` disables projection (the vector is only validated).
    """
    theta = as_vector(theta)
    if space is None:
        return theta
    center = space.center_for(theta.shape[0])
    offset = theta - center
    norm = float(np.linalg.norm(offset))
    if norm <= space.radius:
        return theta
    return center + (space.radius / norm) * offset


def rng_stream(seed: int, labels: Sequence[int] = ()) -> np.random.Generator:
    """Independent generator keyed by ``(seed, labels)``.

    Identical keys give identical streams; the key, not call order, decides
    the draws, so machines and trials can be generated in any order.
    """
    entropy = int(seed) % (1 << 64)
    key = tuple(int(label) % (1 << 64) for label in labels)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=key)))


def uniform_ball(rng: np.random.Generator, center: np.ndarray, radius: float) -> np.ndarray:
    """Uniform draw from the ball of `radius` around `center`."""
    direction = rng.standard_normal(center.shape[0])
    norm = np.linalg.norm(direction)
    if norm == 0:
        return center.copy()
    scale = radius * rng.random() ** (1.0 / center.shape[0])
    return center + scale * direction / norm


def min_separation(params: np.ndarray) -> float:
    """Minimum pairwise Euclidean distance between rows; ``inf`` for a single row."""
    params = np.asarray(params, dtype=np.float64)
    best = math.inf
    for a in range(params.shape[0]):
        for b in range(a + 1, params.shape[0]):
            best = min(best, float(np.linalg.norm(params[a] - params[b])))
    return best


@dataclass(frozen=True)
class GroundTruth:
    """True cluster optima, honest cluster sizes and their minimum separation."""

    params: np.ndarray
    cluster_sizes: tuple[int, ...]
    delta: float = field(init=False)

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64)
        if params.ndim != 2 or not np.all(np.isfinite(params)):
            raise InvalidInputError("ground-truth params must be a finite (k, d) array")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        sizes = tuple(int(s) for s in self.cluster_sizes)
        if len(sizes) != params.shape[0] or any(s < 0 for s in sizes):
            raise InvalidInputError("cluster_sizes must give one nonnegative count per cluster")
        object.__setattr__(self, "cluster_sizes", sizes)
        object.__setattr__(self, "delta", min_separation(params))

    @property
    def k(self) -> int:
        return self.params.shape[0]

    @property
    def d(self) -> int:
        return self.params.shape[1]

    def fractions(self, m: int) -> np.ndarray:
        """Cluster fractions p_j = |S_j| / m."""
        return np.asarray(self.cluster_sizes, dtype=np.float64) / m


@dataclass(frozen=True)
class ExperimentConfig:
    """Every scalar of one simulated setting.

    `n_per_machine` is either a single sample count shared by all machines or
    one count per machine. `trim_divisor` selects between dividing the trimmed
    sum by the number of retained values ("exact") or by (1 - 2*beta)*m ("nominal").
    """

    m: int = 80
    k: int = 2
    d: int = 20
    n_per_machine: int | tuple[int, ...] = 100
    alpha: float = 0.05
    beta: float = 0.05
    gamma: float = 1.0 / L_F
    T: int = 300
    sigma2: float = 0.2
    seed: int = 0
    resampling: bool = False
    init_mode: str = "warm"
    attack: str = "scaled_eval"
    attack_magnitude: float = 100.0
    model: str = "linreg_squared"
    radius: float = 10.0
    projection: bool = True
    trim_divisor: str = "exact"
    kmeans_iterations: int = 100

    def __post_init__(self):
        if not isinstance(self.n_per_machine, int):
            object.__setattr__(self, "n_per_machine", tuple(int(n) for n in self.n_per_machine))

    @property
    def byzantine_count(self) -> int:
        return int(math.floor(self.alpha * self.m + 0.5))

    @property
    def honest_count(self) -> int:
        return self.m - self.byzantine_count

    @property
    def machine_sizes(self) -> tuple[int, ...]:
        if isinstance(self.n_per_machine, int):
            return (self.n_per_machine,) * self.m
        return self.n_per_machine

    @property
    def space(self) -> ParameterSpace | None:
        return ParameterSpace(self.radius) if self.projection else None

    def validate(self) -> "ExperimentConfig":
        # imported here: the registries live in modules that import this one
        from .datagen import ATTACKS
        from .model import MODELS

        def need(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        need(self.m >= 1 and self.k >= 1 and self.d >= 1, "m, k and d must be positive")
        need(0 <= self.alpha < 0.5, f"alpha must lie in [0, 1/2), got {self.alpha}")
        need(0 <= self.beta < 0.5, f"beta must lie in [0, 1/2), got {self.beta}")
        need(self.gamma > 0 and math.isfinite(self.gamma), "gamma must be positive")
        need(self.T >= 0, "T must be nonnegative")
        need(self.sigma2 >= 0, "sigma2 must be nonnegative")
        need(self.radius > 0, "radius must be positive")
        need(self.honest_count >= self.k, "every cluster needs at least one honest machine")
        sizes = self.machine_sizes
        need(len(sizes) == self.m, f"n_per_machine lists {len(sizes)} counts for {self.m} machines")
        need(all(n >= 1 for n in sizes), "every machine needs at least one sample")
        need(self.init_mode in INIT_MODES, f"unknown init_mode {self.init_mode!r}")
        need(self.attack in ATTACKS, f"unknown attack {self.attack!r}")
        need(self.model in MODELS, f"unknown model {self.model!r}")
        need(self.trim_divisor in ("exact", "nominal"), f"unknown trim_divisor {self.trim_divisor!r}")
        need(self.kmeans_iterations >= 1, "kmeans_iterations must be positive")
        if self.resampling:
            need(min(sizes) >= 2 * self.T,
                 f"resampling splits each machine's data into 2T={2 * self.T} parts; "
                 f"smallest machine has {min(sizes)} samples")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        if isinstance(self.n_per_machine, tuple):
            out["n_per_machine"] = list(self.n_per_machine)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_dict(raw: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON object file and validate it."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return config_from_dict(raw).validate()
