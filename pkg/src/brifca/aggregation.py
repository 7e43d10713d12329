"""Coordinate-wise robust aggregation rules and the plain FedAvg mean.

All rules take a batch of vectors (anything convertible to a 2-d array with
one vector per row) and return a single float64 vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EmptyAggregateError, InvalidInputError, OverTrimError


def _batch(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        arr = vectors.astype(np.float64, copy=False)
    else:
        vectors = list(vectors)
        if not vectors:
            raise EmptyAggregateError("cannot aggregate an empty batch")
        try:
            arr = np.array(vectors, dtype=np.float64)
        except ValueError as exc:
            raise InvalidInputError(f"vectors do not share one dimension: {exc}") from exc
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a batch of vectors, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptyAggregateError("cannot aggregate an empty batch")
    return arr


def _running_sum(rows: np.ndarray) -> np.ndarray:
    # Left-to-right accumulation in row order so results do not depend on
    # numpy's pairwise-summation blocking.
    total = rows[0].copy()
    for row in rows[1:]:
        total += row
    return total


def trim_count(batch_size: int, beta: float) -> int:
    """Values removed from each end: floor(beta * batch_size).

    A 1e-9 guard keeps products like 0.29 * 100 = 28.999999999999996 at 29.
    """
    return int(math.floor(beta * batch_size + 1e-9))


def coordinate_median(vectors) -> np.ndarray:
    """Per-coordinate median; even batches use the midpoint of the two middle values."""
    arr = _batch(vectors)
    ordered = np.sort(arr, axis=0, kind="stable")
    size = arr.shape[0]
    mid = size // 2
    if size % 2:
        return ordered[mid].copy()
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def coordinate_trimmed_mean(vectors, beta: float, divisor: str = "exact") -> np.ndarray:
    """Per-coordinate mean after dropping the floor(beta*m) largest and smallest values.

    ``divisor="exact"`` averages the retained values; ``"nominal"`` divides their
    sum by (1 - 2*beta)*m, which differs whenever beta*m is not an integer.
    """
    if not 0 <= beta < 0.5:
        raise InvalidInputError(f"beta must lie in [0, 1/2), got {beta}")
    arr = _batch(vectors)
    size = arr.shape[0]
    cut = trim_count(size, beta)
    kept = size - 2 * cut
    if kept < 1:
        raise OverTrimError(f"trimming {cut} from each end of {size} values leaves nothing")
    ordered = np.sort(arr, axis=0, kind="stable")
    total = _running_sum(ordered[cut:size - cut])
    if divisor == "exact":
        return total / kept
    if divisor == "nominal":
        return total / ((1.0 - 2.0 * beta) * size)
    raise InvalidInputError(f"unknown divisor {divisor!r}")


def fedavg_mean(vectors, weights=None) -> np.ndarray:
    """Weighted arithmetic mean; uniform weights when `weights` is None."""
    arr = _batch(vectors)
    if weights is None:
        return _running_sum(arr) / arr.shape[0]
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (arr.shape[0],):
        raise InvalidInputError(f"{w.shape[0] if w.ndim else 0} weights for {arr.shape[0]} vectors")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise InvalidInputError("weights must be finite, nonnegative and sum to a positive value")
    return (w @ arr) / w.sum()


@dataclass(frozen=True)
class AggregationRule:
    """One of ``median``, ``trimmed_mean`` (with `beta`) or ``mean``."""

    kind: str
    beta: float = 0.0
    divisor: str = "exact"

    def __post_init__(self):
        if self.kind not in ("median", "trimmed_mean", "mean"):
            raise InvalidInputError(f"unknown aggregation rule {self.kind!r}")
        if self.kind == "trimmed_mean" and not 0 <= self.beta < 0.5:
            raise InvalidInputError(f"beta must lie in [0, 1/2), got {self.beta}")

    @classmethod
    def median(cls) -> "AggregationRule":
        return cls("median")

    @classmethod
    def trimmed_mean(cls, beta: float, divisor: str = "exact") -> "AggregationRule":
        return cls("trimmed_mean", beta, divisor)

    @classmethod
    def mean(cls) -> "AggregationRule":
        return cls("mean")

    def __call__(self, vectors, weights=None) -> np.ndarray:
        if self.kind == "median":
            return coordinate_median(vectors)
        if self.kind == "trimmed_mean":
            return coordinate_trimmed_mean(vectors, self.beta, self.divisor)
        return fedavg_mean(vectors, weights)
