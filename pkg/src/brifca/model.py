"""Loss families: empirical loss, gradient, local ERM, sampling and diagnostics."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateDesignError,
    GroundTruth,
    InvalidInputError,
    ParameterSpace,
    as_vector,
    uniform_ball,
)

log = logging.getLogger(__name__)

RIDGE = 1e-10


@dataclass(frozen=True)
class Dataset:
    """Samples held by one machine.

    Mean-type families keep their points in `x` (shape (n, d)) and leave `y`
    unset; linear regression keeps features in `x` and responses in `y`.
    """

    x: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InvalidInputError(f"dataset needs a nonempty (n, d) array, got shape {x.shape}")
        object.__setattr__(self, "x", x)
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.float64)
            if y.shape != (x.shape[0],):
                raise InvalidInputError(f"{y.shape} responses for {x.shape[0]} feature rows")
            object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], None if self.y is None else self.y[idx])


@dataclass(frozen=True)
class DiagnosticsReport:
    eta2_hat: float
    nu2_hat: float
    skew_hat: float
    lambda_hat: float
    L_hat: float


class LossModel:
    """A loss family f(theta; z) with its empirical average F_i(theta)."""

    family = "abstract"
    needs_response = False

    def _check(self, theta, data: Dataset) -> np.ndarray:
        theta = as_vector(theta)
        if theta.shape[0] != data.d:
            raise InvalidInputError(f"theta has dimension {theta.shape[0]}, data has {data.d}")
        if self.needs_response != (data.y is not None):
            raise InvalidInputError(f"{self.family} data has the wrong shape")
        return theta

    def sample_losses(self, theta, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def sample_gradients(self, theta, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def loss(self, theta, data: Dataset) -> float:
        return float(np.mean(self.sample_losses(theta, data)))

    def losses(self, params: np.ndarray, data: Dataset) -> np.ndarray:
        """Empirical loss at each row of `params`."""
        return np.array([self.loss(theta, data) for theta in params])

    def gradient(self, theta, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def erm(self, data: Dataset, ridge: float | None = None) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, data: Dataset) -> np.ndarray:
        """Hessian of the empirical loss (constant for these quadratic families)."""
        raise NotImplementedError

    def sample(self, center: np.ndarray, n: int, sigma2: float, rng: np.random.Generator) -> Dataset:
        """Draw `n` i.i.d. samples from the distribution optimized by `center`."""
        raise NotImplementedError


class MeanSquared(LossModel):
    """Mean estimation with f(theta; z) = ||theta - z||^2 and Gaussian samples."""

    family = "mean_squared"

    def sample_losses(self, theta, data):
        theta = self._check(theta, data)
        diff = theta - data.x
        return np.einsum("ij,ij->i", diff, diff)

    def sample_gradients(self, theta, data):
        theta = self._check(theta, data)
        return 2.0 * (theta - data.x)

    def losses(self, params, data):
        diff = params[:, None, :] - data.x[None, :, :]
        return np.mean(np.sum(diff * diff, axis=2), axis=1)

    def gradient(self, theta, data):
        theta = self._check(theta, data)
        return 2.0 * (theta - data.x.mean(axis=0))

    def erm(self, data, ridge=None):
        return data.x.mean(axis=0)

    def hessian(self, data):
        return 2.0 * np.eye(data.d)

    def sample(self, center, n, sigma2, rng):
        center = np.asarray(center, dtype=np.float64)
        return Dataset(center + np.sqrt(sigma2) * rng.standard_normal((n, center.shape[0])))


class PoissonMean(MeanSquared):
    """Squared loss on per-coordinate Poisson counts; `center` holds the rates."""

    family = "poisson_mean"

    def sample(self, center, n, sigma2, rng):
        rates = np.asarray(center, dtype=np.float64)
        if np.any(rates < 0):
            raise InvalidInputError("Poisson rates must be nonnegative")
        return Dataset(rng.poisson(rates, size=(n, rates.shape[0])).astype(np.float64))


class LinRegSquared(LossModel):
    """Linear regression with f(theta; (x, y)) = (y - <x, theta>)^2."""

    family = "linreg_squared"
    needs_response = True

    def sample_losses(self, theta, data):
        theta = self._check(theta, data)
        r = data.y - data.x @ theta
        return r * r

    def sample_gradients(self, theta, data):
        theta = self._check(theta, data)
        r = data.x @ theta - data.y
        return 2.0 * r[:, None] * data.x

    def losses(self, params, data):
        r = data.x @ params.T - data.y[:, None]
        return np.mean(r * r, axis=0)

    def gradient(self, theta, data):
        theta = self._check(theta, data)
        return (2.0 / data.n) * (data.x.T @ (data.x @ theta - data.y))

    def erm(self, data, ridge=None):
        """Least-squares fit.

        With ``ridge=None`` a rank-deficient design raises
        DegenerateDesignError. Otherwise the ridge solution with that
        regularizer is returned; for n < d it is computed in the n x n dual
        form, which approaches the minimum-norm interpolant.
        """
        x, y = data.x, data.y
        n, d = x.shape
        if ridge is None:
            if n < d or np.linalg.matrix_rank(x) < d:
                raise DegenerateDesignError(f"Gram matrix is singular (n={n}, d={d})")
            return np.linalg.solve(x.T @ x, x.T @ y)
        if n >= d and np.linalg.matrix_rank(x) == d:
            return np.linalg.solve(x.T @ x, x.T @ y)
        log.debug("degenerate design n=%d d=%d: ridge %.1e", n, d, ridge)
        if n < d:
            return x.T @ np.linalg.solve(x @ x.T + ridge * np.eye(n), y)
        return np.linalg.solve(x.T @ x + ridge * np.eye(d), x.T @ y)

    def hessian(self, data):
        return (2.0 / data.n) * (data.x.T @ data.x)

    def sample(self, center, n, sigma2, rng):
        center = np.asarray(center, dtype=np.float64)
        x = rng.standard_normal((n, center.shape[0]))
        y = x @ center + np.sqrt(sigma2) * rng.standard_normal(n)
        return Dataset(x, y)


MODELS: dict[str, type[LossModel]] = {
    cls.family: cls for cls in (MeanSquared, LinRegSquared, PoissonMean)
}


def get_model(family: str) -> LossModel:
    try:
        return MODELS[family]()
    except KeyError:
        raise InvalidInputError(f"unknown model family {family!r}") from None


def empirical_loss(model: LossModel, theta, data: Dataset) -> float:
    return model.loss(theta, data)


def empirical_gradient(model: LossModel, theta, data: Dataset) -> np.ndarray:
    return model.gradient(theta, data)


def local_erm(model: LossModel, data: Dataset, ridge: float | None = None) -> np.ndarray:
    return model.erm(data, ridge)


def _abs_skewness(samples: np.ndarray) -> float:
    centered = samples - samples.mean(axis=0)
    var = np.mean(centered**2, axis=0)
    third = np.mean(np.abs(centered) ** 3, axis=0)
    ok = var > 1e-24
    if not np.any(ok):
        return 0.0
    return float(np.max(third[ok] / var[ok] ** 1.5))


def estimate_assumptions(
    model: LossModel,
    truth: GroundTruth,
    probe_count: int,
    rng: np.random.Generator,
    *,
    sigma2: float = 0.2,
    samples: int = 10_000,
    space: ParameterSpace | None = None,
) -> DiagnosticsReport:
    """Monte-Carlo estimates of the distributional constants of every cluster.

    Probes are uniform in `space` (unit ball by default, the region the
    cluster optima live in); each probe gets a fresh sample per cluster.
    """
    if probe_count < 2:
        raise InvalidInputError("probe_count must be at least 2")
    space = space or ParameterSpace(1.0)
    d = truth.d
    center = space.center_for(d)
    eta2 = nu2 = skew = 0.0
    lam, big_l = np.inf, 0.0
    for j in range(truth.k):
        hess_data = model.sample(truth.params[j], samples, sigma2, rng)
        eig = np.linalg.eigvalsh(model.hessian(hess_data))
        lam, big_l = min(lam, float(eig[0])), max(big_l, float(eig[-1]))
        for _ in range(probe_count):
            theta = uniform_ball(rng, center, space.radius)
            data = model.sample(truth.params[j], samples, sigma2, rng)
            f = model.sample_losses(theta, data)
            g = model.sample_gradients(theta, data)
            eta2 = max(eta2, float(np.var(f)))
            dev = g - g.mean(axis=0)
            nu2 = max(nu2, float(np.mean(np.sum(dev * dev, axis=1))))
            skew = max(skew, _abs_skewness(g))
    return DiagnosticsReport(eta2, nu2, skew, max(lam, 0.0), big_l)
