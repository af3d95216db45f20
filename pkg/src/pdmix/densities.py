"""Component density families and the support-by-observation likelihood matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import gammaln, xlogy

from .data import DistinctDataset, InputError, SupportSet

LOG_2PI = np.log(2 * np.pi)


class ZeroColumnError(InputError):
    """An observation has zero density under every support vector."""

    def __init__(self, index):
        self.index = index
        super().__init__(
            f"observation {index} has zero density under every support vector"
        )


def _cholesky(cov) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise InputError("covariance must be square")
    try:
        return cholesky(cov, lower=True)
    except LinAlgError as exc:
        raise InputError("covariance is not positive definite") from exc


def normal_log_density(y, mu, Sigma, delta: float = 1.0) -> float:
    """log N_p(y; mu, delta * Sigma)."""
    if not delta > 0:
        raise InputError("delta must be positive")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    L = _cholesky(delta * np.atleast_2d(Sigma))
    r = solve_triangular(L, y - mu, lower=True)
    logdet = 2 * np.log(np.diag(L)).sum()
    return -0.5 * (y.size * LOG_2PI + logdet + r @ r)


def poisson_log_density(y, theta) -> float:
    """log Poisson(y; theta), with 0 log 0 = 0 so theta = 0 is allowed."""
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise InputError("Poisson observations must be non-negative integers")
    if np.any(theta < 0):
        raise InputError("Poisson mean must be non-negative")
    out = xlogy(y, theta) - theta - gammaln(y + 1)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class NormalFamily:
    """Multivariate normal components N_p(theta, delta * Sigma) with a shared covariance."""

    Sigma: np.ndarray
    delta: float = 1.0

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if not self.delta > 0:
            raise InputError("delta must be positive")
        if not np.allclose(S, S.T, rtol=1e-10, atol=0):
            raise InputError("Sigma must be symmetric")
        _cholesky(self.delta * S)
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "delta", float(self.delta))

    kind = "normal"

    @property
    def covariance(self) -> np.ndarray:
        return self.delta * self.Sigma

    def with_delta(self, delta: float) -> "NormalFamily":
        return NormalFamily(self.Sigma, delta)

    def log_matrix(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        if theta.shape[1] != self.Sigma.shape[0] or y.shape[1] != self.Sigma.shape[0]:
            raise InputError("dimension of Sigma does not match the data")
        L = _cholesky(self.covariance)
        a = solve_triangular(L, y.T, lower=True).T
        b = solve_triangular(L, theta.T, lower=True).T
        q = cdist(b, a, "sqeuclidean")
        logdet = 2 * np.log(np.diag(L)).sum()
        return -0.5 * (y.shape[1] * LOG_2PI + logdet + q)


@dataclass(frozen=True)
class PoissonFamily:
    """Univariate Poisson components indexed by their mean."""

    kind = "poisson"

    def log_matrix(self, theta: np.ndarray, y: np.ndarray) -> np.ndarray:
        if theta.shape[1] != 1 or y.shape[1] != 1:
            raise InputError("the Poisson family is univariate")
        return poisson_log_density(y[None, :, 0], theta[:, 0, None])


@dataclass(frozen=True)
class LikelihoodMatrix:
    """m x d matrix of component log densities, rows = supports, columns = data.

    ``values`` holds the densities themselves. ``scaled`` divides each column
    by its maximum; solvers may work on it since rescaling a column only
    shifts the corresponding dual coordinate, and ``column_shift`` restores
    the loglikelihood: l(F) = l(scaled) + counts @ column_shift.
    """

    log_values: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.log_values, dtype=float)
        if L.ndim != 2:
            raise InputError("likelihood matrix must be 2-D")
        if np.any(np.isnan(L)) or np.any(L == np.inf):
            raise InputError("likelihood matrix has invalid entries")
        dead = np.flatnonzero(np.all(L == -np.inf, axis=0))
        if dead.size:
            raise ZeroColumnError(int(dead[0]))
        L.setflags(write=False)
        object.__setattr__(self, "log_values", L)

    @property
    def shape(self):
        return self.log_values.shape

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    @property
    def column_shift(self) -> np.ndarray:
        return self.log_values.max(axis=0)

    @property
    def scaled(self) -> np.ndarray:
        return np.exp(self.log_values - self.column_shift)


def likelihood_matrix(family, supports: SupportSet, data: DistinctDataset) -> LikelihoodMatrix:
    """F[j, i] = density of observation i under support j."""
    if supports.p != data.p:
        raise InputError(
            f"support dimension {supports.p} does not match data dimension {data.p}"
        )
    Lmat = family.log_matrix(supports.theta, data.y)
    return LikelihoodMatrix(Lmat)
