"""EM baselines: fixed-support (discrete) EM and free-location (continuous) EM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import DistinctDataset, InputError
from .recovery import (MixingMeasure, em_step, gradient_function, mixture_loglik,
                       refine_weights)


@dataclass
class EMTrace:
    """History of an EM run: loglikelihood and (discrete EM only) Psi per iteration."""

    loglik: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    converged: bool = False
    reason: str = ""

    @property
    def n_iter(self) -> int:
        return max(len(self.loglik) - 1, 0)


def discrete_em_solve(F, counts, pi0=None, psi_tol: float | None = 0.005,
                      tau: float | None = None, max_iter: int = 100_000, shift=None):
    """Iterate the EM weight update over fixed supports.

    Stops when Psi <= ``psi_tol`` or, if ``tau`` is given, when the
    loglikelihood gain of one iteration is at most ``tau``; whichever
    rule is enabled and fires first. Pass ``psi_tol=None`` to use the
    ``tau`` rule alone.

    Returns
    -------
    pi : ndarray
        Final weights.
    trace : EMTrace
    """
    F = np.asarray(F, dtype=float)
    counts = np.asarray(counts, dtype=float)
    m = F.shape[0]
    if psi_tol is None and tau is None:
        raise InputError("need at least one stopping rule")
    pi = np.full(m, 1.0 / m) if pi0 is None else np.asarray(pi0, dtype=float)
    if np.any(pi <= 0) or abs(pi.sum() - 1) > 1e-10:
        raise InputError("starting weights must be interior points of the simplex")
    trace = EMTrace()

    def log_state(pi):
        trace.loglik.append(mixture_loglik(pi, F, counts, shift))
        trace.psi.append(float(gradient_function(pi, F, counts).max()))

    log_state(pi)
    for _ in range(max_iter):
        if psi_tol is not None and trace.psi[-1] <= psi_tol:
            trace.converged, trace.reason = True, "psi"
            break
        pi = em_step(pi, F, counts)
        log_state(pi)
        if tau is not None and abs(trace.loglik[-1] - trace.loglik[-2]) <= tau:
            trace.converged, trace.reason = True, "tau"
            break
    else:
        if psi_tol is not None and trace.psi[-1] <= psi_tol:
            trace.converged, trace.reason = True, "psi"
        else:
            trace.reason = "max_iter"
    return pi, trace


@dataclass(frozen=True)
class ContinuousFit:
    """Mixture with free support locations.

    ``Sigma_hat`` is the base covariance so that components are
    N(theta_j, delta * Sigma_hat); it is ``None`` for the Poisson family.
    """

    measure: MixingMeasure
    Sigma_hat: np.ndarray | None
    loglik: float
    delta: float = 1.0
    n_iter: int = 0
    converged: bool = False
    degenerate: bool = False
    history: tuple = ()


def _normal_log_matrix(theta, y, cov):
    from .densities import NormalFamily

    return NormalFamily(cov).log_matrix(theta, y)


def _poisson_log_matrix(theta, y):
    from .densities import PoissonFamily

    return PoissonFamily().log_matrix(theta, y)


def continuous_em_solve(data: DistinctDataset, family, init: ContinuousFit,
                        tol: float = 1e-4, max_iter: int = 10_000) -> ContinuousFit:
    """EM over weights, locations and (normal family) the pooled covariance.

    Parameters
    ----------
    data : DistinctDataset
    family : NormalFamily or PoissonFamily
        For the normal family only ``delta`` is used; the covariance is
        estimated and starts at ``init.Sigma_hat``.
    init : ContinuousFit
        Starting weights and locations, usually the active part of a
        fixed-support solution.
    tol : float
        Stop once an iteration improves the loglikelihood by less than this.

    Notes
    -----
    Each iteration computes responsibilities r_ij, then sets pi_j to the mean
    responsibility, theta_j to the responsibility-weighted mean and, for the
    normal family, Sigma to the pooled within-component scatter divided by
    n * delta. Iteration stops early, flagged ``degenerate``, if the
    covariance collapses.
    """
    y = data.y
    n_i = data.counts.astype(float)
    n = n_i.sum()
    normal = getattr(family, "kind", None) == "normal"
    delta = float(family.delta) if normal else 1.0
    pi = init.measure.weights.copy()
    theta = init.measure.theta.copy()
    Sigma = None if not normal else np.array(init.Sigma_hat, dtype=float)
    if normal and Sigma is None:
        raise InputError("normal-family continuous EM needs a starting covariance")

    def log_matrix(theta, Sigma):
        if normal:
            return _normal_log_matrix(theta, y, delta * Sigma)
        return _poisson_log_matrix(theta, y)

    def loglik(L):
        with np.errstate(divide="ignore"):
            return float(n_i @ logsumexp(L + np.log(pi)[:, None], axis=0))

    L = log_matrix(theta, Sigma)
    hist = [loglik(L)]
    converged = degenerate = False
    it = 0
    for it in range(1, max_iter + 1):
        with np.errstate(divide="ignore"):
            joint = L + np.log(pi)[:, None]
        R = np.exp(joint - logsumexp(joint, axis=0))
        nr = R * n_i
        mass = nr.sum(axis=1)
        live = mass > 0
        if not live.all():
            R, nr, mass = R[live], nr[live], mass[live]
            theta = theta[live]
        pi = mass / n
        theta = (nr @ y) / mass[:, None]
        if normal:
            scatter = np.zeros_like(Sigma)
            for j in range(theta.shape[0]):
                diff = y - theta[j]
                scatter += (diff * nr[j][:, None]).T @ diff
            Sigma = scatter / (n * delta)
            Sigma = (Sigma + Sigma.T) / 2
            eig = np.linalg.eigvalsh(Sigma)
            if eig.min() <= 1e-10 * np.trace(Sigma):
                degenerate = True
                break
        L = log_matrix(theta, Sigma)
        hist.append(loglik(L))
        if abs(hist[-1] - hist[-2]) < tol:
            converged = True
            break
    pi = pi / pi.sum()
    return ContinuousFit(MixingMeasure(theta, pi), Sigma, hist[-1], delta, it,
                         converged, degenerate, tuple(hist))


def loglik_residual(logliks, l_star: float) -> np.ndarray:
    """Lambda_t = |l_star - l_t| for each recorded loglikelihood."""
    return np.abs(l_star - np.asarray(logliks, dtype=float))


@dataclass(frozen=True)
class RateEstimate:
    slope: float
    rate: float
    window: int
    r_squared: float


def rate_estimate(lambdas, window: int | None = None) -> RateEstimate:
    """Least-squares slope of log Lambda against iteration over the trailing window.

    Non-positive values are dropped first; ``rate = exp(slope)`` is the
    per-iteration contraction factor.
    """
    lam = np.asarray(lambdas, dtype=float)
    t = np.arange(lam.size)
    pos = lam > 0
    t, lam = t[pos], lam[pos]
    if window is not None:
        t, lam = t[-window:], lam[-window:]
    if lam.size < 10:
        raise InputError("need at least 10 positive values to estimate a rate")
    y = np.log(lam)
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    ss = ((y - y.mean()) ** 2).sum()
    r2 = 1 - (resid**2).sum() / ss if ss > 0 else 1.0
    return RateEstimate(float(slope), float(np.exp(slope)), int(lam.size), float(r2))


def reference_loglik(F, counts, shift=None, psi_tol: float = 1e-6):
    """High-accuracy optimum for residual computations.

    A penalized dual solve at ``psi_tol`` (with ten times the usual
    iteration budget), followed by :func:`refine_weights`. Returns
    ``(loglik, pi, psi)``; the loglikelihood is within ``psi`` of the
    fixed-support maximum.
    """
    from .dual import SolverOptions, fit_weights

    pi, _, _ = fit_weights(F, counts, SolverOptions(psi_tol=psi_tol, max_iter=5000), shift=shift)
    pi_ref, psi_ref = refine_weights(pi, F, counts, tol=psi_tol * 1e-2)
    l_pd = mixture_loglik(pi, F, counts, shift)
    l_ref = mixture_loglik(pi_ref, F, counts, shift)
    if l_ref >= l_pd:
        return l_ref, pi_ref, psi_ref
    return l_pd, pi, float(gradient_function(pi, F, counts).max())
