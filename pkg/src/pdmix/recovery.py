"""Mixing weights from a dual solution, and the optimality certificates.

All functions take the m x d likelihood matrix ``F`` (rows = supports) and
the observation multiplicities ``counts``. Dual states are any object with
``z`` (log residuals) and ``gamma`` attributes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq
from scipy.optimize import nnls
from scipy.special import logsumexp

SIMPLEX_TOL = 1e-10


@dataclass(frozen=True)
class MixingMeasure:
    """Discrete mixing distribution: support vectors ``theta`` with ``weights``."""

    theta: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.shape[0] != theta.shape[0]:
            raise ValueError("need one weight per support vector")
        if np.any(w < 0) or np.any(w > 1 + SIMPLEX_TOL):
            raise ValueError("weights must lie in [0, 1]")
        if abs(w.sum() - 1) > SIMPLEX_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    def active(self, threshold: float = 1e-6) -> "MixingMeasure":
        """Restrict to supports with weight above ``threshold`` and renormalize."""
        keep = self.weights > threshold
        if not keep.any():
            keep = self.weights == self.weights.max()
        w = self.weights[keep]
        return MixingMeasure(self.theta[keep], w / w.sum())

    def n_active(self, threshold: float = 1e-6) -> int:
        return int((self.weights > threshold).sum())


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    if not np.any(np.isfinite(logw)):
        raise ValueError("all constraint values are zero")
    w = np.exp(logw - logsumexp(logw))
    return w / w.sum()


def log_constraints(z, F) -> np.ndarray:
    """log p_j with p_j = sum_i exp(z_i) F[j, i]; rows with p_j = 0 give -inf."""
    z = np.asarray(z, dtype=float)
    shift = z.max()
    p = F @ np.exp(z - shift)
    with np.errstate(divide="ignore"):
        return np.log(p) + shift


def candidate_pi(state, F) -> np.ndarray:
    """Normalized p_j^(gamma - 1): the candidate estimator."""
    lp = log_constraints(state.z, F)
    return _normalize_log((state.gamma - 1) * lp if state.gamma != 1 else np.where(
        np.isfinite(lp), 0.0, -np.inf))


def pd_estimator(state, F, return_total: bool = False):
    """p_j^gamma renormalized onto the simplex.

    With ``return_total`` the pre-normalization sum of p_j^gamma is returned
    as well; it is 1 at an exact fixed-gamma optimum.
    """
    lp = log_constraints(state.z, F)
    lw = state.gamma * lp
    pi = _normalize_log(lw)
    if return_total:
        return pi, float(np.exp(logsumexp(lw)))
    return pi


def em_step(pi, F, counts) -> np.ndarray:
    """One EM update of the weights over the fixed supports."""
    pi = np.asarray(pi, dtype=float)
    counts = np.asarray(counts, dtype=float)
    g = pi @ F
    if np.any((g <= 0) & (counts > 0)):
        raise ValueError("mixture density is zero at an observed point")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(counts > 0, counts / g, 0.0)
    new = pi * (F @ ratio) / counts.sum()
    return new / new.sum()


def gradient_function(pi, F, counts) -> np.ndarray:
    """D_j = sum_i n_i (F[j, i] / g_i - 1), on the count scale."""
    counts = np.asarray(counts, dtype=float)
    g = np.asarray(pi, dtype=float) @ F
    if np.any((g <= 0) & (counts > 0)):
        raise ValueError("mixture density is zero at an observed point")
    obs = counts > 0
    F = np.asarray(F, dtype=float)[:, obs]
    return (F / g[obs] - 1) @ counts[obs]


def psi(pi, F, counts) -> float:
    """Largest gradient-function value; <= 0 exactly at the fixed-support MLE."""
    return float(gradient_function(pi, F, counts).max())


def gradient_at_candidate(state, F, total: float) -> np.ndarray:
    """Gradient function at the candidate estimator written through the dual.

    Equal to total * (p_j * sum_k p_k^(gamma-1) - 1), valid at a fixed-gamma
    stationary point.
    """
    lp = log_constraints(state.z, F)
    inv_norm = np.exp(logsumexp((state.gamma - 1) * lp[np.isfinite(lp)]))
    return total * (np.exp(lp) * inv_norm - 1)


def gradient_bound(state, F, total: float = 1.0) -> float:
    """Upper bound on the candidate's gradient function, ``total * (sum_k p_k^(gamma-1) - 1)``.

    Requires max_j p_j <= 1 (feasibility). The bound does not depend on j
    and vanishes as gamma grows.
    """
    lp = log_constraints(state.z, F)
    lp = lp[np.isfinite(lp)]
    return float(total * (np.exp(logsumexp((state.gamma - 1) * lp)) - 1))


def mixture_loglik(pi, F, counts, shift=None) -> float:
    """sum_i n_i log(sum_j pi_j F[j, i]), or -inf if an observed point has zero fit.

    ``shift`` adds the per-column log scale removed from a scaled matrix.
    """
    counts = np.asarray(counts, dtype=float)
    g = np.asarray(pi, dtype=float) @ F
    if np.any((g <= 0) & (counts > 0)):
        return -np.inf
    with np.errstate(divide="ignore"):
        lg = np.where(counts > 0, np.log(g), 0.0)
    val = float(counts @ lg)
    if shift is not None:
        val += float(counts @ np.asarray(shift))
    return val


def residual_check(state, pi, F, counts) -> float:
    """Primal-dual consistency defect max_i |w_i g_i - n_i/n|."""
    counts = np.asarray(counts, dtype=float)
    g = np.asarray(pi, dtype=float) @ F
    return float(np.abs(np.exp(state.z) * g - counts / counts.sum()).max())


def linear_recovery(state, F, counts, tight_tol: float = 1e-6) -> np.ndarray:
    """Weights from the fitted values by non-negative least squares on tight constraints.

    Only meant as a cross-check on small problems; ``pd_estimator`` is the
    estimator proper.
    """
    counts = np.asarray(counts, dtype=float)
    lp = log_constraints(state.z, F)
    tight = np.flatnonzero(np.abs(np.expm1(lp)) <= tight_tol)
    if tight.size == 0:
        tight = np.array([int(np.argmax(lp))])
    fitted = counts / counts.sum() / np.exp(state.z)
    sol, _ = nnls(F[tight].T, fitted)
    pi = np.zeros(F.shape[0])
    pi[tight] = sol
    return pi / pi.sum()


@dataclass(frozen=True)
class FitDiagnostics:
    fitted: np.ndarray
    loglik: float
    psi: float
    gradient_bound: float
    residual: float


def diagnose(state, pi, F, counts, shift=None) -> FitDiagnostics:
    counts = np.asarray(counts, dtype=float)
    return FitDiagnostics(
        fitted=np.asarray(pi) @ F,
        loglik=mixture_loglik(pi, F, counts, shift),
        psi=psi(pi, F, counts),
        gradient_bound=gradient_bound(state, F, counts.sum()),
        residual=residual_check(state, pi, F, counts),
    )


def refine_weights(pi, F, counts, tol: float = 1e-9, max_iter: int = 200):
    """Polish near-optimal weights by constrained Newton steps on the primal.

    Works on the current support (weights above 1e-12 of the largest), adds
    the support with the largest positive gradient value when it exceeds
    ``tol``, and drops supports whose weight reaches zero. Used to compute
    high-accuracy reference loglikelihoods. Returns ``(pi, psi)``.
    """
    F = np.asarray(F, dtype=float)
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    pi = np.asarray(pi, dtype=float).copy()
    active = pi > 1e-12 * pi.max()
    pi[~active] = 0.0
    pi /= pi.sum()
    D = gradient_function(pi, F, counts)
    for _ in range(max_iter):
        if D.max() <= tol and np.all(np.abs(D[active]) <= tol):
            break
        j = int(np.argmax(np.where(active, -np.inf, D)))
        if not active[j] and D[j] > tol:
            active[j] = True
        idx = np.flatnonzero(active)
        g = pi @ F
        Fa = F[idx]
        grad = Fa @ (counts / g)
        negH = (Fa * (counts / g**2)) @ Fa.T
        k = idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = negH
        kkt[:k, k] = kkt[k, :k] = 1.0
        sol = lstsq(kkt, np.append(grad - n, 0.0))[0]
        d = sol[:k]
        neg = d < 0
        s_max = np.min(-pi[idx][neg] / d[neg]) if neg.any() else np.inf
        s = min(1.0, s_max)
        base = mixture_loglik(pi, F, counts)
        for _ in range(60):
            trial = pi.copy()
            trial[idx] = np.maximum(pi[idx] + s * d, 0.0)
            if mixture_loglik(trial, F, counts) >= base:
                break
            s *= 0.5
        else:
            break
        if s == s_max:
            trial[idx[neg][np.argmin(-pi[idx][neg] / d[neg])]] = 0.0
        pi = trial / trial.sum()
        active = pi > 0
        D = gradient_function(pi, F, counts)
    return pi, float(D.max())
