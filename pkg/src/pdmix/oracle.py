"""Brute-force references for testing: direct primal maximization and finite differences.

Nothing here calls the solvers it is meant to check; the loglikelihood and
the weight updates are re-implemented with plain loops over the simplex.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar


@dataclass(frozen=True)
class OracleSolution:
    weights: np.ndarray
    loglik: float
    method: str
    coarse: bool = False


def _loglik(pi, F, counts):
    g = pi @ F
    if np.any((g <= 0) & (counts > 0)):
        return -np.inf
    return float(sum(n * np.log(gi) for n, gi in zip(counts, g) if n > 0))


def _multiplicative(pi, F, counts, iters):
    n = counts.sum()
    for _ in range(iters):
        g = pi @ F
        pi = pi * (F @ (counts / g)) / n
        pi /= pi.sum()
    return pi


def _lattice(m, k, batch=20_000):
    """Batches of simplex points with denominator k, in lexicographic order."""
    cuts = itertools.combinations(range(k + m - 1), m - 1)
    while True:
        c = np.array(list(itertools.islice(cuts, batch)), dtype=float).reshape(-1, m - 1)
        if c.shape[0] == 0:
            return
        ends = np.column_stack([np.full(len(c), -1.0), c, np.full(len(c), k + m - 1.0)])
        yield (np.diff(ends, axis=1) - 1) / k


def _exchange(pi, F, counts, sweeps=200, tol=1e-14):
    """Pairwise mass exchange: exact 1-D maximization over each pair (j, k)."""
    m = pi.size
    for _ in range(sweeps):
        gain = 0.0
        for j, k in itertools.permutations(range(m), 2):
            if pi[k] <= 0:
                continue
            base = _loglik(pi, F, counts)

            def neg(t, j=j, k=k):
                q = pi.copy()
                q[j] += t
                q[k] -= t
                return -_loglik(q, F, counts)

            res = minimize_scalar(neg, bounds=(0.0, pi[k]), method="bounded",
                                  options={"xatol": 1e-15})
            cand = [(res.fun, res.x), (neg(pi[k]), pi[k])]
            val, t = min(cand)
            if -val > base:
                pi = pi.copy()
                pi[j] += t
                pi[k] -= t
                pi[k] = max(pi[k], 0.0)
                gain += -val - base
        if gain < tol:
            break
    return pi / pi.sum()


def brute_force_primal(F, counts, resolution: int = 200, mode: str = "grid",
                       polish_iter: int = 10_000) -> OracleSolution:
    """Maximize sum_i n_i log(sum_j pi_j F[j, i]) over the simplex by brute force.

    ``grid`` mode (m <= 4) scans the simplex lattice with ``resolution``
    divisions, keeps the first best point, then polishes it with
    multiplicative updates and exact pairwise exchanges. The solution is
    flagged ``coarse`` if polishing moved the loglikelihood by more than
    1e-3. ``projected-ascent`` mode runs ``polish_iter`` multiplicative
    updates from the uniform point, for any m.
    """
    F = np.asarray(F, dtype=float)
    counts = np.asarray(counts, dtype=float)
    m = F.shape[0]
    if m == 1:
        return OracleSolution(np.ones(1), _loglik(np.ones(1), F, counts), mode)
    if mode == "projected-ascent":
        pi = _multiplicative(np.full(m, 1.0 / m), F, counts, polish_iter)
        return OracleSolution(pi, _loglik(pi, F, counts), mode)
    if mode != "grid":
        raise ValueError(f"unknown oracle mode {mode!r}")
    if m > 4:
        raise ValueError("grid mode is limited to m <= 4")
    best, best_val = None, -np.inf
    for batch in _lattice(m, resolution):
        with np.errstate(divide="ignore"):
            vals = np.log(batch @ F) @ counts
        k = int(np.argmax(vals))  # first maximum in lattice order
        if vals[k] > best_val:
            best, best_val = batch[k], float(vals[k])
    # move slightly inside so multiplicative updates can revive zero weights
    start = 0.999 * best + 0.001 / m
    pi = _multiplicative(start, F, counts, polish_iter)
    pi = _exchange(pi, F, counts)
    if _loglik(best, F, counts) > _loglik(pi, F, counts):
        pi = _exchange(best.astype(float), F, counts)
    val = _loglik(pi, F, counts)
    return OracleSolution(pi, val, mode, coarse=abs(val - best_val) > 1e-3)


def finite_diff(fn, x, step=1e-5):
    """Central-difference gradient and (symmetrized) Hessian of a scalar function.

    ``step`` may be a scalar or one step per coordinate.
    """
    x = np.asarray(x, dtype=float)
    k = x.size
    h = np.broadcast_to(np.asarray(step, dtype=float), (k,))
    f0 = fn(x)
    if not np.isfinite(f0):
        raise FloatingPointError("function is not finite at x")

    def f(v):
        val = fn(v)
        if not np.isfinite(val):
            raise FloatingPointError("non-finite evaluation in the stencil")
        return val

    E = np.diag(h)
    grad = np.array([(f(x + E[i]) - f(x - E[i])) / (2 * h[i]) for i in range(k)])
    H = np.empty((k, k))
    for i in range(k):
        H[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / h[i] ** 2
        for j in range(i + 1, k):
            H[i, j] = (f(x + E[i] + E[j]) - f(x + E[i] - E[j])
                       - f(x - E[i] + E[j]) + f(x - E[i] - E[j])) / (4 * h[i] * h[j])
            H[j, i] = H[i, j]
    return grad, (H + H.T) / 2


def finite_diff_jacobian(fn, x, step=1e-6):
    """Central-difference Jacobian of a vector function (rows = outputs)."""
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(step, dtype=float), (x.size,))
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h[i]))
    return np.stack(cols, axis=1)
