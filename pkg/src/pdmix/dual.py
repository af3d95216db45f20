"""Penalized dual solver for the fixed-support mixing-weight problem.

The dual variables are log residuals ``z`` (one per distinct observation) and
the penalty power ``gamma``. With ``w = exp(z)`` and constraint values
``p = F w`` the objective is

    K(z, gamma) = sum_i c_i z_i - (1/gamma) sum_j p_j**gamma,   c = counts / n,

which is jointly concave. ``solve`` maximizes it with monotone damped Newton
steps, first jointly in (z, gamma) and then in z at a frozen gamma, and hands
back the state from which the weights are read off by
:func:`pdmix.recovery.pd_estimator`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from .data import InputError
from .recovery import gradient_function, log_constraints, mixture_loglik, pd_estimator


@dataclass(frozen=True)
class DualState:
    """Log residuals ``z`` and penalty power ``gamma >= 1``."""

    z: np.ndarray
    gamma: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or not np.all(np.isfinite(z)):
            raise ValueError("z must be a finite vector")
        if not self.gamma >= 1 or not np.isfinite(self.gamma):
            raise ValueError(f"gamma must be a finite number >= 1, got {self.gamma!r}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.z)


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and safeguards for :func:`solve`.

    Parameters
    ----------
    joint_tol : float
        The joint phase ends once one step changes K by less than this.
    psi_tol : float
        Required bound on the gradient function (count scale) at exit.
    max_iter : int
        Iteration cap for each phase.
    step_shrink, max_halvings : float, int
        Backtracking factor and number of attempts in the monotone line search.
    max_log_step : float
        Largest first trial change of any coordinate of z (or of log gamma).
    ridge_floor, ridge_ceiling : float
        First and largest ridge added to -H when its Cholesky fails.
    gamma_max : float
        Hard cap on the penalty power. Recovered weights carry a relative
        error of roughly gamma * machine epsilon, so much larger values
        only add noise.
    stationary_tol : float
        Fixed-gamma stationarity target, measured as max_i |dK/dz_i| / c_i.
    prune : bool
        Drop rows whose p_j**gamma falls under ``prune_threshold`` while
        solving (the inactive-constraint variant).
    max_rounds : int
        How many times the joint phase may be re-entered when the fixed-gamma
        phase settles with the gradient bound still above ``psi_tol``.
    max_backoffs : int
        How many times the gamma cap may be cut by 100 when the solve
        stalls at the cap far from ``psi_tol``.
    """

    joint_tol: float = 1e-6
    psi_tol: float = 0.005
    max_iter: int = 500
    step_shrink: float = 0.5
    max_halvings: int = 60
    max_log_step: float = 10.0
    ridge_floor: float = 1e-10
    ridge_ceiling: float = 1e-2
    gamma_max: float = 1e8
    stationary_tol: float = 1e-9
    prune: bool = False
    prune_threshold: float = 1e-12
    max_rounds: int = 4
    max_backoffs: int = 3

    def __post_init__(self):
        for name in ("joint_tol", "psi_tol", "max_log_step", "ridge_floor", "ridge_ceiling",
                     "stationary_tol", "prune_threshold"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if not 0 < self.step_shrink < 1:
            raise InputError("step_shrink must lie in (0, 1)")
        if self.max_iter < 1 or self.max_halvings < 1:
            raise InputError("iteration limits must be positive")
        if not self.gamma_max > 1:
            raise InputError("gamma_max must exceed 1")


@dataclass(frozen=True)
class StepInfo:
    step: float
    ridge: float
    delta_k: float
    stalled: bool


@dataclass(frozen=True)
class IterationRecord:
    phase: str
    iteration: int
    k: float
    grad_norm: float
    gamma: float
    n_rows: int
    n_active: int
    loglik: float
    psi: float
    step: float
    ridge: float


@dataclass
class SolveTrace:
    """Per-iteration history of a solve. ``loglik`` is on the scale of the ``F`` given.

    Phases are ``joint``, ``fixed`` and ``backoff``; a backoff record marks
    a cut of the gamma cap, where K is re-evaluated at the lower gamma and
    so may drop.
    """

    records: list = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    rows: np.ndarray | None = None
    message: str = ""
    backoffs: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def iterations(self, phase: str | None = None) -> int:
        recs = [r for r in self.records if r.iteration > 0]
        if phase is not None:
            recs = [r for r in recs if r.phase == phase]
        return len(recs)


def _check(F, counts):
    F = np.asarray(F, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if F.ndim != 2 or counts.shape != (F.shape[1],):
        raise InputError("F must be m x d and counts a d-vector")
    if np.any(counts <= 0):
        raise InputError("counts must be positive")
    if np.any(F < 0) or not np.all(np.isfinite(F)):
        raise InputError("F must be finite and non-negative")
    return F, counts


def constraint_values(state: DualState, F) -> np.ndarray:
    """p_j = sum_i w_i F[j, i]."""
    p = np.asarray(F) @ state.w
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("constraint values overflowed")
    return p


def _k(z, gamma, F, c) -> float:
    lp = log_constraints(z, F)
    with np.errstate(over="ignore"):
        pen = np.exp(gamma * lp[np.isfinite(lp)]).sum()
    return float(c @ z - pen / gamma)


def k_value(state: DualState, F, counts) -> float:
    """Penalized dual objective K(z, gamma)."""
    counts = np.asarray(counts, dtype=float)
    val = _k(state.z, state.gamma, F, counts / counts.sum())
    if not np.isfinite(val):
        raise FloatingPointError("K is not finite at this state")
    return val


def _derivatives(z, gamma, F, c, joint=True):
    """Gradient and Hessian in (z, gamma); rows with p_j = 0 contribute nothing."""
    w = np.exp(z)
    lp = log_constraints(z, F)
    live = np.isfinite(lp)
    Fl, lp = F[live], lp[live]
    a1 = np.exp((gamma - 1) * lp)
    a2 = np.exp((gamma - 2) * lp)
    u = Fl.T @ a1
    gz = c - w * u
    FW = Fl * w
    Hzz = -np.diag(w * u) - (gamma - 1) * (FW.T * a2) @ FW
    if not joint:
        return gz, Hzz
    ag = np.exp(gamma * lp)
    gg = (ag * (1 / gamma - lp)).sum() / gamma
    hzg = -w * (Fl.T @ (a1 * lp))
    hgg = (-gg + (ag * (1 / gamma - lp) * lp).sum() - ag.sum() / gamma**2) / gamma
    d = z.shape[0]
    g = np.append(gz, gg)
    H = np.empty((d + 1, d + 1))
    H[:d, :d] = Hzz
    H[:d, d] = H[d, :d] = hzg
    H[d, d] = hgg
    return g, H


def k_gradient_hessian(state: DualState, F, counts):
    """Gradient ((d+1)-vector) and Hessian of K with respect to (z, gamma)."""
    counts = np.asarray(counts, dtype=float)
    return _derivatives(state.z, state.gamma, np.asarray(F, dtype=float), counts / counts.sum())


def _log_gamma_coords(g, H, gamma):
    # reparametrize the last coordinate as eta = log(gamma)
    g2 = g.copy()
    g2[-1] *= gamma
    H2 = H.copy()
    H2[:-1, -1] *= gamma
    H2[-1, :-1] *= gamma
    H2[-1, -1] = gamma**2 * H[-1, -1] + gamma * g[-1]
    return g2, H2


def initial_dual_state(F, counts) -> DualState:
    """Exact maximizer of K at gamma = 1: w_i = c_i / sum_j F[j, i]."""
    F, counts = _check(F, counts)
    colsum = F.sum(axis=0)
    bad = np.flatnonzero(colsum <= 0)
    if bad.size:
        raise InputError(f"column {int(bad[0])} of F sums to zero")
    return DualState(np.log(counts / counts.sum() / colsum), 1.0)


def _ascent_direction(g, H, options):
    A = -H
    eye = np.eye(A.shape[0])
    rho = 0.0
    while rho <= options.ridge_ceiling:
        try:
            L = cholesky(A + rho * eye, lower=True)
            d = cho_solve((L, True), g)
            if np.all(np.isfinite(d)):
                return d, rho
        except (LinAlgError, ValueError):
            pass
        rho = options.ridge_floor if rho == 0 else rho * 10
    # steepest ascent as a last resort
    return g / max(1.0, np.abs(g).max()), np.inf


def _step(z, gamma, F, c, options, mode, k_old):
    if mode == "joint":
        g, H = _derivatives(z, gamma, F, c, joint=True)
        g, H = _log_gamma_coords(g, H, gamma)
    elif mode == "fixed_gamma":
        g, H = _derivatives(z, gamma, F, c, joint=False)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    d, rho = _ascent_direction(g, H, options)
    out = _line_search(z, gamma, F, c, options, mode, k_old, g, d, rho)
    if out is None and np.isfinite(rho):
        # a near-flat Hessian gives useless Newton steps; try plain ascent
        out = _line_search(z, gamma, F, c, options, mode, k_old, g, g, np.inf)
    if out is None:
        return z, gamma, k_old, StepInfo(0.0, rho, 0.0, True)
    return out


def _line_search(z, gamma, F, c, options, mode, k_old, g, d, rho):
    noise = 8 * np.finfo(float).eps * abs(k_old)
    size = np.abs(d).max()
    s = min(1.0, options.max_log_step / size) if size > 0 else 1.0
    for _ in range(options.max_halvings):
        z_new = z + s * d[: z.shape[0]]
        with np.errstate(over="ignore", invalid="ignore"):
            g_new = min(options.gamma_max, max(1.0, gamma * np.exp(s * d[-1]))) if mode == "joint" else gamma
            k_new = _k(z_new, g_new, F, c) if np.all(np.isfinite(z_new)) else -np.inf
            # stay where K is provably concave: gamma * log p_j <= 1 for all j
            if np.isfinite(k_new) and g_new * log_constraints(z_new, F).max() > 1:
                k_new = -np.inf
        if np.isfinite(k_new) and k_new >= k_old:
            return z_new, g_new, k_new, StepInfo(s, rho, k_new - k_old, False)
        if mode == "fixed_gamma" and np.isfinite(k_new) and k_old - k_new <= noise:
            # K no longer resolves the change; accept if the gradient shrinks
            if np.linalg.norm(_derivatives(z_new, gamma, F, c, joint=False)[0]) < 0.5 * np.linalg.norm(g):
                return z_new, g_new, k_new, StepInfo(s, rho, k_new - k_old, False)
        s *= options.step_shrink
    return None


def newton_step_monotone(state: DualState, F, counts, options: SolverOptions | None = None,
                         mode: str = "joint"):
    """One damped Newton step that never decreases K.

    In ``joint`` mode the step is taken in (z, log gamma), which keeps gamma
    positive and scales well as gamma grows; gamma is then clamped to
    [1, gamma_max]. Returns the new state and a :class:`StepInfo`; when the
    line search is exhausted the old state comes back with ``stalled=True``.
    """
    options = options or SolverOptions()
    F, counts = _check(F, counts)
    c = counts / counts.sum()
    z, gamma, _, info = _step(state.z, state.gamma, F, c, options, mode,
                              _k(state.z, state.gamma, F, c))
    return DualState(z, gamma), info


def prune_inactive(state: DualState, F, counts, options: SolverOptions | None = None,
                   rows=None):
    """Choose the rows (supports) to keep in the next iteration.

    Rows with p_j**gamma below ``prune_threshold`` are dropped; any dropped
    row whose gradient-function value at the current estimate exceeds
    ``psi_tol`` is brought back. At least one row is always kept.

    Returns the reduced matrix and the original indices of its rows.
    """
    options = options or SolverOptions()
    F = np.asarray(F, dtype=float)
    m = F.shape[0]
    rows = np.arange(m) if rows is None else np.asarray(rows)
    lp = log_constraints(state.z, F)
    small = state.gamma * lp < np.log(options.prune_threshold)
    keep = np.zeros(m, dtype=bool)
    keep[rows] = True
    keep &= ~small
    if not keep.any():
        keep[rows[np.argmax(lp[rows])]] = True
    pi = _embed(pd_estimator(state, F[keep]), keep)
    try:
        D = gradient_function(pi, F, counts)
        keep |= D > options.psi_tol
    except ValueError:
        # the kept rows cannot explain some observation; restore everything
        keep[rows] = True
    idx = np.flatnonzero(keep)
    return F[idx], idx


def _embed(values, keep):
    out = np.zeros(keep.shape[0])
    out[keep] = values
    return out


def solve(F, counts, options: SolverOptions | None = None, state: DualState | None = None,
          shift=None, callback=None):
    """Maximize the penalized dual and return ``(state, trace)``.

    The joint phase runs damped Newton in (z, log gamma) from the gamma = 1
    closed form until K changes by less than ``joint_tol``. Gamma is then
    frozen and z is refined until the estimate's gradient function is at
    most ``psi_tol`` and z is stationary (or no further ascent is possible
    in floating point). If z settles while the gradient bound is still too
    large, the joint phase is resumed with a tighter tolerance.

    Parameters
    ----------
    F : (m, d) array
        Likelihood matrix, rows = supports. A column-scaled matrix is fine.
    counts : (d,) array
        Multiplicities of the distinct observations.
    options : SolverOptions, optional
    state : DualState, optional
        Warm start; defaults to :func:`initial_dual_state`. It is shifted
        down if needed so that gamma * log p_j <= 1 for every row.
    shift : (d,) array, optional
        Per-column log scale removed from ``F``; only used so the traced
        loglikelihood is on the original scale.
    callback : callable, optional
        Called as ``callback(record, state, rows)`` after every trace record.

    Returns
    -------
    state : DualState
    trace : SolveTrace
        ``trace.rows`` lists the rows in use at exit (all rows unless pruning).
    """
    options = options or SolverOptions()
    F, counts = _check(F, counts)
    m = F.shape[0]
    c = counts / counts.sum()
    if state is None:
        state = initial_dual_state(F, counts)
    elif state.z.shape != (F.shape[1],):
        raise InputError("warm-start state does not match the data")
    else:
        # pull the start into the region where K is concave
        excess = log_constraints(state.z, F).max() - 1 / state.gamma
        if excess > 0:
            state = DualState(state.z - excess, state.gamma)
    z, gamma = state.z, state.gamma
    rows = np.arange(m)
    Fr = F
    trace = SolveTrace()

    def estimate():
        keep = np.zeros(m, dtype=bool)
        keep[rows] = True
        return _embed(pd_estimator(DualState(z, gamma), Fr), keep)

    def record(phase, it, k, info, grad):
        pi = estimate()
        try:
            psi_val = float(gradient_function(pi, F, counts).max())
        except ValueError:
            psi_val = np.inf
        trace.records.append(IterationRecord(
            phase=phase, iteration=it, k=k, grad_norm=float(np.linalg.norm(grad)),
            gamma=gamma, n_rows=int(rows.size), n_active=int((pi > 1e-6).sum()),
            loglik=mixture_loglik(pi, F, counts, shift), psi=psi_val,
            step=info.step if info else np.nan, ridge=info.ridge if info else np.nan,
        ))
        if callback is not None:
            callback(trace.records[-1], DualState(z, gamma), rows)
        return psi_val

    def maybe_prune():
        nonlocal Fr, rows
        if options.prune:
            Fr, rows = prune_inactive(DualState(z, gamma), F, counts, options, rows)

    maybe_prune()
    k = _k(z, gamma, Fr, c)
    record("joint", 0, k, None, _derivatives(z, gamma, Fr, c)[0])
    joint_tol = options.joint_tol
    it_joint = it_fixed = 0
    converged = stalled = False

    rounds = backoffs = 0
    while True:
        # joint phase
        for _ in range(options.max_iter):
            z, gamma, k_new, info = _step(z, gamma, Fr, c, options, "joint", k)
            it_joint += 1
            dk = k_new - k
            maybe_prune()
            k = _k(z, gamma, Fr, c)
            record("joint", it_joint, k, info, _derivatives(z, gamma, Fr, c)[0])
            if info.stalled or abs(dk) < joint_tol or gamma >= options.gamma_max:
                break

        # fixed-gamma phase
        settled = False
        idle = 0
        for _ in range(options.max_iter):
            gz, _ = _derivatives(z, gamma, Fr, c, joint=False)
            psi_val = trace.records[-1].psi
            stationary = np.abs(gz / c).max() <= options.stationary_tol
            if psi_val <= options.psi_tol and (stationary or settled):
                converged = True
                break
            if stationary or settled:
                break
            z, gamma, k_new, info = _step(z, gamma, Fr, c, options, "fixed_gamma", k)
            it_fixed += 1
            # steps that K cannot tell apart from zero count as idle
            idle = idle + 1 if k_new - k <= 8 * np.finfo(float).eps * abs(k) else 0
            settled = info.stalled or idle >= 3
            maybe_prune()
            k = _k(z, gamma, Fr, c)
            record("fixed", it_fixed, k, info, gz)
        if converged:
            stalled = settled
            break
        if gamma >= options.gamma_max:
            if (backoffs < options.max_backoffs and options.gamma_max > 100
                    and trace.records[-1].psi > 100 * options.psi_tol):
                # z could not follow gamma to the cap; retry under a lower cap
                backoffs += 1
                options = replace(options, gamma_max=options.gamma_max / 100)
                gamma = options.gamma_max
                k = _k(z, gamma, Fr, c)
                record("backoff", 0, k, None, _derivatives(z, gamma, Fr, c, joint=False)[0])
                continue
            stalled = settled
            break
        if rounds >= options.max_rounds:
            break
        rounds += 1
        joint_tol *= 1e-2

    converged = converged or trace.records[-1].psi <= options.psi_tol
    if not converged:
        trace.message = "gradient function still above psi_tol"
    trace.converged = converged
    trace.stalled = stalled
    trace.backoffs = backoffs
    trace.rows = rows
    return DualState(z, gamma), trace


def fit_weights(F, counts, options: SolverOptions | None = None, **kwargs):
    """Solve and return ``(weights, state, trace)`` with weights over all rows of ``F``."""
    state, trace = solve(F, counts, options, **kwargs)
    keep = np.zeros(np.shape(F)[0], dtype=bool)
    keep[trace.rows] = True
    pi = _embed(pd_estimator(state, np.asarray(F)[keep]), keep)
    return pi, state, trace
