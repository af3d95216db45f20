"""End-to-end pipelines: fixed-support fit, the two-step semiparametric fit, sieve sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import DistinctDataset, InputError, SupportSet
from .densities import likelihood_matrix
from .dual import DualState, SolverOptions, fit_weights
from .em import ContinuousFit, continuous_em_solve, discrete_em_solve
from .recovery import MixingMeasure, gradient_bound, log_constraints

ACTIVE_THRESHOLD = 1e-6
WARM_GAMMA = 10.0


@dataclass
class FixedSupportFit:
    """Result of fitting weights over a fixed support set.

    ``measure`` carries every support (inactive ones with weight 0 or tiny);
    use ``measure.active(threshold)`` for the reported mixture.
    """

    measure: MixingMeasure
    loglik: float
    psi: float
    converged: bool
    solver: str
    state: DualState | None = None
    trace: object = None
    n_iter: int = 0
    iterations: dict = field(default_factory=dict)
    gradient_bound: float = np.nan
    shift: np.ndarray | None = None

    def n_active(self, threshold: float = ACTIVE_THRESHOLD) -> int:
        return self.measure.n_active(threshold)


def fit_fixed_support(family, supports: SupportSet, data: DistinctDataset,
                      options: SolverOptions | None = None, solver: str = "pd",
                      state: DualState | None = None, tau: float | None = None,
                      max_iter: int | None = None, state_shift=None,
                      tau_only: bool = False) -> FixedSupportFit:
    """Fit mixing weights over ``supports`` with the penalized dual or discrete EM.

    ``solver`` is ``"pd"``, ``"pd-ic"`` (with inactive-row pruning) or
    ``"dem"``. ``state`` warm-starts the dual solvers; if it came from a fit
    with different column scaling pass that fit's ``shift`` as ``state_shift``.
    With ``tau_only`` discrete EM ignores ``options.psi_tol`` and stops on
    the ``tau`` rule alone.
    """
    options = options or SolverOptions()
    L = likelihood_matrix(family, supports, data)
    F, shift = L.scaled, L.column_shift
    counts = data.counts
    if state is not None:
        state = _feasible_warm_start(state, F, shift, state_shift)
    if solver in ("pd", "pd-ic"):
        if solver == "pd-ic":
            options = replace(options, prune=True)
        if max_iter is not None:
            options = replace(options, max_iter=max_iter)
        pi, st, trace = fit_weights(F, counts, options, state=state, shift=shift)
        last = trace.records[-1]
        return FixedSupportFit(
            MixingMeasure(supports.theta, pi), last.loglik, last.psi, trace.converged,
            solver, st, trace, trace.iterations(),
            {"joint": trace.iterations("joint"), "fixed": trace.iterations("fixed")},
            gradient_bound(st, F, data.total), shift,
        )
    if solver == "dem":
        psi_tol = None if tau_only else options.psi_tol
        pi, trace = discrete_em_solve(F, counts, psi_tol=psi_tol, tau=tau,
                                      max_iter=max_iter or 100_000, shift=shift)
        return FixedSupportFit(
            MixingMeasure(supports.theta, pi), trace.loglik[-1], trace.psi[-1],
            trace.converged, solver, None, trace, trace.n_iter, {"em": trace.n_iter},
        )
    raise InputError(f"unknown solver {solver!r}")


def _feasible_warm_start(state, F, shift, old_shift):
    # z lives on the scaled-column axis; move it onto the new scaling and
    # shrink w until every constraint holds, so K is finite at the start.
    # Gamma restarts low: at the previous (large) gamma the new problem is
    # too stiff for z to move.
    z = state.z if old_shift is None else state.z - old_shift + shift
    lp = log_constraints(z, F)
    return DualState(z - lp[np.isfinite(lp)].max(), min(state.gamma, WARM_GAMMA))


def seed_from_fit(fit: FixedSupportFit, family, threshold: float = ACTIVE_THRESHOLD) -> ContinuousFit:
    """Starting point for continuous EM: active supports and the family's covariance."""
    act = fit.measure.active(threshold)
    Sigma = np.array(family.Sigma) if getattr(family, "kind", None) == "normal" else None
    delta = family.delta if Sigma is not None else 1.0
    return ContinuousFit(act, Sigma, fit.loglik, delta)


def algorithm1(data: DistinctDataset, family, supports: SupportSet,
               options: SolverOptions | None = None, solver: str = "pd",
               cem_tol: float = 1e-4, threshold: float = ACTIVE_THRESHOLD):
    """Two-step semiparametric fit.

    Step 1 fits weights over the fixed ``supports`` (with the family's
    covariance held at its given value). Step 2 runs continuous EM from the
    active supports of step 1, updating weights, locations and the common
    covariance together.

    Returns
    -------
    fixed : FixedSupportFit
    free : ContinuousFit
    """
    fixed = fit_fixed_support(family, supports, data, options, solver)
    free = continuous_em_solve(data, family, seed_from_fit(fixed, family, threshold), tol=cem_tol)
    return fixed, free


@dataclass(frozen=True)
class TreeLevel:
    sieve: float
    theta: np.ndarray
    weights: np.ndarray
    loglik: float
    psi: float
    converged: bool
    degenerate: bool = False
    warm: bool = False
    error: str = ""

    @property
    def m_hat(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class MixtureTree:
    """Active supports per sieve level, sorted by sieve value (descending)."""

    kind: str
    levels: list = field(default_factory=list)
    threshold: float = ACTIVE_THRESHOLD

    def rows(self):
        """Flat (sieve, support coordinates..., weight) tuples for plotting."""
        for lev in self.levels:
            for th, w in zip(lev.theta, lev.weights):
                yield (lev.sieve, *th.tolist(), float(w))


def _family_at(template, value: float, kind: str):
    if kind == "delta":
        return template.with_delta(value)
    if kind == "sigma":
        if template.Sigma.shape != (1, 1):
            raise InputError("a sigma sieve needs univariate data")
        return type(template)(np.array([[value**2]]), 1.0)
    raise InputError(f"unknown sieve {kind!r}")


def sieve_sweep(data: DistinctDataset, family_template, supports: SupportSet, sieve_values,
                options: SolverOptions | None = None, sieve: str = "delta",
                warm_start: bool = True, threshold: float = ACTIVE_THRESHOLD,
                solver: str = "pd") -> MixtureTree:
    """Fit the fixed-support model at each sieve value.

    With ``sieve="delta"`` the covariance is delta * Sigma; with
    ``sieve="sigma"`` (univariate) it is sigma**2. Levels are processed from
    the largest value down. Each level may start from the previous level's
    dual solution; if that run does not converge it is repeated from the
    default start. Once the active support count reaches the number of
    distinct observations the level is marked degenerate and smaller values
    are skipped.
    """
    values = sorted({float(v) for v in sieve_values}, reverse=True)
    if not values or min(values) <= 0:
        raise InputError("sieve values must be positive")
    tree = MixtureTree(sieve, threshold=threshold)
    prev = prev_shift = None
    for v in values:
        try:
            fam = _family_at(family_template, v, sieve)
            fit, warm = None, False
            if warm_start and prev is not None and solver != "dem":
                fit = fit_fixed_support(fam, supports, data, options, solver, state=prev,
                                        state_shift=prev_shift)
                warm = fit.converged
            if fit is None or not fit.converged:
                fit = fit_fixed_support(fam, supports, data, options, solver)
                warm = False
            prev, prev_shift = fit.state, fit.shift
            act = fit.measure.active(threshold)
            degenerate = act.m >= data.d
            tree.levels.append(TreeLevel(v, act.theta, act.weights, fit.loglik, fit.psi,
                                         fit.converged, degenerate, warm))
            if degenerate:
                break
        except (InputError, FloatingPointError, ValueError) as exc:
            tree.levels.append(TreeLevel(v, np.empty((0, data.p)), np.empty(0), np.nan,
                                         np.nan, False, error=str(exc)))
    return tree


@dataclass(frozen=True)
class CdfSteps:
    points: np.ndarray
    cumulative: np.ndarray


def cdf_of_Q(measure: MixingMeasure) -> CdfSteps:
    """Step CDF of a univariate mixing measure."""
    if measure.theta.shape[1] != 1:
        raise InputError("the CDF is only defined for univariate supports")
    order = np.argsort(measure.theta[:, 0], kind="stable")
    pts = measure.theta[order, 0]
    cum = np.cumsum(measure.weights[order])
    cum[-1] = 1.0 if abs(cum[-1] - 1) <= 1e-10 else cum[-1]
    return CdfSteps(pts, cum)
