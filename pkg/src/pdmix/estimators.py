"""scikit-learn style estimators wrapping the fixed-support and two-step fits."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .builder import algorithm1, fit_fixed_support
from .data import RawDataset, SupportSet, deduplicate, sample_covariance, support_from_data
from .densities import NormalFamily, PoissonFamily
from .dual import SolverOptions

_FAMILIES = ("normal", "poisson")


def _validate_X(X, family, estimator=None, reset=True):
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    if X.ndim == 1:
        X = X[:, None]
    if family == "poisson":
        if X.shape[1] != 1:
            raise ValueError("the Poisson family takes a single column of counts")
        if np.any(X < 0) or np.any(X != np.round(X)):
            raise ValueError("Poisson data must be non-negative integers")
    if estimator is not None:
        if reset:
            estimator.n_features_in_ = X.shape[1]
        elif X.shape[1] != estimator.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(estimator).__name__} "
                f"was fitted with {estimator.n_features_in_}"
            )
    return X


class _MixtureOutputs:
    """Prediction methods shared by the estimators; needs ``_log_components``."""

    def _joint_log(self, X):
        X = _validate_X(X, self.family, self, reset=False)
        return self._log_components(X) + np.log(self.weights_)[:, None]

    def score_samples(self, X):
        """Log mixture density at each row of X."""
        check_is_fitted(self)
        return logsumexp(self._joint_log(X), axis=0)

    def score(self, X, y=None):
        """Mean log mixture density per sample."""
        return float(self.score_samples(X).mean())

    def predict_proba(self, X):
        """Posterior component probabilities, shape (n_samples, n_components)."""
        check_is_fitted(self)
        J = self._joint_log(X)
        return np.exp(J - logsumexp(J, axis=0)).T

    def transform(self, X):
        """Same as :meth:`predict_proba`: one column per active component."""
        return self.predict_proba(X)

    def predict(self, X):
        """Index of the most probable component for each row."""
        return np.argmax(self.predict_proba(X), axis=1)


class NPMLEMixture(_MixtureOutputs, TransformerMixin, DensityMixin, BaseEstimator):
    """Nonparametric ML mixing distribution over a fixed candidate support set.

    Parameters
    ----------
    family : {"normal", "poisson"}
        Component family. Normal components share the covariance
        ``delta * covariance``.
    delta : float
        Sieve multiplier on the covariance (normal family).
    covariance : array-like, optional
        Base covariance; the sample covariance of X when omitted.
    support : "data" or array-like
        Candidate supports: the distinct rows of X, or an explicit array.
    solver : {"pd", "pd-ic", "dem"}
        Penalized dual, penalized dual with pruning of inactive supports, or
        discrete EM.
    psi_tol, joint_tol : float
        Stopping tolerances, see :class:`pdmix.dual.SolverOptions`.
    max_iter : int
        Iteration cap per phase (pd) or in total (dem).
    active_threshold : float
        Supports with larger weight are reported as components.
    dedup_tol : float
        Max-norm tolerance for merging repeated rows of X.

    Attributes
    ----------
    supports_, weights_ : ndarray
        Active support vectors and their (renormalized) weights.
    measure_ : MixingMeasure
        Weights over every candidate support.
    loglik_, psi_ : float
        Loglikelihood of the training data and the gradient-function bound.
    n_components_, n_iter_ : int
    converged_ : bool
    trace_ : SolveTrace or EMTrace
    covariance_ : ndarray
        Component covariance actually used (normal family).
    """

    def __init__(self, family="normal", delta=1.0, covariance=None, support="data",
                 solver="pd", psi_tol=0.005, joint_tol=1e-6, max_iter=500,
                 active_threshold=1e-6, dedup_tol=0.0):
        self.family = family
        self.delta = delta
        self.covariance = covariance
        self.support = support
        self.solver = solver
        self.psi_tol = psi_tol
        self.joint_tol = joint_tol
        self.max_iter = max_iter
        self.active_threshold = active_threshold
        self.dedup_tol = dedup_tol

    def _family(self, X):
        if self.family not in _FAMILIES:
            raise ValueError(f"family must be one of {_FAMILIES}, got {self.family!r}")
        if self.family == "poisson":
            return PoissonFamily()
        cov = sample_covariance(RawDataset(X)) if self.covariance is None else self.covariance
        return NormalFamily(np.atleast_2d(cov), self.delta)

    def _supports(self, data):
        if isinstance(self.support, str):
            if self.support != "data":
                raise ValueError(f"unknown support option {self.support!r}")
            return support_from_data(data)
        return SupportSet(check_array(self.support, ensure_2d=False).reshape(-1, data.p))

    def fit(self, X, y=None):
        X = _validate_X(X, self.family, self)
        data = deduplicate(RawDataset(X), self.dedup_tol)
        family = self._family(X)
        options = SolverOptions(joint_tol=self.joint_tol, psi_tol=self.psi_tol,
                                max_iter=self.max_iter)
        fit = fit_fixed_support(family, self._supports(data), data, options, self.solver,
                                max_iter=self.max_iter if self.solver == "dem" else None)
        act = fit.measure.active(self.active_threshold)
        self.family_ = family
        self.measure_ = fit.measure
        self.supports_ = act.theta
        self.weights_ = act.weights
        self.n_components_ = act.m
        self.loglik_ = fit.loglik
        self.psi_ = fit.psi
        self.n_iter_ = fit.n_iter
        self.converged_ = fit.converged
        self.trace_ = fit.trace
        self.fit_ = fit
        if self.family == "normal":
            self.covariance_ = family.covariance
        return self

    def _log_components(self, X):
        return self.family_.log_matrix(self.supports_, X)


class SemiparametricMixture(_MixtureOutputs, TransformerMixin, DensityMixin, BaseEstimator):
    """Two-step fit: fixed-support weights, then continuous EM from the active supports.

    The second step moves the support locations and (normal family)
    re-estimates the common covariance. Parameters are as for
    :class:`NPMLEMixture` plus ``cem_tol``, the loglikelihood-change
    tolerance of the continuous EM.

    Attributes
    ----------
    supports_, weights_ : ndarray
        Locations and weights after the second step.
    covariance_ : ndarray
        Fitted component covariance (normal family).
    fixed_loglik_, loglik_ : float
        Loglikelihood after the first and second step.
    """

    def __init__(self, family="normal", delta=1.0, covariance=None, support="data",
                 solver="pd", psi_tol=0.005, joint_tol=1e-6, max_iter=500,
                 active_threshold=1e-6, dedup_tol=0.0, cem_tol=1e-4):
        self.family = family
        self.delta = delta
        self.covariance = covariance
        self.support = support
        self.solver = solver
        self.psi_tol = psi_tol
        self.joint_tol = joint_tol
        self.max_iter = max_iter
        self.active_threshold = active_threshold
        self.dedup_tol = dedup_tol
        self.cem_tol = cem_tol

    _family = NPMLEMixture._family
    _supports = NPMLEMixture._supports

    def fit(self, X, y=None):
        X = _validate_X(X, self.family, self)
        data = deduplicate(RawDataset(X), self.dedup_tol)
        family = self._family(X)
        options = SolverOptions(joint_tol=self.joint_tol, psi_tol=self.psi_tol,
                                max_iter=self.max_iter)
        fixed, free = algorithm1(data, family, self._supports(data), options, self.solver,
                                 self.cem_tol, self.active_threshold)
        self.fixed_fit_ = fixed
        self.fixed_loglik_ = fixed.loglik
        self.continuous_fit_ = free
        self.supports_ = free.measure.theta
        self.weights_ = free.measure.weights
        self.n_components_ = free.measure.m
        self.loglik_ = free.loglik
        self.n_iter_ = free.n_iter
        self.converged_ = free.converged and not free.degenerate
        if self.family == "normal":
            self.family_ = NormalFamily(free.Sigma_hat, family.delta)
            self.covariance_ = self.family_.covariance
        else:
            self.family_ = family
        return self

    def _log_components(self, X):
        return self.family_.log_matrix(self.supports_, X)
