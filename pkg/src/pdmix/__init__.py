"""Nonparametric maximum likelihood for mixing distributions via a penalized dual."""

from .builder import (
    CdfSteps,
    FixedSupportFit,
    MixtureTree,
    algorithm1,
    cdf_of_Q,
    fit_fixed_support,
    sieve_sweep,
)
from .data import (
    DistinctDataset,
    InputError,
    RawDataset,
    SupportSet,
    deduplicate,
    read_csv,
    sample_covariance,
    support_from_data,
    support_grid_1d,
    support_lattice,
)
from .densities import LikelihoodMatrix, NormalFamily, PoissonFamily, likelihood_matrix
from .dual import DualState, SolverOptions, SolveTrace, solve
from .em import ContinuousFit, continuous_em_solve, discrete_em_solve, rate_estimate
from .estimators import NPMLEMixture, SemiparametricMixture
from .recovery import MixingMeasure, candidate_pi, gradient_function, mixture_loglik, pd_estimator

__version__ = "0.1.0"

__all__ = [
    "CdfSteps", "ContinuousFit", "DistinctDataset", "DualState", "FixedSupportFit",
    "InputError", "LikelihoodMatrix", "MixingMeasure", "MixtureTree", "NPMLEMixture",
    "NormalFamily", "PoissonFamily", "RawDataset", "SemiparametricMixture",
    "SolveTrace", "SolverOptions", "SupportSet", "algorithm1", "candidate_pi",
    "cdf_of_Q", "continuous_em_solve", "deduplicate", "discrete_em_solve",
    "fit_fixed_support", "gradient_function", "likelihood_matrix", "mixture_loglik",
    "pd_estimator", "rate_estimate", "read_csv", "sample_covariance", "sieve_sweep",
    "solve", "support_from_data", "support_grid_1d", "support_lattice",
]
