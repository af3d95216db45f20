import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdmix import PoissonFamily, likelihood_matrix, mixture_loglik, support_grid_1d
from pdmix.dual import SolverOptions, fit_weights
from pdmix.em import discrete_em_solve
from pdmix.oracle import brute_force_primal, finite_diff, finite_diff_jacobian

from .conftest import random_instance


def test_single_support_is_trivial():
    sol = brute_force_primal(np.array([[0.3, 0.4]]), np.array([1.0, 1.0]), resolution=3)
    np.testing.assert_array_equal(sol.weights, [1.0])


def test_two_point_closed_form():
    # maximize log(a + (1 - a)/e) + log((1 - a)/e): a = (1 - 2/e) / (2 - 2/e)
    F = np.array([[1.0, 0.0], [np.exp(-1), np.exp(-1)]])
    sol = brute_force_primal(F, np.ones(2))
    a = (1 - 2 / np.e) / (2 - 2 / np.e)
    np.testing.assert_allclose(sol.weights, [a, 1 - a], atol=1e-7)
    assert not sol.coarse


def test_coarse_flag():
    F = np.array([[1.0, 0.0], [np.exp(-1), np.exp(-1)]])
    assert brute_force_primal(F, np.ones(2), resolution=1).coarse


def test_mode_errors():
    with pytest.raises(ValueError):
        brute_force_primal(np.ones((5, 2)), np.ones(2))
    with pytest.raises(ValueError):
        brute_force_primal(np.ones((2, 2)), np.ones(2), mode="bisect")


def test_projected_ascent_mortality(mortality):
    L = likelihood_matrix(PoissonFamily(), support_grid_1d(0, 9, 1), mortality)
    sol = brute_force_primal(L.scaled, mortality.counts, mode="projected-ascent",
                             polish_iter=10**6)
    l = sol.loglik + float(mortality.counts @ L.column_shift)
    assert l == pytest.approx(-1990.0928, abs=1e-3)


@given(st.integers(1, 4), st.integers(1, 8), st.integers(0, 10_000))
def test_oracle_dominates_and_matches_solvers(m, d, seed):
    rng = np.random.default_rng(seed)
    F, counts = random_instance(rng, m, d)
    ref = brute_force_primal(F, counts, resolution=60)
    pi_pd, _, _ = fit_weights(F, counts, SolverOptions(psi_tol=1e-8))
    pi_em, _ = discrete_em_solve(F, counts, psi_tol=1e-3)
    l_pd = mixture_loglik(pi_pd, F, counts)
    l_em = mixture_loglik(pi_em, F, counts)
    assert ref.loglik >= max(l_pd, l_em) - 1e-6
    assert abs(ref.loglik - l_pd) <= 1e-6


def test_finite_diff_quadratic(rng):
    A = rng.normal(size=(4, 4))
    x = rng.normal(size=4)
    g, H = finite_diff(lambda v: v @ A @ v, x, step=1e-3)
    np.testing.assert_allclose(g, (A + A.T) @ x, atol=1e-8)
    np.testing.assert_allclose(H, A + A.T, atol=1e-8)


def test_finite_diff_rejects_non_finite():
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        finite_diff(lambda v: np.log(v[0]), np.array([1e-7]), step=1e-5)
    with pytest.raises(FloatingPointError):
        finite_diff(lambda v: np.inf, np.zeros(1))


def test_finite_diff_jacobian(rng):
    A = rng.normal(size=(3, 5))
    J = finite_diff_jacobian(lambda v: A @ v, rng.normal(size=5))
    np.testing.assert_allclose(J, A, atol=1e-8)


def test_loglik_directional_derivative(rng):
    # along a feasible direction e_j - pi, the derivative of l equals D_j
    from pdmix.recovery import gradient_function

    F, counts = random_instance(rng, 4, 6)
    pi = rng.dirichlet(np.ones(4))
    D = gradient_function(pi, F, counts)
    for j in range(4):
        e = np.eye(4)[j]
        g, _ = finite_diff(lambda t: mixture_loglik(pi + t[0] * (e - pi), F, counts),
                           np.zeros(1), step=1e-6)
        assert g[0] == pytest.approx(D[j], rel=1e-5, abs=1e-6)
