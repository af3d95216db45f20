import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdmix import InputError, mixture_loglik
from pdmix.dual import (
    DualState,
    SolverOptions,
    constraint_values,
    fit_weights,
    initial_dual_state,
    k_gradient_hessian,
    k_value,
    newton_step_monotone,
    prune_inactive,
    solve,
)
from pdmix.recovery import log_constraints
from pdmix.oracle import brute_force_primal, finite_diff, finite_diff_jacobian

from .conftest import random_instance


def assert_k_monotone(trace):
    K = trace.column("k")
    tol = 8 * np.finfo(float).eps * np.abs(K).max()
    # a backoff record re-evaluates K at a lower gamma on purpose
    ok = np.diff(K) >= -tol
    phases = trace.column("phase")[1:]
    assert np.all(ok | (phases == "backoff"))


def _state_near_optimum(F, counts, gamma, jitter, rng):
    s0 = initial_dual_state(F, counts)
    return DualState(s0.z + jitter * rng.normal(size=s0.z.size) - 0.2, gamma)


def _fd_check(F, counts, state):
    x0 = np.append(state.z, state.gamma)

    def K(x):
        return k_value(DualState(x[:-1], x[-1]), F, counts)

    def grad(x):
        return k_gradient_hessian(DualState(x[:-1], x[-1]), F, counts)[0]

    g, H = k_gradient_hessian(state, F, counts)
    g_fd, _ = finite_diff(K, x0, step=1e-5)
    H_fd = finite_diff_jacobian(grad, x0, step=1e-6)
    return g, H, g_fd, (H_fd + H_fd.T) / 2


@given(st.integers(1, 6), st.integers(1, 6), st.floats(1.0, 30.0), st.integers(0, 10_000))
def test_derivatives_match_finite_differences(m, d, gamma, seed):
    rng = np.random.default_rng(seed)
    F, counts = random_instance(rng, m, d)
    state = _state_near_optimum(F, counts, gamma + 1e-3, 0.1, rng)
    g, H, g_fd, H_fd = _fd_check(F, counts, state)
    assert np.abs(g - g_fd).max() <= 1e-5 * max(1.0, np.abs(g).max())
    assert np.abs(H - H_fd).max() <= 1e-5 * max(1.0, np.abs(H).max())


@given(st.integers(1, 8), st.integers(1, 8), st.floats(1.0, 50.0), st.integers(0, 10_000))
def test_z_block_negative_definite(m, d, gamma, seed):
    rng = np.random.default_rng(seed)
    F, counts = random_instance(rng, m, d)
    state = _state_near_optimum(F, counts, gamma, 0.3, rng)
    _, H = k_gradient_hessian(state, F, counts)
    ev = np.linalg.eigvalsh(H[:-1, :-1])
    assert ev.max() < 0


@given(st.integers(1, 8), st.integers(1, 8), st.floats(1.0, 1e4), st.integers(0, 10_000))
def test_hessian_nsd_where_gamma_log_p_at_most_one(m, d, gamma, seed):
    rng = np.random.default_rng(seed)
    F, counts = random_instance(rng, m, d)
    state = _state_near_optimum(F, counts, gamma, 0.3, rng)
    # shift into the region gamma * log p_j <= 1
    excess = log_constraints(state.z, F).max() - rng.uniform(-1, 1) / gamma
    state = DualState(state.z - max(excess, 0.0), gamma)
    _, H = k_gradient_hessian(state, F, counts)
    ev = np.linalg.eigvalsh(H)
    assert ev.max() <= 1e-8 * abs(ev.min())


def test_joint_concavity_fails_outside_region():
    # one support, one observation: the (z, gamma) Hessian determinant is
    # proportional to 1 - gamma * log p, so it turns indefinite past p**gamma = e
    F, counts = np.ones((1, 1)), np.ones(1)
    inside = k_gradient_hessian(DualState(np.array([0.4]), 2.0), F, counts)[1]
    outside = k_gradient_hessian(DualState(np.array([0.6]), 2.0), F, counts)[1]
    assert np.linalg.eigvalsh(inside).max() <= 0
    assert np.linalg.eigvalsh(outside).max() > 0


def test_visited_states_are_in_concave_region(rng):
    F, counts = random_instance(rng, 12, 20, max_count=30)
    F = F ** 8
    seen = []

    def cb(record, state, rows):
        seen.append(state.gamma * log_constraints(state.z, F[rows]).max())
        ev = np.linalg.eigvalsh(k_gradient_hessian(state, F[rows], counts)[1])
        assert ev.max() <= 1e-8 * abs(ev.min())

    solve(F, counts, callback=cb)
    assert max(seen) <= 1 + 1e-12


def test_initial_state_is_gamma_one_optimum(rng):
    F, counts = random_instance(rng, 4, 7)
    s0 = initial_dual_state(F, counts)
    g, _ = k_gradient_hessian(s0, F, counts)
    np.testing.assert_allclose(g[:-1], 0.0, atol=1e-14)
    np.testing.assert_allclose(constraint_values(s0, F).sum(), 1.0, rtol=1e-12)


@given(st.integers(1, 6), st.integers(2, 12), st.integers(0, 10_000),
       st.sampled_from(["joint", "fixed_gamma"]))
def test_monotone_step_never_decreases_k(m, d, seed, mode):
    rng = np.random.default_rng(seed)
    F, counts = random_instance(rng, m, d)
    state = DualState(initial_dual_state(F, counts).z, 1.0 + rng.uniform(0, 50))
    for _ in range(5):
        k0 = k_value(state, F, counts)
        state, info = newton_step_monotone(state, F, counts, mode=mode)
        k1 = k_value(state, F, counts)
        assert k1 >= k0 - 8 * np.finfo(float).eps * abs(k0)
        assert info.step >= 0


@given(st.integers(1, 8), st.integers(1, 15), st.integers(0, 10_000))
def test_solve_trace_properties(m, d, seed):
    rng = np.random.default_rng(seed)
    F, counts = random_instance(rng, m, d, max_count=20)
    state, trace = solve(F, counts)
    assert trace.converged
    assert_k_monotone(trace)
    assert constraint_values(state, F).max() <= 1 + 1e-6
    assert trace.records[-1].psi <= SolverOptions().psi_tol
    assert trace.column("gamma").min() >= 1.0


def test_stiff_instance_converges():
    # columns spanning ~20 orders of magnitude
    rng = np.random.default_rng(2394)
    m, d = rng.integers(1, 30), rng.integers(1, 40)
    F, counts = random_instance(rng, m, d, max_count=50)
    F = F ** rng.uniform(1, 20)
    state, trace = solve(F, counts)
    assert trace.converged
    assert constraint_values(state, F).max() <= 1 + 1e-6
    assert_k_monotone(trace)


def test_gamma_cap_backoff(rng):
    # an unreachable tolerance forces a stall at the cap, which is then cut
    F, counts = random_instance(rng, 5, 8, max_count=10)
    opts = SolverOptions(gamma_max=1e3, psi_tol=1e-12, max_iter=50)
    state, trace = solve(F, counts, opts)
    assert not trace.converged
    assert trace.backoffs == 1
    assert "backoff" in set(trace.column("phase"))
    assert state.gamma <= 10
    assert_k_monotone(trace)


def test_single_support():
    F = np.array([[0.3, 0.2, 0.9]])
    pi, _, trace = fit_weights(F, np.array([1.0, 2.0, 1.0]))
    assert trace.converged
    np.testing.assert_array_equal(pi, [1.0])


def test_two_point_instance_matches_oracle():
    F = np.array([[1.0, 0.0], [np.exp(-1), np.exp(-1)]])
    counts = np.array([1.0, 1.0])
    pi, _, trace = fit_weights(F, counts, SolverOptions(psi_tol=1e-8))
    ref = brute_force_primal(F, counts)
    assert mixture_loglik(pi, F, counts) == pytest.approx(ref.loglik, abs=1e-6)


def test_pruned_variant_agrees(rng):
    F, counts = random_instance(rng, 30, 12, max_count=10)
    F[5:] *= 0.05  # many clearly dominated supports
    pi_a, _, _ = fit_weights(F, counts)
    pi_b, _, tr = fit_weights(F, counts, SolverOptions(prune=True))
    la, lb = mixture_loglik(pi_a, F, counts), mixture_loglik(pi_b, F, counts)
    assert lb == pytest.approx(la, abs=1e-4)
    assert tr.column("n_rows").min() < 30


def test_prune_inactive_keeps_needed_rows(rng):
    F, counts = random_instance(rng, 6, 5)
    state, _ = solve(F, counts)
    Fr, idx = prune_inactive(state, F, counts)
    assert idx.size >= 1 and Fr.shape == (idx.size, 5)


def test_warm_start_shape_checked(rng):
    F, counts = random_instance(rng, 3, 4)
    with pytest.raises(InputError):
        solve(F, counts, state=DualState(np.zeros(3), 1.0))


def test_input_validation():
    with pytest.raises(InputError):
        solve(np.ones((2, 3)), np.array([1.0, 0.0, 1.0]))
    with pytest.raises(InputError):
        solve(-np.ones((2, 3)), np.ones(3))
    with pytest.raises(InputError):
        initial_dual_state(np.array([[1.0, 0.0]]), np.ones(2))
    with pytest.raises(ValueError):
        DualState(np.zeros(2), 0.5)
    with pytest.raises(InputError):
        SolverOptions(psi_tol=0)
    with pytest.raises(InputError):
        SolverOptions(step_shrink=1.5)


def test_k_value_rejects_overflow():
    with pytest.raises(FloatingPointError):
        k_value(DualState(np.array([800.0]), 5.0), np.ones((1, 1)), np.ones(1))
