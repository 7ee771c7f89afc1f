import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poa_dantzig.dictionary import build_dct, build_dft, build_haar, build_identity, concat
from poa_dantzig.errors import NoConvergence, SingularNormalization
from poa_dantzig.sensing import gaussian_sensing
from poa_dantzig.solver import (TRACE_FIELDS, SolverConfig, StopReason, assemble, debias,
                                default_delta, initial_state, iterate, project_feasible,
                                soft_threshold, solve, spectral_bound)

from oracles import (brute_projection, brute_soft_threshold, dense_problem, lp_dantzig,
                     random_complex, real_instance, significant_support)
from timing import median_iteration_time

seeds = st.integers(0, 2 ** 32 - 1)


def complex_instance(seed, p=16, n=8):
    rng = np.random.default_rng(seed)
    X = gaussian_sensing(n, p, seed)
    B = concat([build_identity(p), build_dft(p)])
    y = X.entries @ B.apply(random_complex(rng, 2 * p) * (rng.random(2 * p) < 0.1))
    return X, B, y


# -- assembly -----------------------------------------------------------------

def test_identity_assembly():
    y = np.array([1.0, -2.0, 3.0])
    _, pre = assemble(np.eye(3), concat([build_identity(3)]), y, 0.1)
    assert np.allclose(pre.d, 1.0)
    assert np.allclose(pre.gamma, y)
    assert np.allclose(pre.A.matvec(np.eye(3)[:, 1]), np.eye(3)[:, 1])
    assert 1.0 <= pre.a_norm <= 1.01


@pytest.mark.parametrize("mode", ["operator", "dense"])
@pytest.mark.parametrize("make_dict", [
    lambda p: concat([build_identity(p), build_dft(p)]),
    lambda p: concat([build_haar(p, 3), build_dct(p)]),
])
def test_assembly_matches_dense_definitions(mode, make_dict):
    p, n = 32, 12
    rng = np.random.default_rng(4)
    X = gaussian_sensing(n, p, 11)
    B = make_dict(p)
    y = rng.standard_normal(n)
    _, pre = assemble(X, B, y, 0.0, mode=mode)
    A, gamma, d = dense_problem(X, B, y)
    assert np.allclose(pre.d, d, rtol=1e-10, atol=0)
    assert np.allclose(pre.gamma, gamma, rtol=0, atol=1e-10 * np.abs(gamma).max())
    c = random_complex(rng, B.q)
    w = random_complex(rng, B.q)
    assert np.allclose(pre.A.matvec(c), A @ c, rtol=0, atol=1e-10 * np.abs(A @ c).max())
    assert np.allclose(pre.A.rmatvec(w), A.conj().T @ w, rtol=0,
                       atol=1e-10 * np.abs(A.conj().T @ w).max())
    smax = np.linalg.norm(A, 2)
    assert smax <= pre.a_norm <= 1.01 * smax


def test_operator_is_adjoint_consistent():
    X, B, y = complex_instance(3)
    _, pre = assemble(X, B, y, 0.0, mode="operator")
    rng = np.random.default_rng(0)
    u, v = random_complex(rng, B.q), random_complex(rng, B.q)
    lhs = np.vdot(v, pre.A.matvec(u))
    assert abs(lhs - np.vdot(pre.A.rmatvec(v), u)) <= 1e-10 * abs(lhs)


def test_operator_is_self_adjoint_when_normalization_is_uniform():
    # Unit-norm columns of X and B = I give D = I, so A = X^T X.
    X = gaussian_sensing(10, 20, 5)
    _, pre = assemble(X, concat([build_identity(20)]), np.ones(10), 0.0, mode="operator")
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal(20), rng.standard_normal(20)
    lhs = np.dot(pre.A.matvec(u), v)
    assert abs(lhs - np.dot(u, pre.A.matvec(v))) <= 1e-10 * abs(lhs)


def test_zero_column_raises():
    X = np.eye(3)[:2]  # third coordinate is never sensed
    with pytest.raises(SingularNormalization):
        assemble(X, concat([build_identity(3)]), np.ones(2), 0.1)


def test_default_delta():
    assert default_delta(0.0, 100) == 0.0
    assert default_delta(0.01, 512) == pytest.approx(0.01 * np.sqrt(2 * np.log(512)))


# -- spectral bound -----------------------------------------------------------

def test_spectral_bound_identity():
    assert spectral_bound(np.eye(5)) == pytest.approx(1.001, abs=1e-6)


def test_spectral_bound_diagonal():
    S = np.diag([np.sqrt(3.0), 2.0])
    assert 4.0 <= spectral_bound(S.T @ S) <= 4.004


def test_spectral_bound_random_psd():
    G = np.random.default_rng(6).standard_normal((50, 50))
    A = G.T @ G
    smax = np.linalg.eigvalsh(A).max()
    assert 1.0 <= spectral_bound(A) / smax <= 1.005


def test_spectral_bound_zero_operator():
    assert spectral_bound(np.zeros((3, 3))) == 0.0


def test_spectral_bound_reports_nonconvergence():
    A = np.diag([1.0, 0.999999, 0.5])
    with pytest.raises(NoConvergence):
        spectral_bound(A, tol=1e-15, max_power_iters=3)


# -- proximity operators ------------------------------------------------------

def test_soft_threshold_examples():
    assert soft_threshold(np.array([0.0]), 1.0)[0] == 0
    assert soft_threshold(np.array([2.0]), 0.5)[0] == pytest.approx(1.5)
    assert soft_threshold(np.array([3 + 4j]), 1.0)[0] == pytest.approx(2.4 + 3.2j, abs=1e-12)
    assert abs(brute_soft_threshold(3 + 4j, 1.0) - (2.4 + 3.2j)) <= 1e-6


def test_project_feasible_examples():
    assert project_feasible(np.array([0.5]), np.array([0.0]), 1.0)[0] == 0.5
    assert project_feasible(np.array([2.0]), np.array([0.0]), 1.0)[0] == 1.0
    got = project_feasible(np.array([1 + 2j]), np.array([1 + 1j]), 0.5)[0]
    assert got == pytest.approx(1 + 1.5j, abs=1e-12)
    assert abs(brute_projection(1 + 2j, 1 + 1j, 0.5) - (1 + 1.5j)) <= 1e-6
    assert project_feasible(np.array([2.0]), np.array([2.0]), 0.0)[0] == 2.0


@pytest.mark.invariant
@settings(max_examples=50, deadline=None)
@given(re=st.floats(-10, 10), im=st.floats(-10, 10), lam=st.floats(0.01, 5))
def test_soft_threshold_minimizes_its_objective(re, im, lam):
    u = complex(re, im)
    assert abs(soft_threshold(np.array([u]), lam)[0] - brute_soft_threshold(u, lam)) <= 1e-6


@pytest.mark.invariant
@settings(max_examples=50, deadline=None)
@given(re=st.floats(-10, 10), im=st.floats(-10, 10), gre=st.floats(-3, 3),
       gim=st.floats(-3, 3), delta=st.floats(0, 4))
def test_projection_minimizes_distance(re, im, gre, gim, delta):
    u, g = complex(re, im), complex(gre, gim)
    got = project_feasible(np.array([u]), np.array([g]), delta)[0]
    assert abs(got - brute_projection(u, g, delta)) <= 1e-6


@pytest.mark.invariant
@settings(max_examples=100, deadline=None)
@given(seed=seeds, lam=st.floats(0.01, 5), delta=st.floats(0, 5))
def test_prox_operators_are_nonexpansive(seed, lam, delta):
    rng = np.random.default_rng(seed)
    u, v, g = random_complex(rng, 20), random_complex(rng, 20), random_complex(rng, 20)
    assert (np.linalg.norm(soft_threshold(u, lam) - soft_threshold(v, lam))
            <= np.linalg.norm(u - v) * (1 + 1e-12))
    assert (np.linalg.norm(project_feasible(u, g, delta) - project_feasible(v, g, delta))
            <= np.linalg.norm(u - v) * (1 + 1e-12))


# -- iteration ----------------------------------------------------------------

def test_feasible_zero_is_a_fixed_point():
    X, B, y = complex_instance(1)
    _, pre = assemble(X, B, y, 0.0)
    delta = np.abs(pre.gamma).max()
    state = initial_state(pre)
    for _ in range(3):
        state = iterate(state, pre, SolverConfig(), delta)
        assert not np.any(state.c) and not np.any(state.tau)


def test_first_step_from_zero():
    X, B, y = complex_instance(2)
    _, pre = assemble(X, B, y, 0.0)
    delta = 0.1
    s1 = iterate(initial_state(pre), pre, SolverConfig(alpha=2.0), delta)
    assert not np.any(s1.c)
    assert np.allclose(s1.tau, -project_feasible(np.zeros(B.q), pre.gamma, delta))
    assert (s1.k, s1.support_age) == (1, 1)


@pytest.mark.parametrize("mode", ["operator", "dense"])
def test_iterations_match_dense_transcription(mode):
    X, B, y = complex_instance(7)
    _, pre = assemble(X, B, y, 0.0, mode=mode)
    A, gamma, _ = dense_problem(X, B, y)
    cfg, delta = SolverConfig(alpha=0.5), 0.05
    lam = 0.999 * cfg.alpha / pre.a_norm ** 2
    c = tau = tau_prev = np.zeros(B.q, dtype=complex)
    state = initial_state(pre)
    for _ in range(10):
        u = c - lam / cfg.alpha * (A.conj().T @ (2 * tau - tau_prev))
        mag = np.abs(u)
        c = np.where(mag > 1 / cfg.alpha, (1 - 1 / (cfg.alpha * np.maximum(mag, 1e-300))), 0) * u
        v = A @ c + tau
        r = v - gamma
        proj = gamma + r * np.minimum(1, delta / np.maximum(np.abs(r), 1e-300))
        tau, tau_prev = v - proj, tau
        state = iterate(state, pre, cfg, delta)
    assert np.allclose(state.c, c, rtol=0, atol=1e-10)
    assert np.allclose(state.tau, tau, rtol=0, atol=1e-10)


@pytest.mark.invariant
def test_step_size_is_safe():
    for seed in range(5):
        X, B, y = complex_instance(seed)
        _, pre = assemble(X, B, y, 0.0)
        A, _, _ = dense_problem(X, B, y)
        assert SolverConfig().step(pre.a_norm) < 1 / np.linalg.norm(A, 2) ** 2


@pytest.mark.invariant
def test_per_iteration_cost_is_at_most_quadratic():
    # Doubling q may cost at most 4x, with 25% slack for timer noise.
    t = {q: median_iteration_time(q, iterations=100) for q in (512, 1024, 2048)}
    ratios = (t[1024] / t[512], t[2048] / t[1024])
    assert max(ratios) <= 5, f"per-step times {t}, ratios {ratios}"


# -- solve and debias ---------------------------------------------------------

def test_zero_data_gives_zero():
    X, B, _ = complex_instance(0)
    problem, pre = assemble(X, B, np.zeros(X.n), 0.1)
    sol = solve(problem, pre)
    assert not np.any(sol.c_hat)
    assert sol.stop_reason is StopReason.RESIDUAL_TOLERANCE and sol.iterations <= 1


def test_identity_problem_recovers_observations():
    y = np.random.default_rng(3).standard_normal(8)
    problem, pre = assemble(np.eye(8), concat([build_identity(8)]), y, 0.0)
    sol = solve(problem, pre, SolverConfig(epsilon=1e-10, eta=10 ** 6))
    assert np.allclose(sol.c_hat, y, rtol=0, atol=1e-6)
    assert sol.stop_reason is StopReason.RESIDUAL_TOLERANCE


def test_matches_linear_program_on_small_instance():
    X, B, y, _ = real_instance(21, p=16, s=2)
    problem, pre = assemble(X, B, y, 1e-6)
    A, gamma, _ = dense_problem(X, B, y)
    c_lp, opt = lp_dantzig(A, gamma, 1e-6)
    sol = solve(problem, pre, SolverConfig(alpha=3.0, epsilon=1e-12, eta=5000))
    assert np.array_equal(significant_support(sol.c_raw), significant_support(c_lp))
    assert np.abs(sol.c_hat).sum() <= opt * (1 + 1e-4)
    assert abs(np.abs(sol.c_raw).sum() - opt) <= 1e-3 * opt


@pytest.mark.invariant
@settings(max_examples=20, deadline=None)
@given(seed=seeds, log_delta=st.floats(-4, -1), log_eps=st.floats(-4, -2))
def test_feasible_when_residual_rule_fires(seed, log_delta, log_eps):
    X, B, y, _ = real_instance(seed % 10 ** 6, p=32, s=3)
    delta, eps = 10.0 ** log_delta, 10.0 ** log_eps
    problem, pre = assemble(X, B, y, delta)
    cfg = SolverConfig(epsilon=eps, eta=10 ** 6, max_iter=5000)
    sol = solve(problem, pre, cfg)
    if sol.stop_reason is StopReason.RESIDUAL_TOLERANCE:
        assert np.abs(pre.A.matvec(sol.c_raw) - pre.gamma).max() <= delta + 10 * eps


def test_max_iter_is_reported():
    X, B, y = complex_instance(5)
    problem, pre = assemble(X, B, y, 1e-8)
    sol = solve(problem, pre, SolverConfig(epsilon=1e-12, eta=10 ** 6, max_iter=7))
    assert sol.stop_reason is StopReason.MAX_ITER and sol.iterations == 7


def test_trace_has_one_row_per_iteration():
    X, B, y = complex_instance(6)
    problem, pre = assemble(X, B, y, 0.01)
    buf = io.StringIO()
    sol = solve(problem, pre, SolverConfig(eta=5), trace=buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(TRACE_FIELDS)
    assert len(lines) == sol.iterations + 1
    k, l1, gap, size = lines[-1].split(",")
    assert int(k) == sol.iterations and int(size) == sol.support.size
    assert float(l1) == pytest.approx(np.abs(sol.c_raw).sum())
    assert float(gap) >= 0


def test_debias_examples():
    B = concat([build_identity(4)])
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert not np.any(debias(np.zeros(4), np.eye(4), B, y))
    got = debias(np.array([0, 0, 0.5, 0]), np.eye(4), B, y)
    assert np.array_equal(got, [0, 0, 3.0, 0])


def test_debias_matches_pseudoinverse():
    X, B, y = complex_instance(8)
    rng = np.random.default_rng(8)
    c_raw = np.zeros(B.q, dtype=complex)
    support = rng.choice(B.q, 5, replace=False)
    c_raw[support] = 1.0
    G = X.entries.T @ X.entries @ B.materialize()[:, np.sort(support)]
    expected = np.linalg.pinv(G) @ (X.entries.T @ y)
    got = debias(c_raw, X, B, y)
    assert np.allclose(got[np.sort(support)], expected, rtol=0, atol=1e-8)
    assert not np.any(np.delete(got, support))


@pytest.mark.invariant
@settings(max_examples=25, deadline=None)
@given(seed=seeds, size=st.integers(1, 12))
def test_debias_shrinks_residual_within_support(seed, size):
    X, B, y = complex_instance(seed % 1000)
    rng = np.random.default_rng(seed)
    c_raw = np.zeros(B.q, dtype=complex)
    c_raw[rng.choice(B.q, size, replace=False)] = random_complex(rng, size)
    c_hat = debias(c_raw, X, B, y)
    assert set(np.flatnonzero(c_hat)) <= set(np.flatnonzero(c_raw))
    Xe = X.entries

    def fit(c):
        return np.linalg.norm(Xe.T @ (Xe @ B.apply(c) - y))

    assert fit(c_hat) <= fit(c_raw) + 1e-10


@pytest.mark.invariant
def test_l1_never_exceeds_linear_program_optimum():
    for seed in range(6):
        X, B, y, _ = real_instance(300 + seed, p=32, s=1 + seed % 3)
        problem, pre = assemble(X, B, y, 1e-6)
        A, gamma, _ = dense_problem(X, B, y)
        _, opt = lp_dantzig(A, gamma, 1e-6)
        sol = solve(problem, pre, SolverConfig(alpha=3.0, epsilon=1e-12, eta=5000))
        assert np.abs(sol.c_raw).sum() <= opt * (1 + 1e-3)


def test_config_validation():
    for bad in (dict(alpha=0), dict(epsilon=1.0), dict(eta=0), dict(max_iter=0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    assert SolverConfig().with_overrides(alpha=2.0, eta=None).alpha == 2.0
