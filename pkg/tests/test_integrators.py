import math
import warnings

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from possplit.coefficients import builtin_coefficient, initial_condition
from possplit.grid import apply_heat_kernel, build_discretization, laplacian, spectral_decomposition
from possplit.integrators import (BatchTracker, IntegrationError, TridiagonalSolver, baseline_step,
                                  integrate, lt_step, noise_substep_exact, normalize_scheme,
                                  step_operators)
from possplit.noise import sample_increments

ZERO = builtin_coefficient("zero")
LINEAR = builtin_coefficient("linear", 1.0)


def test_normalize_scheme():
    assert normalize_scheme("lt") == "LT"
    with pytest.raises(IntegrationError):
        normalize_scheme("rk4")


def test_noise_substep_examples():
    assert noise_substep_exact(0.0, 1e3, 5.0, 1.0, 100) == 0.0
    assert noise_substep_exact(0.0, 1e6, 1e6, 1.0, 100) == 0.0   # factor overflows, zero stays zero
    assert noise_substep_exact(3.0, 1.0, 0.0, 2.0, 1) == pytest.approx(3.0 * math.exp(-1), rel=1e-15)


def test_lt_step_without_noise_is_heat_flow():
    N, tau = 9, 0.01
    ops = step_operators(N, tau)
    u = np.linspace(0.1, 0.8, N - 1)
    dW = np.random.default_rng(0).standard_normal(N - 1)
    np.testing.assert_allclose(lt_step(u, ops, ZERO, dW), apply_heat_kernel(spectral_decomposition(N), tau, u),
                               atol=1e-14)


@pytest.mark.parametrize("dW", [-0.3, 0.0, 0.17])
def test_lt_step_single_node(dW):
    tau = 0.01
    out = lt_step(np.array([1.0]), step_operators(2, tau), LINEAR, np.array([dW]))
    assert out[0] == pytest.approx(math.exp(-8 * tau) * math.exp(math.sqrt(2) * dW - tau), rel=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.floats(1e-6, 1.0),
       st.sampled_from(["linear", "log1p", "sin_plus", "power125", "rational"]),
       st.floats(0.1, 20.0), st.integers(0, 2**31))
def test_lt_step_preserves_nonnegativity(N, tau, name, lam, seed):
    rng = np.random.default_rng(seed)
    u = rng.exponential(size=N - 1) * rng.integers(0, 2, N - 1)
    dW = rng.standard_normal(N - 1) * math.sqrt(tau) * 5
    out = lt_step(u, step_operators(N, tau), builtin_coefficient(name, lam), dW)
    assert np.all(out >= 0)


def test_sexp_equals_lt_without_noise_coefficient():
    ops = step_operators(12, 0.003)
    rng = np.random.default_rng(1)
    u = rng.standard_normal((5, 11))
    dW = rng.standard_normal((5, 11))
    assert np.array_equal(baseline_step("SEXP", u, ops, ZERO, dW), lt_step(u, ops, ZERO, dW))


def test_em_example():
    tau = 0.01
    out = baseline_step("EM", np.array([1.0, 1.0]), step_operators(3, tau), ZERO, np.zeros(2))
    np.testing.assert_allclose(out, [1 - 9 * tau, 1 - 9 * tau], rtol=1e-14)


def test_em_without_noise_is_explicit_euler():
    N, tau = 10, 0.002
    A = np.eye(N - 1) + tau * N**2 * laplacian(N).to_dense()
    u = np.random.default_rng(2).standard_normal(N - 1)
    np.testing.assert_allclose(baseline_step("EM", u, step_operators(N, tau), ZERO, np.zeros(N - 1)),
                               A @ u, atol=1e-13)


@pytest.mark.parametrize("N", [2, 3, 7, 16])
@pytest.mark.parametrize("tau", [1e-5, 0.01, 10.0])
def test_sem_matches_dense_solve(N, tau):
    rng = np.random.default_rng(N)
    u = rng.standard_normal(N - 1)
    dW = rng.standard_normal(N - 1) * math.sqrt(tau)
    coeff = builtin_coefficient("sin_plus", 1.3)
    A = np.eye(N - 1) - tau * N**2 * laplacian(N).to_dense()
    rhs = u + math.sqrt(N) * coeff.g(u) * dW
    ref = scipy.linalg.solve(A, rhs)
    assert np.max(np.abs(baseline_step("SEM", u, step_operators(N, tau), coeff, dW) - ref)) <= 1e-11


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0.1, 10)),
       arrays(np.float64, 30, elements=st.floats(-0.49, 0.49)), st.integers(0, 2**31))
def test_thomas_diagonally_dominant(diag_extra, offs, seed):
    from possplit.grid import TridiagonalOperator
    n = len(diag_extra)
    off = offs[: n - 1]
    diag = 1.0 + diag_extra
    op = TridiagonalOperator(diag, off)
    b = np.random.default_rng(seed).standard_normal((2, n))
    x = TridiagonalSolver(op).solve(b)
    np.testing.assert_allclose(x @ op.to_dense().T, b, atol=1e-10)


def test_noise_substep_second_moment():
    rng = np.random.default_rng(2024)
    N, tau, f, u = 16, 2.0**-6, 0.8, 1.5
    dW = rng.standard_normal(10**5) * math.sqrt(tau)
    y2 = noise_substep_exact(u, f, dW, tau, N) ** 2
    exact = math.exp(N * f**2 * tau) * u**2
    assert abs(y2.mean() - exact) < 3 * y2.std(ddof=1) / math.sqrt(y2.size)


def test_linear_case_mean_propagation():
    rng = np.random.default_rng(77)
    N, tau, S = 4, 0.01, 10**5
    ops = step_operators(N, tau)
    u0 = np.array([0.3, 1.0, 0.6])
    dW = rng.standard_normal((S, N - 1)) * math.sqrt(tau)
    u1 = lt_step(np.tile(u0, (S, 1)), ops, LINEAR, dW)
    se = u1.std(axis=0, ddof=1) / math.sqrt(S)
    assert np.all(np.abs(u1.mean(axis=0) - ops.apply_kernel(u0)) < 3 * se)


def _run(kind, coeff, N=16, M=64, T=0.25, seed=0, **kw):
    d = build_discretization(N, M, T)
    return integrate(kind, d, coeff, initial_condition("sin"), sample_increments(seed, 0, M, N, d.tau), **kw)


def test_integrate_first_snapshot_is_initial_vector():
    tr = _run("LT", LINEAR)
    np.testing.assert_array_equal(tr.snapshots[0].values, initial_condition("sin").sample(np.arange(1, 16) / 16))
    assert tr.snapshots[0].time_index == 0
    assert len(tr.snapshots) == 65 and tr.blow_up is None


def test_snapshot_stride():
    tr = _run("SEM", LINEAR, M=10, snapshot_stride=4)
    assert [s.time_index for s in tr.snapshots] == [0, 4, 8, 10]
    np.testing.assert_allclose(tr.times, [0, 0.1, 0.2, 0.25])
    with pytest.raises(IntegrationError):
        _run("LT", LINEAR, snapshot_stride=0)


@pytest.mark.parametrize("name", ["linear", "log1p", "sin_plus", "power125"])
def test_integrate_lt_nonnegative(name):
    tr = _run("LT", builtin_coefficient(name, 5.0), N=32, M=400, T=4.0, check_positivity=True)
    assert tr.values().min() >= 0


def test_integrate_deterministic():
    a = _run("LT", builtin_coefficient("sin_plus", 2.0), seed=5).values()
    b = _run("LT", builtin_coefficient("sin_plus", 2.0), seed=5).values()
    assert a.tobytes() == b.tobytes()


def test_integrate_records_cfl_and_warns():
    d = build_discretization(10, 5, 1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tr = integrate("LT", d, LINEAR, initial_condition("sin"), sample_increments(0, 0, 5, 10, d.tau))
    assert any("exceeds" in str(w.message) for w in caught)
    assert tr.cfl_h == pytest.approx(2.0) and tr.cfl_h2 == pytest.approx(20.0)


def test_integrate_rejects_mismatched_noise():
    d = build_discretization(10, 5, 1.0)
    with pytest.raises(IntegrationError):
        integrate("LT", d, LINEAR, initial_condition("sin"), sample_increments(0, 0, 5, 11, d.tau))
    with pytest.raises(IntegrationError):
        integrate("LT", d, LINEAR, initial_condition("sin"), sample_increments(0, 0, 5, 10, 0.3))


def test_em_blow_up_is_recorded():
    tr = _run("EM", LINEAR, N=32, M=1000, T=10.0)
    assert tr.blow_up is not None and tr.blow_up.cause == "non-finite"
    assert tr.snapshots[-1].time_index < tr.blow_up.step


def test_log1p_domain_failure_is_recorded():
    tr = _run("EM", builtin_coefficient("log1p", 2.5), N=32, M=1000, T=10.0)
    assert tr.blow_up is not None and tr.blow_up.cause == "domain"


def test_batch_tracker_matches_single_paths():
    N, M, tau = 8, 30, 0.01
    ops = step_operators(N, tau)
    u0 = initial_condition("sin").sample(np.arange(1, N) / N)
    noises = [sample_increments(4, i, M, N, tau).data for i in range(3)]
    for kind in ("LT", "EM", "SEM", "SEXP"):
        t = BatchTracker(kind, np.tile(u0, (3, 1)), ops, LINEAR)
        for m in range(M):
            t.advance(np.stack([w[m] for w in noises]))
        d = build_discretization(N, M, M * tau)
        for i in range(3):
            single = integrate(kind, d, LINEAR, initial_condition("sin"), sample_increments(4, i, M, N, tau))
            np.testing.assert_allclose(t.u[i], single.snapshots[-1].values, rtol=1e-12, atol=1e-15)


def test_batch_tracker_flags():
    N = 32
    ops = step_operators(N, 0.01)
    u0 = np.tile(initial_condition("sin").sample(np.arange(1, N) / N), (2, 1))
    rng = np.random.default_rng(0)
    em = BatchTracker("EM", u0, ops, builtin_coefficient("log1p", 2.5))
    lt = BatchTracker("LT", u0, ops, builtin_coefficient("log1p", 2.5))
    for _ in range(300):
        dW = rng.standard_normal((2, N - 1)) * 0.1
        em.advance(dW)
        lt.advance(dW)
    assert em.blown_up.all() and np.all(em.u == 0) and np.all(em.blow_step > 0)
    assert not lt.blown_up.any() and not lt.negative.any()
