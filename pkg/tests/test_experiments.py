import math

import numpy as np
import pytest
from scipy import integrate as sint

from possplit.coefficients import builtin_coefficient, initial_condition
from possplit.experiments import (SchemeCounts, convergence_study, fit_slope, kernel_increment_integral,
                                  kernel_inequality_probe, kernel_square_integral, moment_diagnostic,
                                  positivity_census, system_convergence_study)
from possplit.grid import build_discretization, dense_heat_kernel
from possplit.integrators import integrate
from possplit.noise import sample_increments
from possplit.systems import builtin_system_coefficient

SIN = initial_condition("sin")
LINEAR = builtin_coefficient("linear", 1.0)
ZERO = builtin_coefficient("zero")


def test_classify_precedence():
    c = SchemeCounts.classify(np.array([True, False, True, False]), np.array([True, True, False, False]))
    assert (c.positive, c.negative, c.blown_up, c.total) == (1, 1, 2, 4)


def test_census_lt_always_positive():
    d = build_discretization(32, 200, 2.0)
    rep = positivity_census(["LT", "EM"], d, builtin_coefficient("linear", 2.5), SIN, 12, 0)
    assert rep["LT"].positive == rep["LT"].total == 12
    for c in rep.counts.values():
        assert c.positive + c.negative + c.blown_up == c.total


@pytest.mark.parametrize("N,tau,em_positive", [(8, 1 / 128, True), (8, 1 / 64, False)])
def test_census_without_noise_coefficient(N, tau, em_positive):
    # explicit Euler on the heat equation keeps positivity iff tau N^2 <= 1/2
    d = build_discretization(N, round(0.5 / tau), 0.5)
    u0 = initial_condition("parabola")
    rep = positivity_census(["LT", "SEXP", "SEM", "EM"], d, ZERO, u0, 3, 0)
    for s in ("LT", "SEXP", "SEM"):
        assert rep[s].positive == 3
    assert (rep["EM"].positive == 3) == em_positive


def test_census_uses_the_same_noise_for_every_scheme():
    d = build_discretization(16, 40, 0.5)
    coeff = builtin_coefficient("linear", 3.0)
    rep = positivity_census(["EM", "SEM"], d, coeff, SIN, 6, 11, chunk=4)
    for s in ("EM", "SEM"):
        neg = blown = 0
        for i in range(6):
            tr = integrate(s, d, coeff, SIN, sample_increments(11, i, d.M, d.N, d.tau))
            blown += tr.blow_up is not None
            neg += tr.blow_up is None and tr.values().min() < 0
        assert (rep[s].negative, rep[s].blown_up) == (neg, blown)


def test_census_deterministic_across_workers():
    d = build_discretization(32, 100, 1.0)
    coeff = builtin_coefficient("linear", 2.5)
    a = positivity_census(["LT", "SEXP", "SEM", "EM"], d, coeff, SIN, 9, 3, workers=1, chunk=2)
    b = positivity_census(["LT", "SEXP", "SEM", "EM"], d, coeff, SIN, 9, 3, workers=3, chunk=2)
    assert a.counts == b.counts


def test_census_rejects_negative_initial_data():
    d = build_discretization(8, 4, 0.1)
    from possplit.coefficients import InitialCondition
    with pytest.raises(ValueError):
        positivity_census(["LT"], d, LINEAR, InitialCondition(lambda x: x - 0.5, "bad"), 2, 0)


def test_fit_slope_exact_power_law():
    tau = 2.0 ** -np.arange(4, 10)
    slope, ci = fit_slope(tau, 3 * tau**0.5)
    assert slope == pytest.approx(0.5, abs=1e-12) and ci < 1e-10
    s2, ci2 = fit_slope(tau[:2], tau[:2])
    assert s2 == pytest.approx(1.0) and math.isinf(ci2)
    assert math.isnan(fit_slope(tau[:1], tau[:1])[0])


def _study(schemes, **kw):
    args = dict(N=16, tau_list=[2.0**-4, 2.0**-5, 2.0**-6], tau_ref=2.0**-6, T=0.25,
                coeff=LINEAR, u0=SIN, samples=8, seed=1)
    args.update(kw)
    return convergence_study(schemes, **args)


def test_lt_against_itself_has_zero_error():
    rep = _study(["LT", "SEXP"])
    assert rep.errors["LT"][-1] == 0.0
    assert rep.fit_mask["LT"][-1] is False
    assert all(e > 0 for e in rep.errors["SEXP"])
    assert all(e > 0 for e in rep.errors["LT"][:-1])


def test_study_is_deterministic_across_workers_and_scheme_sets():
    a = _study(["LT", "SEXP", "SEM"], workers=1, chunk=3)
    b = _study(["LT", "SEXP", "SEM"], workers=4, chunk=3)
    assert a.errors == b.errors and a.stderr == b.stderr
    c = _study(["SEM"], chunk=3)
    assert c.errors["SEM"] == a.errors["SEM"]


def test_blown_up_scheme_gets_infinite_error():
    rep = _study(["EM"], N=32, tau_list=[2.0**-4, 2.0**-6], tau_ref=2.0**-6, T=16.0, samples=4)
    assert math.isinf(rep.errors["EM"][0]) and rep.blown_up["EM"][0] > 0
    assert rep.fit_mask["EM"][0] is False


@pytest.mark.parametrize("bad", [dict(tau_list=[0.3], tau_ref=0.1), dict(tau_list=[2.0**-6, 2.0**-4]),
                                 dict(tau_list=[2.0**-4], tau_ref=2.0**-3), dict(T=0.3)])
def test_study_rejects_bad_step_lists(bad):
    with pytest.raises(ValueError):
        _study(["LT"], **bad)


def test_reference_consistency():
    errs = []
    for k in (8, 10, 12):
        rep = convergence_study(["LT"], 16, [2.0 ** -(k - 1)], 2.0**-k, 0.25, LINEAR, SIN, 40, 0)
        errs.append(rep.errors["LT"][0])
    assert all(b <= 1.2 * a for a, b in zip(errs, errs[1:]))


def test_system_study_names_components():
    sc = builtin_system_coefficient("sincos", 1.0)
    rep = system_convergence_study(["LT"], 16, [2.0**-4, 2.0**-6], 2.0**-6, 0.25, sc, (SIN, SIN), 4, 0)
    assert set(rep.errors) == {"LT1", "LT2"}
    assert rep.errors["LT1"][-1] == rep.errors["LT2"][-1] == 0.0


def test_moment_without_noise_is_contraction():
    d = build_discretization(32, 32, 1.0)
    s = moment_diagnostic(d, ZERO, SIN, 5, 0)
    assert s.ratio <= 1.0
    assert s.max_second_moment == pytest.approx(1.0)
    assert s.argmax[0] == 0


def test_moment_deterministic_and_bounded_under_refinement():
    ratios = []
    for N in (16, 32, 64):
        d = build_discretization(N, N, 1.0)
        s = moment_diagnostic(d, LINEAR, SIN, 200, 0, workers=2)
        assert s == moment_diagnostic(d, LINEAR, SIN, 200, 0, workers=1)
        ratios.append(s.ratio)
    assert max(ratios) < 2 * min(ratios) and math.isfinite(max(ratios))


@pytest.mark.parametrize("N", [2, 5, 16])
@pytest.mark.parametrize("t", [1e-4, 0.01, 0.3])
def test_square_integral_matches_dense_oracle(N, t):
    G = dense_heat_kernel(N, t)
    assert kernel_square_integral(N, t) == pytest.approx(N * np.max(np.sum(G**2, axis=1)), rel=1e-9)


def test_square_integral_decays():
    vals = [kernel_square_integral(16, t) for t in (0.1, 1.0, 10.0)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-30


@pytest.mark.parametrize("N,M,T", [(4, 4, 0.5), (6, 3, 0.05), (8, 8, 0.02)])
def test_increment_integral_matches_quadrature(N, M, T):
    tau = T / M

    def rowwise(s, m):
        d = dense_heat_kernel(N, T - s) - dense_heat_kernel(N, T - m * tau)
        return N * np.sum(d**2, axis=1)

    total = sum(sint.quad_vec(lambda s: rowwise(s, m), m * tau, (m + 1) * tau, epsabs=1e-14, epsrel=1e-10)[0]
                for m in range(M))
    assert kernel_increment_integral(N, M, T) == pytest.approx(np.max(total), rel=1e-7)


def test_increment_integral_needs_grid_time():
    with pytest.raises(ValueError):
        kernel_increment_integral(8, 4, 1.0, t=0.3)


def test_kernel_probe_summary():
    s = kernel_inequality_probe(16, 64, 1.0)
    assert math.isfinite(s.square_integral_constant) and math.isfinite(s.increment_constant)
    assert s.increment_constant == pytest.approx(kernel_increment_integral(16, 64, 1.0) / math.sqrt(1 / 64))


def test_square_integral_constant_stable_across_N():
    consts = [kernel_inequality_probe(N, N, 1.0).square_integral_constant for N in (8, 16, 32)]
    assert max(consts) < 2 * min(consts)


def test_increment_constant_bounded_under_refinement():
    # At fixed N the ratio falls once tau drops below h^2, so it is bounded but
    # not flat; the supremum over N is what stays put.
    fixed = [kernel_inequality_probe(16, 2**k, 1.0).increment_constant for k in range(4, 11)]
    assert max(fixed) == fixed[0]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(fixed, fixed[1:]))
    sup = [max(kernel_inequality_probe(N, 2**k, 1.0).increment_constant for N in (4, 8, 16, 32, 64, 128, 256))
           for k in range(4, 11)]
    assert max(sup) < 2 * min(sup)
