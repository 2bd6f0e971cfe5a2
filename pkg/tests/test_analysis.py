import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from walklab.analysis import (DomainError, ScalingFunction, ball_indicator, bound_check_davies,
                              bound_check_offdiagonal, coordinate_function, fit_exponent, fit_on_diagonal,
                              integral_psi, near_diagonal_flatness, pseudo_poincare_ratio,
                              random_coloring, ratio_diagnostic, scaling_r)
from walklab.convolution import ConvolutionBudget
from walklab.groups import lattice
from walklab.measures import PhiFunction, build_nu_alpha, lazy_srw

Z, Z2 = lattice(1), lattice(2)


def test_psi_flat_phi():
    one = lambda s: 1.0
    for t in (0.5, 3.0, 100.0):
        assert integral_psi(one, t) == pytest.approx(t * t / 2, rel=1e-12)


def test_psi_log_growth():
    phi = PhiFunction(2.0)
    assert 0.85 < integral_psi(phi, 1e6) / math.log(1e6) < 1.0
    for t in (10.0, 1e3, 1e5):
        assert integral_psi(phi, 2 * t) >= integral_psi(phi, t)


@pytest.mark.parametrize("phi", [PhiFunction(1.0), PhiFunction(1.5), PhiFunction(2.0), PhiFunction(2.0, 1.0)],
                         ids=lambda p: p.label())
def test_scaling_r_inverts(phi):
    prev = 0.0
    for t in np.logspace(1, 6, 11):
        r = scaling_r(phi, float(t))
        assert r > prev
        prev = r
        assert r * r / integral_psi(phi, r) == pytest.approx(t, rel=1e-9)


def test_scaling_r_domain():
    with pytest.raises(DomainError):
        scaling_r(PhiFunction(1.0), 1.5)
    with pytest.raises(DomainError):
        ScalingFunction.sqrt_log().r(0.5)


@pytest.mark.parametrize("phi,model", [
    (PhiFunction(1.0), lambda t: t),
    (PhiFunction(1.5), lambda t: t ** (1 / 1.5)),
    (PhiFunction(2.0), lambda t: math.sqrt(t * math.log(t))),
    (PhiFunction(2.0, 1.0), lambda t: math.sqrt(t * math.log(math.log(t)))),
], ids=["beta1", "beta1.5", "log", "loglog"])
def test_scaling_matches_models(phi, model):
    hi, lo = ratio_diagnostic([(t, scaling_r(phi, t)) for t in np.logspace(2, 6, 21)], model)
    assert hi / lo <= 1.5


@given(st.floats(1.01, 1e8))
def test_scaling_function_round_trip(t):
    for s in (ScalingFunction.power(1.5), ScalingFunction.sqrt_log()):
        assert s.rho(s.r(t)) == pytest.approx(t, rel=1e-9)
    assert ScalingFunction.power(2.0).rho(0.0) == 0.0


def test_fit_exponent_exact_power_laws():
    s, c, res = fit_exponent([(n, 1.0 / n) for n in (2, 4, 8, 16)])
    assert s == pytest.approx(-1.0, abs=1e-12) and res < 1e-12
    s, c, _ = fit_exponent([(n, 3.0 * n**-2.0) for n in (3, 9, 27)])
    assert s == pytest.approx(-2.0, abs=1e-12) and math.exp(c) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        fit_exponent([(1, 1.0), (2, 0.0), (3, 1.0)])


@given(st.floats(-4, 4), st.floats(0.01, 100))
def test_fit_exponent_recovers_exponent(k, a):
    s, _, _ = fit_exponent([(n, a * n**k) for n in (2.0, 5.0, 11.0, 50.0)])
    assert s == pytest.approx(k, abs=1e-12)


def test_ratio_diagnostic():
    series = [(n, 1.0 / n) for n in (1, 2, 4)]
    assert ratio_diagnostic(series, lambda n: 1.0 / n) == pytest.approx((1.0, 1.0))
    assert ratio_diagnostic(series, lambda n: 2.0 / n) == pytest.approx((0.5, 0.5))


def test_near_diagonal_flatness():
    srw = lazy_srw(Z)
    rep = near_diagonal_flatness(srw, 64, 0.5, lambda n: math.sqrt(n))
    assert 0.2 <= rep.min_ratio <= 1.0
    assert near_diagonal_flatness(srw, 64, 0.0, lambda n: math.sqrt(n)).min_ratio == 1.0
    nu = build_nu_alpha(Z2, 1.0, 32)
    rep = near_diagonal_flatness(nu, 8, 1.0, ScalingFunction.power(1.0), threshold=0.5)
    assert rep.min_ratio <= 1.0 and rep.checked > 1


def test_pseudo_poincare_trivial_cases():
    nu = build_nu_alpha(Z2, 2.0, 16)
    rho = ScalingFunction.power(2.0)
    f = {(x, y): float(y) for x in range(-5, 6) for y in range(-5, 6)}
    assert pseudo_poincare_ratio(nu, f, (0, 0), rho).ratio == 0.0
    # f depends on the second coordinate only: translating along e1 changes nothing inside
    # the box except at the two x-faces
    strip = {(x, y): float(y) for x in range(-200, 201) for y in range(-2, 3)}
    g = pseudo_poincare_ratio(nu, strip, (1, 0), rho)
    g2 = pseudo_poincare_ratio(nu, strip, (0, 1), rho)
    assert g.numerator < g2.numerator


@given(st.floats(0.1, 50.0))
def test_pseudo_poincare_scale_invariant(c):
    nu = build_nu_alpha(Z, 2.0, 64)
    rho = ScalingFunction.power(2.0)
    f = ball_indicator(Z, 8)
    a = pseudo_poincare_ratio(nu, f, (3,), rho)
    b = pseudo_poincare_ratio(nu, {k: c * v for k, v in f.items()}, (3,), rho)
    assert b.ratio == pytest.approx(a.ratio, rel=1e-9)


def test_pseudo_poincare_matches_direct_sum():
    nu = build_nu_alpha(Z, 2.0, 64)
    f = ball_indicator(Z, 8)
    res = pseudo_poincare_ratio(nu, f, (1,), ScalingFunction.power(2.0))
    num = sum((f.get((x + 1,), 0.0) - f.get((x,), 0.0)) ** 2 for x in range(-100, 100))
    energy = 0.5 * sum((f.get((x,), 0.0) - f.get((y,), 0.0)) ** 2 * nu.mass((y - x,))
                       for x in range(-90, 91) for y in range(-90, 91))
    assert res.numerator == pytest.approx(num)
    assert res.energy == pytest.approx(energy, rel=1e-6)
    assert res.ratio_lower <= res.ratio


def test_pseudo_poincare_bounded_across_scales():
    nu = build_nu_alpha(Z, 2.0, 4096)
    rho = ScalingFunction.sqrt_log()
    ratios = []
    for L in (8, 16, 32, 64):
        for f in (ball_indicator(Z, L), coordinate_function(Z, L), random_coloring(Z, L, seed=L)):
            ratios.append(pseudo_poincare_ratio(nu, f, (L // 2,), rho).ratio)
    assert max(ratios) < 50


def test_fit_on_diagonal_power_law():
    m, (slope, A) = fit_on_diagonal(lazy_srw(Z), [16, 32, 64, 128])
    assert slope == pytest.approx(-0.5, abs=0.05)
    assert m(64) == pytest.approx(A * 64**slope)


def test_davies_report_structure():
    R = 1 << 10
    nu = build_nu_alpha(Z, 1.0, R)
    B = ConvolutionBudget(R)
    m, _ = fit_on_diagonal(nu, [2, 4, 8, 16], B)
    rep = bound_check_davies(nu, 32, [4, 8], [0, 32, 64], m, B)
    assert len(rep.rows) == 6
    assert rep.C == max(r["ratio"] for r in rep.rows)
    # at x = e the shape reduces to e^{4 delta t} m(t)
    for r in rep.rows:
        if r["x_norm"] == 0:
            assert r["shape"] == pytest.approx(math.exp(4 * rep.meta["delta_R"] * r["t"]) * m(r["t"]))
    # once t exceeds R^2 / G(R) the spatial factor is at least one
    t_big = 32**2 / rep.meta["G_R"] * 1.01
    assert (t_big * rep.meta["G_R"] / 32**2) ** (64 / 96) >= 1


def test_offdiagonal_reports(tmp_path):
    R = 1 << 11
    nu = build_nu_alpha(Z, 1.0, R)
    B = ConvolutionBudget(R)
    m, _ = fit_on_diagonal(nu, [2, 4, 8, 16, 32], B)
    rep = bound_check_offdiagonal(nu, [8, 32], [1, 64, 256], 1.0, 1.0, "up1", m, B)
    assert rep.C >= max(rep.C_by_t.values()) - 1e-15
    assert 0 < rep.meta["C_equivalent_min"] <= rep.meta["C_equivalent"]
    small = [r for r in rep.rows if r["x_norm"] == 1]
    assert all(r["shape"] == pytest.approx(m(r["t"])) for r in small)
    rep.to_csv(tmp_path / "b.csv")
    assert "slack" in (tmp_path / "b.csv").read_text()
    nu2 = build_nu_alpha(Z, 2.0, R)
    m2, _ = fit_on_diagonal(nu2, [2, 4, 8, 16, 32], B)
    rep2 = bound_check_offdiagonal(nu2, [8, 32], [64, 256], 2.0, 1.0, "up2", m2, B)
    assert "C_gamma" in rep2.meta
    with pytest.raises(ValueError):
        bound_check_offdiagonal(nu, [8], [64], 2.0, 1.0, "up1", m, B)
