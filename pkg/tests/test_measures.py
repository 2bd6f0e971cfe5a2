import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from walklab.geometry import NormWeights, enumerate_ball, weighted_norm_table
from walklab.groups import cyclic_lamp, embed_base, embed_lamp, heisenberg, lattice, wreath
from walklab.measures import (PhiFunction, SparseMeasure, build_mu_sa, build_nu_alpha, build_nu_phi,
                              build_nu_sa_beta, build_sws, lazy_srw, second_moment_truncated, tail_mass,
                              truncate_measure, uniform_measure)

Z, Z2 = lattice(1), lattice(2)


def test_phi_catalog():
    phi = PhiFunction(2.0, 1.0)
    t = np.array([0.0, 1.0, 10.0])
    assert np.allclose(phi(t), (1 + t) ** 2 * np.log(math.e + t))
    assert (np.diff(phi(np.linspace(0, 100, 50))) >= 0).all()
    assert phi(0.0) >= 1


def test_nu2_on_z_masses_follow_formula():
    nu = build_nu_alpha(Z, 2.0, 512)
    c = nu.mass((0,))
    for m in (1, 2, 7, 100):
        expect = c / ((1 + m) ** 2 * (2 * m + 1))
        assert nu.mass((m,)) == pytest.approx(expect, rel=1e-12)
        assert nu.mass((-m,)) == nu.mass((m,))
    assert nu.is_symmetric()


def test_nu2_normalizer_against_long_sum():
    # direct summation to 10^6 plus an integral remainder
    nu = build_nu_alpha(Z, 2.0, 10_000)
    m = np.arange(1, 10**6 + 1, dtype=float)
    s = 1.0 + 2.0 * math.fsum(1.0 / ((1 + m) ** 2 * (2 * m + 1)))
    s += 2.0 * 0.25 / (10**6 + 1.5) ** 2  # integral of 1/(2x^3) beyond the cut
    assert nu.mass((0,)) == pytest.approx(1.0 / s, rel=1e-9)


def test_mass_bracket_contains_one():
    for nu in (build_nu_alpha(Z, 1.0, 1024), build_nu_alpha(Z2, 1.5, 64), build_mu_sa(Z2, (1.0, 1.5))):
        lo, hi = nu.mass_bracket()
        assert lo <= 1.0 + 1e-12 and hi >= 1.0 - 1e-12
        assert 0 <= nu.tail_lo <= nu.tail_hi


def test_kappa_for_cauchy_exponent():
    mu = build_mu_sa(Z, (1.0,))
    kappa = mu.meta["kappa"][0]
    assert kappa == pytest.approx(1.0 / (math.pi**2 / 3 - 1), rel=1e-14)
    # partial sums over 10^8 terms plus the integral remainder
    total = 0.0
    step = 10**7
    for a in range(1, 10**8 + 1, step):
        m = np.arange(a, a + step, dtype=float)
        total += float(np.sum(1.0 / (1.0 + m) ** 2))
    total += 1.0 / (10**8 + 1.5)
    assert kappa == pytest.approx(1.0 / (1.0 + 2.0 * total), rel=1e-12)


def test_mu_sa_structure():
    mu = build_mu_sa(Z2, (1.0, 1.0), M=64)
    assert mu.mass((1, 0)) == mu.mass((-1, 0)) == mu.mass((0, 1))
    kappas = mu.meta["kappa"]
    assert mu.mass((0, 0)) >= sum(kappas) / 2
    assert mu.mass((1, 1)) == 0.0


def test_mu_sa_on_heisenberg_uses_generator_powers():
    mu = build_mu_sa(heisenberg(), (1.0, 1.5), M=32)
    assert mu.mass((5, 0, 0)) > 0 and mu.mass((0, -7, 0)) > 0
    assert mu.mass((1, 1, 0)) == 0
    assert mu.is_symmetric()


def test_nu_sa_beta_constant_on_levels():
    tab = weighted_norm_table(Z2, NormWeights((1.0, 2.0)), 20.0)
    nu = build_nu_sa_beta(tab, 1.0)
    assert nu.mass((4, 3)) / nu.mass((9, 0)) == pytest.approx(1.0, rel=1e-12)
    nu2 = build_nu_sa_beta((NormWeights((1.0, 2.0)), 20.0), 1.0)
    assert nu2.mass((4, 3)) == pytest.approx(nu.mass((4, 3)), rel=1e-9)


def test_nu_phi_on_heisenberg_ball():
    ball = enumerate_ball(heisenberg(), 6)
    nu = build_nu_phi(ball, PhiFunction(1.0), volume_ext=lambda r: 1 + 0.5 * np.asarray(r) ** 4)
    assert nu.mass((0, 0, 1)) == pytest.approx(nu.mass((0, 0, -1)))
    lo, hi = nu.mass_bracket()
    assert lo <= 1.0 <= hi


def test_sws_examples():
    W = wreath(2, 1)
    mu = lazy_srw(Z)
    delta_k = uniform_measure(cyclic_lamp(2), [0])
    q = build_sws(delta_k, mu, W)
    assert q.mass(embed_base(W, (1,))) == pytest.approx(0.25)
    assert q.mass(W.identity) == pytest.approx(0.5)
    eta = uniform_measure(cyclic_lamp(2), [0, 1])
    q = build_sws(eta, uniform_measure(Z, [(0,)]), W)
    assert q.mass(W.identity) == pytest.approx(0.5)
    assert q.mass(embed_lamp(W, 1)) == pytest.approx(0.5)
    # brute force: identity arises from (k1, 0, k2) with k1 + k2 = 0
    q = build_sws(eta, mu, W)
    assert q.mass(W.identity) == pytest.approx(2 * 0.25 * 0.5)
    assert q.total() == pytest.approx(1.0)


def test_truncation_edge_cases():
    nu = build_nu_alpha(Z, 1.0, 256)
    nu0, d0 = truncate_measure(nu, 0)
    assert nu0.support_size() == 1
    assert d0 == pytest.approx(1.0 - nu.mass((0,)), abs=1e-8)
    assert second_moment_truncated(nu, 0) == 0.0
    srw = lazy_srw(Z)
    assert truncate_measure(srw, 5)[1] == 0.0
    with pytest.raises(ValueError):
        truncate_measure(nu, 512)


def test_truncation_monotone():
    nu = build_nu_alpha(Z, 1.0, 1024)
    Rs = [1, 2, 4, 16, 64, 256, 1024]
    deltas = [tail_mass(nu, R) for R in Rs]
    Gs = [second_moment_truncated(nu, R) for R in Rs]
    assert all(a >= b for a, b in zip(deltas, deltas[1:]))
    assert all(a <= b for a, b in zip(Gs, Gs[1:]))


def test_tail_bracket_brackets_exact_tail():
    # the exact tail beyond R for nu_1 on Z, computed from a larger build
    small = build_nu_alpha(Z, 1.0, 256)
    big = build_nu_alpha(Z, 1.0, 1 << 16)
    c_s, c_b = small.mass((0,)), big.mass((0,))
    beyond = tail_mass(big, 256) * c_s / c_b
    assert small.tail_lo - 1e-9 <= beyond <= small.tail_hi + 1e-9


def test_csv_round_trip(tmp_path):
    nu = build_mu_sa(Z, (1.0,), M=8)
    p = tmp_path / "mu.csv"
    nu.to_csv(p)
    lines = [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]
    assert lines[0] == "element_key,mass"
    assert len(lines) == 1 + nu.support_size()


@given(st.floats(0.3, 2.0), st.integers(8, 64))
def test_nu_alpha_symmetric_probability(alpha, R):
    nu = build_nu_alpha(Z, alpha, R)
    lo, hi = nu.mass_bracket()
    assert lo <= 1 + 1e-12 and hi >= 1 - 1e-12
    assert nu.is_symmetric()
    assert (np.diff([nu.mass((m,)) for m in range(R + 1)]) < 0).all()


def test_sparse_measure_delta():
    d = SparseMeasure.delta(Z2, build_nu_alpha(Z2, 1.0, 4).norm)
    assert d.mass((0, 0)) == 1.0 and d.support_size() == 1
