import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from walklab.analysis import ScalingFunction
from walklab.convolution import return_series
from walklab.groups import heisenberg, lattice
from walklab.measures import (SparseMeasure, build_mu_sa, build_nu_alpha, lazy_srw, truncate_measure,
                              uniform_measure)
from walklab.montecarlo import (AliasTable, Sampler, WalkConfig, confinement_probability, mean_estimate,
                                meyer_discrepancy, range_return_mc, simulate_walk, strong_control_probe,
                                wilson_interval, wreath_return_mc)
from walklab.rng import mix64, trial_keys, uniforms

Z = lattice(1)


# -- counter-based streams ---------------------------------------------------------

def test_uniforms_are_pure_functions_of_keys():
    keys = trial_keys(7, np.arange(100))
    a = uniforms(keys, np.arange(50), 3)
    b = uniforms(keys[::-1], np.arange(50), 3)[::-1]
    assert np.array_equal(a, b)
    assert np.array_equal(a[:, 10:20], uniforms(keys, np.arange(10, 20), 3))
    assert ((a > 0) & (a < 1)).all()
    assert not np.array_equal(a, uniforms(keys, np.arange(50), 4))


def test_uniform_moments():
    u = uniforms(trial_keys(1, np.arange(2000)), np.arange(100)).ravel()
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / u.size)
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 4 / math.sqrt(u.size)


@given(st.integers(0, 2**64 - 1))
def test_mix64_is_injective_on_samples(x):
    xs = np.array([x, x ^ 1, (x + 1) % 2**64], dtype=np.uint64)
    assert len(set(mix64(xs).tolist())) == len(set(xs.tolist()))


# -- estimates -----------------------------------------------------------------------

def test_wilson_interval_edges():
    lo, hi = wilson_interval(0, 100)
    assert lo < 1e-15 and 0 < hi < 0.05
    lo, hi = wilson_interval(100, 100)
    assert hi == 1.0 and lo > 0.95


def test_mean_estimate_interval():
    e = mean_estimate(np.array([0.0, 1.0] * 500), seed=3)
    assert e.value == 0.5 and e.ci_lo < 0.5 < e.ci_hi and e.trials == 1000
    assert e.within_se(0.5 + 3 * e.se) and not e.within_se(0.5 + 5 * e.se)


# -- sampling ------------------------------------------------------------------------

@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=12).filter(lambda w: sum(w) > 0))
def test_alias_table_reproduces_weights(w):
    t = AliasTable(np.array(w))
    u = (np.arange(20000) + 0.5) / 20000
    freq = np.bincount(t.draw(u), minlength=len(w)) / u.size
    assert np.allclose(freq, np.array(w) / sum(w), atol=len(w) / 20000 + 1e-12)


def test_delta_sampler_stays_put():
    d = SparseMeasure.delta(Z, lazy_srw(Z).norm)
    stats = list(simulate_walk(WalkConfig(20, 50, 1, d)))
    assert all(s.end == (0,) and s.sup_norm == 0 for s in stats)


def test_mu_sa_sampler_frequencies():
    mu = build_mu_sa(Z, (1.0,), M=4096)
    s = Sampler(mu)
    x = s.sample(trial_keys(5, np.arange(2000)), np.arange(500))[..., 0].ravel()
    n = x.size
    for m in range(-6, 7):
        p = mu.mass((m,))
        assert abs(np.mean(x == m) - p) <= 4 * math.sqrt(p * (1 - p) / n)
    p_tail = mu.tail_hi
    assert abs(np.mean(np.abs(x) > 4096) - p_tail) <= 4 * math.sqrt(p_tail / n) + 1e-6
    assert abs(x.clip(-10**4, 10**4).mean()) <= 4 * x.clip(-10**4, 10**4).std() / math.sqrt(n)


def test_pareto_tail_draws_follow_the_power_law():
    # the tail of a tiny table is sampled by rejection; compare P(|X| > 2M | |X| > M)
    mu = build_mu_sa(Z, (1.0,), M=4)
    x = np.abs(Sampler(mu).sample(trial_keys(9, np.arange(4000)), np.arange(250))[..., 0].ravel())
    big = x[x > 4]
    tail = lambda m: sum((1 + k) ** -2.0 for k in range(m + 1, 200000)) + 1 / 200000.5
    expect = tail(8) / tail(4)
    got = np.mean(big > 8)
    assert abs(got - expect) <= 4 * math.sqrt(expect * (1 - expect) / big.size)


def test_sampler_rejects_large_tail():
    nu = build_nu_alpha(Z, 0.3, 16)
    with pytest.raises(ValueError):
        Sampler(nu)


def test_heisenberg_powers_in_closed_form():
    H = heisenberg(generators=[(1, 1, 0), (0, 1, 0)])
    mu = build_mu_sa(H, (1.0, 1.0), M=64)
    s = Sampler(mu)
    inc = s.sample(trial_keys(2, np.arange(200)), np.arange(5)).reshape(-1, 3)
    for v in inc[:200]:
        g = tuple(int(c) for c in v)
        assert mu.mass(g) > 0 or abs(g[0]) > 64 or abs(g[1]) > 64


# -- walks ---------------------------------------------------------------------------

def test_walk_statistics_invariants():
    stats = list(simulate_walk(WalkConfig(30, 200, 4, lazy_srw(Z)), local_times=True))
    for s in stats:
        assert sum(s.local_times.values()) == 31
        assert s.sup_norm >= s.end_norm >= 0
    zero = list(simulate_walk(WalkConfig(0, 5, 4, lazy_srw(Z))))
    assert all(s.end == (0,) and s.sup_norm == 0 for s in zero)


def test_walks_are_identical_across_thread_counts():
    nu = build_nu_alpha(Z, 1.0, 4096)
    a = [s.end for s in simulate_walk(WalkConfig(64, 3000, 8, nu, threads=1, chunk=500))]
    b = [s.end for s in simulate_walk(WalkConfig(64, 3000, 8, nu, threads=3, chunk=500))]
    assert a == b


def test_heisenberg_walk_positions():
    H = heisenberg()
    from walklab.montecarlo import _walk_chunk
    s = Sampler(lazy_srw(H))
    r = _walk_chunk(WalkConfig(12, 300, 6, s, norm=_Zero()), np.arange(300), keep_path=True)
    inc = s.sample(trial_keys(6, np.arange(300)), np.arange(12))
    for t in range(0, 300, 37):
        g = H.identity
        for k in range(12):
            g = H.multiply(g, tuple(int(v) for v in inc[t, k]))
        assert tuple(int(v) for v in r["end"][t]) == g


class _Zero:
    def on_coords(self, c):
        return np.zeros(c.shape[:-1])


def test_exact_return_probability_lazy_srw():
    cfg = WalkConfig(16, 200_000, 7, lazy_srw(Z))
    hits = np.mean([s.end == (0,) for s in simulate_walk(cfg)])
    exact = return_series(lazy_srw(Z), [16])[0].value
    assert abs(hits - exact) <= 4 * math.sqrt(exact * (1 - exact) / 200_000)


def test_confinement_monotone_and_trivial():
    nu = build_nu_alpha(Z, 1.0, 1 << 14)
    cfg = WalkConfig(256, 5000, 3, nu)
    vals = [confinement_probability(cfg, g, ScalingFunction.power(1.0)).value for g in (0.5, 1, 2, 4, 8)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    srw = uniform_measure(Z, [(-1,), (1,)])
    assert confinement_probability(WalkConfig(5, 1000, 1, srw), 0.1, lambda n: 1.0).value == 1.0


def test_confinement_reported_value_nu1():
    nu = build_nu_alpha(Z, 1.0, 1 << 16)
    e = confinement_probability(WalkConfig(1024, 10000, 12, nu), 8.0, lambda n: n)
    assert e.value < 0.2


def test_strong_control_probe():
    srw = lazy_srw(Z)
    assert strong_control_probe(WalkConfig(10, 500, 2, srw), tau=100.0, gamma2=2.0).value == 1.0
    e0 = strong_control_probe(WalkConfig(64, 20000, 2, srw), tau=16.0, gamma2=2.0)
    e1 = strong_control_probe(WalkConfig(64, 20000, 2, srw), tau=16.0, gamma2=2.0, start=(16,))
    assert e0.value >= e1.value - (e0.ci_hi - e0.ci_lo)
    # Markov chaining: P_e(A_2n) >= P_e(A_n) * min over ||x|| <= tau of P_x(A_n)
    halves = [strong_control_probe(WalkConfig(32, 20000, 4, srw), tau=16.0, gamma2=2.0, start=(x,))
              for x in (0, 8, -8, 16, -16)]
    worst = min(halves, key=lambda e: e.value)
    slack = 3 * max(h.ci_hi - h.ci_lo for h in halves)
    assert e0.value >= halves[0].value * worst.value - slack
    with pytest.raises(ValueError):
        strong_control_probe(WalkConfig(5, 10, 1, srw), tau=1.0, gamma2=2.0, start=(5,))


def test_meyer_matches_exact_big_jump_probability():
    nu = build_nu_alpha(Z, 1.0, 1 << 14)
    e = meyer_discrepancy(WalkConfig(128, 50_000, 5, nu), 64)
    delta = truncate_measure(nu, 64)[1]
    exact = 1 - (1 - delta) ** 128
    assert exact <= 128 * delta
    assert abs(e.value - exact) <= 4 * e.se
    assert meyer_discrepancy(WalkConfig(50, 1000, 5, lazy_srw(Z)), 5).value == 0.0


def test_wreath_functional_reduces_to_return_probability():
    cfg = WalkConfig(12, 20000, 4, lazy_srw(Z))
    zero = wreath_return_mc(cfg, lambda x: np.zeros_like(x))
    p = np.mean([s.end == (0,) for s in simulate_walk(cfg)])
    assert zero["l"].value == pytest.approx(p, abs=1e-15)


def test_wreath_variants_and_range_functional_agree():
    cfg = WalkConfig(10, 50_000, 3, lazy_srw(Z))
    F = lambda x: np.where(x > 0, math.log(2.0), 0.0)
    w = wreath_return_mc(cfg, F)
    r = range_return_mc(cfg, [10])[0]
    assert w["l"].value == pytest.approx(w["l_star"].value, abs=1e-15)
    assert w["l"].value == pytest.approx(r.value, abs=1e-15)


def test_wreath_input_validation():
    cfg = WalkConfig(4, 10, 1, lazy_srw(Z))
    with pytest.raises(TypeError):
        wreath_return_mc(cfg, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0], variants=("l_star",))
    with pytest.raises(ValueError):
        wreath_return_mc(cfg, lambda x: np.ones_like(x))
    with pytest.raises(ValueError):
        WalkConfig(4, 0, 1, lazy_srw(Z))


def test_exhaustive_wreath_functional_at_n10():
    # all 3^10 lazy paths, weighted exactly
    from itertools import product
    total = 0.0
    for steps in product((-1, 0, 1), repeat=10):
        w = 1.0
        pos, lo, hi = 0, 0, 0
        for s in steps:
            w *= 0.5 if s == 0 else 0.25
            pos += s
            lo, hi = min(lo, pos), max(hi, pos)
        if pos == 0:
            total += w * 2.0 ** -(hi - lo + 1)
    cfg = WalkConfig(10, 100_000, 17, lazy_srw(Z))
    est = range_return_mc(cfg, [10])[0]
    assert abs(est.value - total) <= 4 * est.se
