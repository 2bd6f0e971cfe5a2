"""Acceptance suites with pinned tolerances.

Each criterion function returns a list of :class:`Verdict`; suites group
criteria under the names accepted by ``walklab verify``. The pytest
acceptance module calls the same functions.
"""
from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = ["TOL", "Verdict", "Suite", "SUITES", "CRITERIA", "criterion", "run_suite"]

# Pinned tolerances, one entry per check.
TOL = {
    "axiom_triples": 10_000,
    "oracle_atom_abs": 1e-12,
    "wreath_se": 4.0,
    "wreath_trials": 100_000,
    "nu1_slope": (-1.1, -0.9),
    "nu1_ratio": 3.0,
    "bracket_rel": 0.05,
    "nu2_z1_ratio": 3.0,
    "nu2_z2_ratio": 4.0,
    "mu_sa_critical_ratio": 4.0,
    "truncation_band": 2.0,
    "meyer_se": 4.0,
    "meyer_trials": 100_000,
    "scaling_band": 1.5,
    "mu_sa_slope_halfwidth": 0.15,
    "bound_spread": 3.0,
    "wreath_slope": (0.25, 0.45),
    "wreath_slope_trials": 100_000,
}

DEFAULT_SEED = 20240611


@dataclass
class Verdict:
    criterion: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"criterion {self.criterion:2d} [{tag}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(crit: int, name: str, fn: Callable[[], tuple[bool, str]]) -> Verdict:
    t0 = time.perf_counter()
    ok, detail = fn()
    return Verdict(crit, name, bool(ok), detail, time.perf_counter() - t0)


def _spread(vals) -> float:
    vals = list(vals)
    return max(vals) / min(vals)


# -- criterion 1 ----------------------------------------------------------------------

def catalog_groups():
    from .groups import cyclic_lamp, heisenberg, lattice, wreath
    return [lattice(1), lattice(2), lattice(3), heisenberg(), cyclic_lamp(5), wreath(2, 1), wreath(3, 2)]


def check_group_axioms(seed: int = DEFAULT_SEED, triples: int | None = None) -> Verdict:
    triples = triples or TOL["axiom_triples"]

    def body():
        bad = []
        rng = np.random.default_rng(seed)
        for G in catalog_groups():
            e = G.identity
            mul, inv = G.multiply, G.inverse
            for _ in range(triples):
                a, b, c = (G.random_element(rng) for _ in range(3))
                if (mul(mul(a, b), c) != mul(a, mul(b, c)) or mul(a, e) != a or mul(e, a) != a
                        or mul(a, inv(a)) != e or mul(inv(a), a) != e):
                    bad.append(repr(G))
                    break
        return not bad, f"{triples} triples on {len(catalog_groups())} groups; failures: {bad or 'none'}"

    return _timed(1, "group axioms", body)


def _atom_dict(p) -> dict:
    return dict(p.items())


def check_power_oracle(n: int = 8) -> Verdict:
    from .convolution import convolution_power, convolve
    from .groups import heisenberg, lattice, wreath, cyclic_lamp
    from .measures import build_mu_sa, build_nu_alpha, build_sws, lazy_srw, uniform_measure

    def body():
        cases = {
            "nu_1 on Z": build_nu_alpha(lattice(1), 1.0, 64),
            "mu_sa (1,1.5) on Z^2": build_mu_sa(lattice(2), (1.0, 1.5), 16),
            "lazy SRW on H3": lazy_srw(heisenberg()),
            "sws on Z2 wr Z": build_sws(uniform_measure(cyclic_lamp(2), [0, 1]), lazy_srw(lattice(1)),
                                        wreath(2, 1)),
        }
        worst = 0.0
        for nu in cases.values():
            fast = _atom_dict(convolution_power(nu, n))
            seq = nu
            for _ in range(n - 1):
                seq = convolve(seq, nu)
            slow = _atom_dict(seq)
            for g in set(fast) | set(slow):
                worst = max(worst, abs(fast.get(g, 0.0) - slow.get(g, 0.0)))
        return worst <= TOL["oracle_atom_abs"], f"doubling vs sequential at n={n}: max atom gap {worst:.2e}"

    return _timed(1, "convolution oracle", body)


def check_wreath_oracle(seed: int = DEFAULT_SEED, threads: int = 1, n: int = 10) -> Verdict:
    from .convolution import convolution_power
    from .groups import cyclic_lamp, lattice, wreath
    from .measures import build_sws, lazy_srw, uniform_measure
    from .montecarlo import WalkConfig, wreath_return_mc

    def body():
        W = wreath(2, 1)
        mu = lazy_srw(lattice(1))
        q = build_sws(uniform_measure(cyclic_lamp(2), [0, 1]), mu, W)
        exact = convolution_power(q, n).mass(W.identity)
        est = wreath_return_mc(WalkConfig(n, TOL["wreath_trials"], seed, mu, threads=threads),
                               lambda x: np.where(x > 0, math.log(2.0), 0.0))["l_star"]
        z = abs(est.value - exact) / est.se
        return z <= TOL["wreath_se"], f"q^({n})(e) exact {exact:.6f}, MC {est.value:.6f} ({z:.2f} SE)"

    return _timed(1, "wreath MC vs exact", body)


# -- criteria 2-4, 8: return series ----------------------------------------------------

def _series_report(rows, model):
    vals = [(r.n, r.value) for r in rows]
    ratio = _spread(v * model(n) for n, v in vals)
    width = max((r.upper - r.lower) / r.value for r in rows)
    return ratio, width


def check_nu1_z1() -> Verdict:
    from .analysis import fit_exponent
    from .convolution import ConvolutionBudget, return_series
    from .groups import lattice
    from .measures import build_nu_alpha

    def body():
        R = 1 << 16
        nu = build_nu_alpha(lattice(1), 1.0, R)
        rows = return_series(nu, [2**k for k in range(4, 13)], ConvolutionBudget(R))
        slope = fit_exponent([(r.n, r.value) for r in rows])[0]
        ratio, width = _series_report(rows, lambda n: n)
        lo, hi = TOL["nu1_slope"]
        ok = lo <= slope <= hi and ratio <= TOL["nu1_ratio"] and width < TOL["bracket_rel"]
        return ok, f"slope {slope:.4f}, max/min of n*nu^(n)(0) {ratio:.3f}, widest bracket {width:.2%}"

    return _timed(2, "nu_1 on Z", body)


def check_nu2(d: int) -> Verdict:
    from .convolution import ConvolutionBudget, return_series
    from .groups import lattice
    from .measures import build_nu_alpha

    def body():
        R = (1 << 15) if d == 1 else 128
        kmax = 12 if d == 1 else 9
        nu = build_nu_alpha(lattice(d), 2.0, R)
        rows = return_series(nu, [2**k for k in range(6, kmax + 1)], ConvolutionBudget(R))
        ratio, width = _series_report(rows, lambda n: (n * math.log(n)) ** (d / 2))
        tol = TOL["nu2_z1_ratio"] if d == 1 else TOL["nu2_z2_ratio"]
        return ratio <= tol, f"max/min of nu_2^(n)(0)(n log n)^{d}/2 = {ratio:.3f}, widest bracket {width:.2%}"

    return _timed(3, f"nu_2 on Z^{d}", body)


def check_mu_sa_critical() -> Verdict:
    from .convolution import axis_return_series

    def body():
        rows = axis_return_series((2.0, 2.0), [2**k for k in range(6, 10)])
        ratio, width = _series_report(rows, lambda n: n * math.log(n))
        return ratio <= TOL["mu_sa_critical_ratio"], f"max/min of mu^(n)(e) n log n = {ratio:.3f}"

    return _timed(4, "mu_sa a=(2,2) on Z^2", body)


def check_mu_sa_exponent() -> Verdict:
    from .analysis import fit_exponent
    from .convolution import axis_return_series
    from .geometry import NormWeights, weighted_lattice_volume

    def body():
        a = (1.0, 1.5)
        rows = axis_return_series(a, [2**k for k in range(5, 11)])
        slope = fit_exponent([(r.n, r.value) for r in rows])[0]
        D = sum(1 / x for x in a)
        vol_slope = fit_exponent([(r, weighted_lattice_volume(NormWeights(a), r)) for r in (256, 512, 1024, 2048)])[0]
        width = max((r.upper - r.lower) / r.value for r in rows)
        ok = abs(slope + D) <= TOL["mu_sa_slope_halfwidth"]
        return ok, (f"slope {slope:.4f} vs -{D:.4f}; weighted volume slope / alpha_* "
                    f"{vol_slope / NormWeights(a).alpha_star:.4f}; "
                    f"widest bracket {width:.2%}")

    return _timed(8, "mu_sa a=(1,1.5) exponent", body)


# -- criterion 5 ----------------------------------------------------------------------

def check_truncation() -> Verdict:
    from .groups import lattice
    from .measures import build_nu_alpha, second_moment_truncated, truncate_measure

    def body():
        Z = lattice(1)
        Rs = [2**k for k in range(3, 11)]
        parts, ok = [], True
        for alpha in (1.0, 1.5):
            nu = build_nu_alpha(Z, alpha, 1 << 12)
            b1 = _spread(truncate_measure(nu, R)[1] * R**alpha for R in Rs)
            b2 = _spread(second_moment_truncated(nu, R) * R ** (alpha - 2) for R in Rs)
            ok &= b1 <= TOL["truncation_band"] and b2 <= TOL["truncation_band"]
            parts.append(f"alpha={alpha:g}: delta band {b1:.3f}, G band {b2:.3f}")
        nu = build_nu_alpha(Z, 2.0, 1 << 12)
        b3 = _spread(second_moment_truncated(nu, R) / math.log(R) for R in Rs)
        ok &= b3 <= TOL["truncation_band"]
        parts.append(f"alpha=2: G/log R band {b3:.3f}")
        return ok, "; ".join(parts)

    return _timed(5, "tail and truncated second moment", body)


# -- criterion 6 ----------------------------------------------------------------------

def check_meyer(seed: int = DEFAULT_SEED, threads: int = 1) -> Verdict:
    from .groups import lattice
    from .measures import build_nu_alpha, truncate_measure
    from .montecarlo import WalkConfig, meyer_discrepancy

    def body():
        nu = build_nu_alpha(lattice(1), 1.0, 1 << 14)
        ok, parts = True, []
        for n in (128, 512):
            for R in (32, 128):
                e = meyer_discrepancy(WalkConfig(n, TOL["meyer_trials"], seed, nu, threads=threads), R)
                delta = truncate_measure(nu, R)[1]
                ok &= e.value <= n * delta + TOL["meyer_se"] * e.se
                parts.append(f"(n={n},R={R}) {e.value:.4f} vs n*delta {n * delta:.4f}")
        return ok, "; ".join(parts)

    return _timed(6, "Meyer big-jump bound", body)


# -- criterion 7 ----------------------------------------------------------------------

def check_scaling() -> Verdict:
    from .analysis import scaling_r
    from .measures import PhiFunction

    def body():
        ts = np.logspace(2, 6, 41)
        cases = [
            (PhiFunction(1.0), lambda t: t),
            (PhiFunction(1.5), lambda t: t ** (1 / 1.5)),
            (PhiFunction(2.0), lambda t: math.sqrt(t * math.log(t))),
            (PhiFunction(2.0, 1.0), lambda t: math.sqrt(t * math.log(math.log(t)))),
        ]
        ok, parts = True, []
        for phi, model in cases:
            s = _spread(scaling_r(phi, float(t)) / model(float(t)) for t in ts)
            ok &= s <= TOL["scaling_band"]
            parts.append(f"{phi.label()}: {s:.3f}")
        return ok, "r/model max/min " + ", ".join(parts)

    return _timed(7, "scaling function examples", body)


# -- criterion 9 ----------------------------------------------------------------------

def check_bounds() -> list[Verdict]:
    from .analysis import bound_check_davies, bound_check_offdiagonal, fit_on_diagonal
    from .convolution import ConvolutionBudget
    from .groups import lattice
    from .measures import build_nu_alpha

    R = 1 << 12
    nu = build_nu_alpha(lattice(1), 1.0, R)
    B = ConvolutionBudget(R)
    m, (slope, A) = fit_on_diagonal(nu, [2, 4, 8, 16, 32, 64], B)

    def davies():
        rep = bound_check_davies(nu, 32, [4, 8, 16], [32, 64, 96], m, B)
        with_e = bound_check_davies(nu, 32, [4, 8, 16], [0, 32, 64, 96], m, B)
        return rep.spread <= TOL["bound_spread"], (
            f"per-t C {', '.join(f'{c:.3g}' for c in rep.C_by_t.values())}, spread {rep.spread:.2f} "
            f"(grid with x=e added: {with_e.spread:.2f})")

    def up1():
        rep = bound_check_offdiagonal(nu, [8, 32], [64, 256], 1.0, 1.0, "up1", m, B)
        return rep.spread <= TOL["bound_spread"], (
            f"per-t C {', '.join(f'{c:.3g}' for c in rep.C_by_t.values())}, spread {rep.spread:.2f}, "
            f"equivalent form C {rep.meta['C_equivalent']:.3g}")

    return [_timed(9, "Davies bound stability", davies), _timed(9, "up1 bound stability", up1)]


# -- criterion 10 ---------------------------------------------------------------------

def check_wreath_slope(seed: int = DEFAULT_SEED, threads: int = 1) -> Verdict:
    from .analysis import fit_exponent
    from .groups import lattice
    from .measures import lazy_srw
    from .montecarlo import WalkConfig, range_return_mc

    def body():
        cps = [2**k for k in range(8, 15)]
        cfg = WalkConfig(max(cps), TOL["wreath_slope_trials"], seed, lazy_srw(lattice(1)), threads=threads)
        est = range_return_mc(cfg, cps)
        if any(e.value <= 0 for e in est):
            return False, "an estimate is zero; increase trials"
        slope = fit_exponent([(e.meta["n"], -math.log(e.value)) for e in est])[0]
        lo, hi = TOL["wreath_slope"]
        rse = max(e.se / e.value for e in est)
        return lo <= slope <= hi, f"slope of log(-log q) {slope:.4f} (target 1/3); worst relative SE {rse:.2f}"

    return _timed(10, "lamplighter lower exponent", body)


# -- criterion 11 ---------------------------------------------------------------------

DETERMINISM_CONFIG = """\
[experiment]
kind = meyer
seed = 11

[group]
kind = lattice
d = 1

[measure]
family = nu_alpha
alpha = 1.0
radius = 4096

[meyer]
n = 64, 256
R = 16, 64
trials = 20000
"""


def check_determinism(threads: tuple[int, int] = (1, 3)) -> Verdict:
    from .cli import run

    def body():
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            cfg = tmp / "det.ini"
            cfg.write_text(DETERMINISM_CONFIG)
            outs = []
            for i, th in enumerate((threads[0], threads[0], threads[1])):
                outs.append(run(cfg, out=tmp / f"run{i}", threads=th))
            names = [sorted(p.name for p in o) for o in outs]
            same = names[0] == names[1] == names[2] and all(
                filecmp.cmp(a, b, shallow=False) for o in outs[1:] for a, b in zip(sorted(outs[0]), sorted(o)))
            return same, f"{len(outs[0])} files identical across repeats and threads {threads}"

    return _timed(11, "byte-identical reruns", body)


# -- registry -------------------------------------------------------------------------

@dataclass
class Suite:
    doc: str
    checks: tuple[Callable[..., Verdict | list[Verdict]], ...]


def _mc(fn):
    def wrapped(threads=1, seed=None):
        return fn(seed=DEFAULT_SEED if seed is None else seed, threads=threads)
    return wrapped


def _plain(fn, *args):
    def wrapped(threads=1, seed=None):
        return fn(*args)
    return wrapped


def _axioms(threads=1, seed=None):
    return check_group_axioms(seed=DEFAULT_SEED if seed is None else seed)


CRITERIA: dict[int, tuple] = {
    1: (_axioms, _plain(check_power_oracle), _mc(check_wreath_oracle)),
    2: (_plain(check_nu1_z1),),
    3: (_plain(check_nu2, 1), _plain(check_nu2, 2)),
    4: (_plain(check_mu_sa_critical),),
    5: (_plain(check_truncation),),
    6: (_mc(check_meyer),),
    7: (_plain(check_scaling),),
    8: (_plain(check_mu_sa_exponent),),
    9: (_plain(check_bounds),),
    10: (_mc(check_wreath_slope),),
    11: (_plain(check_determinism),),
}

SUITES: dict[str, Suite] = {
    "group-axioms": Suite("group laws on random triples", CRITERIA[1][:1]),
    "oracle-equivalence": Suite("doubling vs sequential; wreath MC vs exact", CRITERIA[1][1:]),
    "nu1-z1": Suite("nu_1 on Z return exponent", CRITERIA[2]),
    "nu2-z1": Suite("nu_2 on Z, (n log n)^(-1/2)", CRITERIA[3][:1]),
    "nu2-z2": Suite("nu_2 on Z^2, (n log n)^(-1)", CRITERIA[3][1:]),
    "mu-sa-critical": Suite("mu_sa a=(2,2) on Z^2", CRITERIA[4]),
    "truncation": Suite("delta_R and G(R) scaling bands", CRITERIA[5]),
    "meyer": Suite("big-jump probability vs n delta_R", CRITERIA[6]),
    "scaling": Suite("r(t) against closed-form models", CRITERIA[7]),
    "mu-sa-exponent": Suite("mu_sa a=(1,1.5) return exponent", CRITERIA[8]),
    "bounds": Suite("Davies and up1 calibration stability", CRITERIA[9]),
    "wreath": Suite("lamplighter log(-log q) slope", CRITERIA[10]),
    "determinism": Suite("byte-identical CSVs across thread counts", CRITERIA[11]),
}
SUITES["all"] = Suite("every criterion", tuple(c for cs in CRITERIA.values() for c in cs))


def _flatten(res) -> list[Verdict]:
    return list(res) if isinstance(res, list) else [res]


def criterion(k: int, threads: int = 1, seed: int | None = None) -> list[Verdict]:
    """All verdicts of criterion ``k``."""
    out: list[Verdict] = []
    for fn in CRITERIA[k]:
        out += _flatten(fn(threads=threads, seed=seed))
    return out


def run_suite(name: str, threads: int = 1, seed: int | None = None, echo: bool = True) -> bool:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}")
    ok = True
    for fn in SUITES[name].checks:
        for v in _flatten(fn(threads=threads, seed=seed)):
            ok &= v.passed
            if echo:
                print(v.line(), flush=True)
    if echo:
        print(f"suite {name}: {'PASS' if ok else 'FAIL'}")
    return ok
