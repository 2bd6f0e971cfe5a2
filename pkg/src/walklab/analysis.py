"""Scaling functions, exponent fits and ratio diagnostics, pseudo-Poincare
ratios and calibration of heat-kernel upper bounds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy import integrate, optimize

from .convolution import ConvolutionBudget, convolution_power, heat_kernel_series
from .measures import PhiFunction, SparseMeasure, second_moment_truncated, truncate_measure

__all__ = [
    "DomainError",
    "ScalingFunction",
    "integral_psi",
    "scaling_r",
    "fit_exponent",
    "ratio_diagnostic",
    "FlatnessReport",
    "near_diagonal_flatness",
    "PoincareResult",
    "pseudo_poincare_ratio",
    "ball_indicator",
    "coordinate_function",
    "random_coloring",
    "fit_on_diagonal",
    "BoundReport",
    "bound_check_davies",
    "bound_check_offdiagonal",
]


class DomainError(ValueError):
    """Argument outside the range where the function is defined."""


# -- scaling functions ------------------------------------------------------------

def integral_psi(phi: PhiFunction | Callable, t: float) -> float:
    """``psi(t) = int_0^t s / phi(s) ds`` by adaptive quadrature on dyadic
    pieces (relative error well below 1e-8)."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    if t == 0:
        return 0.0

    def f(s):
        return s / float(phi(s))

    edges = [0.0, min(t, 1.0)]
    while edges[-1] < t:
        edges.append(min(t, 2.0 * edges[-1]))
    parts = [integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0]
             for a, b in zip(edges[:-1], edges[1:])]
    return math.fsum(parts)


def _rho_phi(phi, s: float) -> float:
    return s * s / integral_psi(phi, s)


def scaling_r(phi: PhiFunction | Callable, t: float, rtol: float = 1e-12) -> float:
    """Solve ``s**2 / psi(s) = t`` for ``s`` by bracketing and bisection.

    ``s**2/psi(s)`` decreases to ``2 phi(0)`` as ``s -> 0``, so ``t`` must exceed
    that limit.
    """
    t0 = 2.0 * float(phi(0.0))
    if not t > t0:
        raise DomainError(f"t={t} lies below the range of s^2/psi(s) (> {t0})")
    lo = 1e-6
    while _rho_phi(phi, lo) >= t:
        lo /= 10.0
        if lo < 1e-300:
            raise DomainError(f"cannot bracket t={t}")
    hi = max(1.0, math.sqrt(t))
    while _rho_phi(phi, hi) < t:
        hi *= 2.0
        if hi > 1e300:
            raise DomainError(f"cannot bracket t={t}")
    # bisection in log scale
    g = lambda u: _rho_phi(phi, math.exp(u)) - t
    u = optimize.brentq(g, math.log(lo), math.log(hi), xtol=1e-15, rtol=max(rtol, 4.5e-16), maxiter=500)
    return math.exp(u)


@dataclass(frozen=True)
class ScalingFunction:
    """A monotone scaling pair: ``r`` (time to space) and its inverse ``rho``.

    kinds: ``power`` with ``beta`` (``r(t) = t**(1/beta)``), ``sqrt_log``
    (``r(t) = (t log t)**0.5``, for ``t > 1``) and ``phi_derived`` (``r`` the
    inverse of ``s -> s**2/psi(s)``).
    """

    kind: str
    beta: float = 1.0
    phi: PhiFunction | None = None

    def __post_init__(self):
        if self.kind not in ("power", "sqrt_log", "phi_derived"):
            raise ValueError(f"unknown scaling kind {self.kind!r}")
        if self.kind == "power" and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.kind == "phi_derived" and self.phi is None:
            raise ValueError("phi_derived needs phi")

    @classmethod
    def power(cls, beta: float) -> "ScalingFunction":
        return cls("power", beta=beta)

    @classmethod
    def sqrt_log(cls) -> "ScalingFunction":
        return cls("sqrt_log")

    @classmethod
    def from_phi(cls, phi: PhiFunction) -> "ScalingFunction":
        return cls("phi_derived", phi=phi)

    def r(self, t: float) -> float:
        if self.kind == "power":
            return float(t) ** (1.0 / self.beta) if t > 0 else 0.0
        if self.kind == "sqrt_log":
            if t <= 1:
                raise DomainError("sqrt_log scaling needs t > 1")
            return math.sqrt(t * math.log(t))
        return scaling_r(self.phi, t)

    def rho(self, s: float) -> float:
        if s <= 0:
            return 0.0
        if self.kind == "power":
            return float(s) ** self.beta
        if self.kind == "phi_derived":
            return _rho_phi(self.phi, s)
        # invert t log t = s^2 on t > 1
        target = s * s
        hi = max(2.0, target)
        while hi * math.log(hi) < target:
            hi *= 2
        return optimize.brentq(lambda t: t * math.log(t) - target, 1.0, hi, xtol=1e-300, rtol=1e-15)

    __call__ = r


# -- fits --------------------------------------------------------------------------------

def fit_exponent(series: Iterable[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares ``log value = slope log n + intercept``; returns
    ``(slope, intercept, max_abs_residual)``."""
    pts = [(float(n), float(v)) for n, v in series]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if any(v <= 0 or n <= 0 for n, v in pts):
        raise ValueError("values and abscissae must be positive")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - (slope * x + icpt)
    return float(slope), float(icpt), float(np.abs(res).max())


def ratio_diagnostic(series: Iterable[tuple[float, float]], model: Callable[[float], float]) -> tuple[float, float]:
    """``(max, min)`` of ``value(n) / model(n)``."""
    r = []
    for n, v in series:
        m = float(model(n))
        if not (m > 0 and v > 0):
            raise ValueError("series and model must be positive")
        r.append(v / m)
    return max(r), min(r)


# -- near-diagonal flatness ------------------------------------------------------

@dataclass
class FlatnessReport:
    min_ratio: float
    radius: float
    offenders: list
    checked: int


def _radius(r_of_n, n):
    return float(r_of_n.r(n)) if hasattr(r_of_n, "r") else float(r_of_n(n))


def near_diagonal_flatness(nu: SparseMeasure, n: int, kappa: float, r_of_n,
                           budget: ConvolutionBudget | None = None, threshold: float = 0.0,
                           ball=None, power: SparseMeasure | None = None) -> FlatnessReport:
    """``min over ||g|| <= kappa r(n) of nu^(n)(g) / nu^(n)(e)``.

    Lattice measures scan the whole ball from the closed-form norm; other
    groups need an enumerated ``ball``. Elements with ratio below
    ``threshold`` are listed as offenders.
    """
    P = power if power is not None else convolution_power(nu, n, budget)
    rad = kappa * _radius(r_of_n, n)
    e0 = P.mass(P.group.identity)
    if e0 <= 0:
        raise ValueError("nu^(n)(e) vanishes")
    if P.group.kind == "lattice" and ball is None:
        d = P.group.d
        # L1 and weighted norms are at least the sup-norm raised to a power <= 1,
        # so the box of half-width ceil(rad) (or rad**(alpha_*/alpha) for weights) covers the ball
        half = int(math.ceil(_box_half_width(P.norm, rad)))
        ax = np.arange(-half, half + 1)
        pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
        nv = P.norm.on_coords(pts)
        pts = pts[nv <= rad + 1e-9]
        els = [tuple(int(v) for v in p) for p in pts]
    else:
        if ball is None:
            raise ValueError(f"{P.group!r} needs an enumerated ball")
        els = [g for g, v in zip(ball.elements, ball.norms) if v <= rad + 1e-9]
    ratios = np.array([P.mass(g) / e0 for g in els])
    offenders = [(g, float(r)) for g, r in zip(els, ratios) if r < threshold]
    return FlatnessReport(float(ratios.min()), rad, offenders, len(els))


def _box_half_width(norm, rad: float) -> float:
    w = getattr(norm, "weights", None)
    if w is None:
        return rad
    return max(rad ** e for e in w.budget_exponents) if rad > 0 else 0.0


# -- pseudo-Poincare ------------------------------------------------------------------

@dataclass
class PoincareResult:
    ratio: float
    ratio_lower: float
    numerator: float
    energy: float
    energy_deficit: float
    rho: float


def _autocorrelation(f: dict, group) -> dict:
    """``C(h) = sum_x f(x) f(x h)`` over the finite support."""
    items = sorted(f.items(), key=lambda kv: group.canonical_key(kv[0]))
    inv, mul = group._inv, group._mul
    acc: dict = {}
    for x, a in items:
        xi = inv(x)
        for y, b in items:
            acc.setdefault(mul(xi, y), []).append(a * b)
    return {h: math.fsum(v) for h, v in acc.items()}


def pseudo_poincare_ratio(nu: SparseMeasure, f: dict, g: Any, rho: Callable[[float], float] | Any,
                          norm=None) -> PoincareResult:
    """``sum_x |f(xg) - f(x)|^2 / (rho(||g||) E(f, f))``.

    ``E(f,f) = 1/2 sum_{x,y} (f(x)-f(y))^2 nu(x^-1 y)`` over the materialized
    atoms of ``nu``; the unmaterialized mass can add at most
    ``2 tail_hi ||f||^2`` to it (reported as ``energy_deficit``), so ``ratio``
    is an upper estimate and ``ratio_lower`` charges the full deficit. Uses the identity ``sum_x |f(xh)-f(x)|^2 = 2||f||^2 - 2C(h)``.
    ``rho(0) = 0`` by convention, and ``g = e`` gives ratio 0.
    """
    group = nu.group
    f = {group.normalize(k): float(v) for k, v in f.items() if v != 0}
    if not f:
        raise ValueError("f vanishes identically")
    g = group.normalize(g)
    C = _autocorrelation(f, group)
    f2 = math.fsum(v * v for v in f.values())
    num = max(0.0, 2.0 * f2 - 2.0 * C.get(g, 0.0))
    M = nu.total()
    energy = f2 * M - math.fsum(nu.mass(h) * c for h, c in sorted(C.items(), key=lambda kv: group.canonical_key(kv[0])))
    energy = max(energy, 0.0)
    if energy <= 1e-300:
        raise ValueError("Dirichlet form vanishes: f is constant on the walk's reach")
    normf = norm or nu.norm
    r = 0.0 if g == group.identity else (rho.rho(normf(g)) if hasattr(rho, "rho") else float(rho(normf(g))))
    if g == group.identity or num == 0.0:
        return PoincareResult(0.0, 0.0, num, energy, 2.0 * nu.tail_hi * f2, r)
    deficit = 2.0 * nu.tail_hi * f2
    return PoincareResult(num / (r * energy), num / (r * (energy + deficit)), num, energy, deficit, r)


def ball_indicator(group, L: int) -> dict:
    """Indicator of ``{|x_i| <= L}`` on ``Z^d``."""
    d = group.d
    pts = np.stack(np.meshgrid(*([np.arange(-L, L + 1)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return {tuple(int(v) for v in p): 1.0 for p in pts}


def coordinate_function(group, L: int, axis: int = 0) -> dict:
    """``x -> x_axis`` truncated to the box ``|x_i| <= L``."""
    d = group.d
    pts = np.stack(np.meshgrid(*([np.arange(-L, L + 1)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return {tuple(int(v) for v in p): float(p[axis]) for p in pts if p[axis] != 0}


def random_coloring(group, L: int, seed: int = 0) -> dict:
    """Independent signs on the box ``|x_i| <= L``."""
    d = group.d
    rng = np.random.default_rng(seed)
    pts = np.stack(np.meshgrid(*([np.arange(-L, L + 1)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    signs = rng.choice([-1.0, 1.0], size=len(pts))
    return {tuple(int(v) for v in p): float(s) for p, s in zip(pts, signs)}


# -- upper bound calibration ------------------------------------------------------------

def fit_on_diagonal(nu: SparseMeasure, t_grid: Sequence[float],
                    budget: ConvolutionBudget | None = None) -> tuple[Callable[[float], float], tuple]:
    """Power-law model ``m(t) = A t**slope`` fitted to the engine's ``p_t(e)``."""
    kernels = heat_kernel_series(nu, list(t_grid), budget=budget)
    vals = [(t, k.mass(nu.group.identity)) for t, k in zip(t_grid, kernels)]
    slope, icpt, _ = fit_exponent(vals)
    A = math.exp(icpt)
    return (lambda t: A * t**slope), (slope, A)


@dataclass
class BoundReport:
    """Calibration of an upper bound ``lhs <= C * shape`` on a grid.

    ``C`` is the largest ratio; ``C_by_t`` holds the calibrated constant of
    each time slice (maximum over the space grid) and ``spread`` is the ratio
    of the largest to the smallest of these. ``pointwise_spread`` compares all
    grid points individually and is reported but not asserted.
    """

    C: float
    C_by_t: dict
    spread: float
    pointwise_spread: float
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def summary(self) -> str:
        lines = [f"calibrated C = {self.C:.4g}; per-t constants: "
                 + ", ".join(f"t={t:g}: {c:.4g}" for t, c in self.C_by_t.items()),
                 f"spread across t = {self.spread:.3f}; pointwise spread = {self.pointwise_spread:.3g}"]
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in self.meta.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["t", "x_norm", "lhs", "shape", "ratio", "slack"])
            for r in self.rows:
                w.writerow([r["t"], r["x_norm"], repr(r["lhs"]), repr(r["shape"]), repr(r["ratio"]),
                            repr(self.C * r["shape"] - r["lhs"])])


def _report(rows: list, meta: dict) -> BoundReport:
    by_t: dict = {}
    for r in rows:
        by_t[r["t"]] = max(by_t.get(r["t"], 0.0), r["ratio"])
    ratios = [r["ratio"] for r in rows if r["ratio"] > 0]
    C = max(by_t.values())
    spread = max(by_t.values()) / min(by_t.values()) if min(by_t.values()) > 0 else math.inf
    pspread = max(ratios) / min(ratios) if ratios else math.inf
    return BoundReport(C, by_t, spread, pspread, rows, meta)


def _grid_points(group, x_grid):
    out = []
    for x in x_grid:
        if isinstance(x, (int, float, np.integer, np.floating)):
            if group.kind != "lattice":
                raise ValueError("scalar x values need a lattice (placed on the first axis)")
            out.append((int(x),) + (0,) * (group.d - 1))
        else:
            out.append(group.normalize(x))
    return out


def bound_check_davies(nu: SparseMeasure, R: float, t_grid: Sequence[float], x_grid: Sequence,
                       m: Callable[[float], float], budget: ConvolutionBudget | None = None) -> BoundReport:
    """Calibrate ``p_R(t,e,x) <= C e^{4 delta_R t} m(t) (t G(R)/R^2)^{||x||/3R}``
    for the truncated kernel ``nu_R``."""
    nu_R, delta = truncate_measure(nu, R)
    G = second_moment_truncated(nu, R)
    kernels = heat_kernel_series(nu_R, list(t_grid), subprob=True, budget=budget)
    pts = _grid_points(nu.group, x_grid)
    rows = []
    for t, p in zip(t_grid, kernels):
        for x in pts:
            xn = nu.norm(x)
            lhs = p.mass(x) + min(p.sup_err, p.tail_hi)
            shape = math.exp(4 * delta * t) * m(t) * (t * G / R**2) ** (xn / (3 * R))
            rows.append({"t": t, "x_norm": xn, "lhs": lhs, "shape": shape, "ratio": lhs / shape})
    return _report(rows, {"check": "davies", "R": R, "delta_R": delta, "G_R": G})


def bound_check_offdiagonal(nu: SparseMeasure, t_grid: Sequence[float], x_grid: Sequence,
                            alpha: float, D: float, variant: str, m: Callable[[float], float],
                            budget: ConvolutionBudget | None = None, gamma: float = 1.0,
                            ell: Callable[[float], float] | None = None) -> BoundReport:
    """Calibrate the off-diagonal upper bounds for norm-radial kernels.

    ``up1`` (``0 < alpha < 2``): ``m(t) min{(t/|x|^alpha)^{1+D/alpha} l(t^{1/alpha})/l(|x|), 1}``;
    the equivalent form ``min{t nu(x), m(t)}`` is calibrated too and stored in
    ``meta['C_equivalent']``.
    ``up2`` (``alpha = 2``): ``m(t) min{(t log|x| / |x|^2)^{1+D/2}, 1}``; points with
    ``t <= |x|^gamma`` are also checked against ``t^{-D/2} (t/|x|^2)^{1+D/2}``,
    reported in ``meta['C_gamma']``.
    """
    if variant not in ("up1", "up2"):
        raise ValueError("variant must be 'up1' or 'up2'")
    if variant == "up1" and not 0 < alpha < 2:
        raise ValueError("up1 needs alpha in (0, 2)")
    if variant == "up2" and alpha != 2:
        raise ValueError("up2 needs alpha = 2")
    ell = ell or (lambda r: 1.0)
    kernels = heat_kernel_series(nu, list(t_grid), budget=budget)
    pts = _grid_points(nu.group, x_grid)
    rows, eq_ratios, gamma_ratios = [], [], []
    for t, p in zip(t_grid, kernels):
        for x in pts:
            xn = nu.norm(x)
            lhs = p.mass(x) + min(p.sup_err, p.tail_hi)
            if variant == "up1":
                core = (t / xn**alpha) ** (1 + D / alpha) * ell(t ** (1 / alpha)) / ell(xn)
                eq_ratios.append(lhs / min(t * nu.mass(x), m(t)))
            else:
                core = (t * math.log(xn) / xn**2) ** (1 + D / 2)
                if t <= xn**gamma:
                    gamma_ratios.append(lhs / (t ** (-D / 2) * (t / xn**2) ** (1 + D / 2)))
            shape = m(t) * min(core, 1.0)
            rows.append({"t": t, "x_norm": xn, "lhs": lhs, "shape": shape, "ratio": lhs / shape})
    meta = {"check": variant, "alpha": alpha, "D": D}
    if eq_ratios:
        meta["C_equivalent"] = max(eq_ratios)
        meta["C_equivalent_min"] = min(eq_ratios)
    if gamma_ratios:
        meta["C_gamma"] = max(gamma_ratios)
    return _report(rows, meta)
