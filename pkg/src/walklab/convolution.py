"""Convolution of certified sparse measures: powers by doubling, the return
probability series, Poissonized heat kernels and a fast exact route for
measures on generator powers of a standard lattice."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numba
import numpy as np
from scipy import signal, stats

from .measures import SparseMeasure, mu_sa_axis

__all__ = [
    "ConvolutionBudget",
    "BudgetExceeded",
    "ReturnPoint",
    "convolve",
    "convolution_power",
    "PowerCache",
    "return_series",
    "write_return_series",
    "heat_kernel",
    "heat_kernel_series",
    "AxisReturn",
    "axis_return_series",
    "default_axis_clip",
    "diagonal_value",
]


class BudgetExceeded(RuntimeError):
    """Mass clipped in one convolution exceeded ``eps_step``."""


@dataclass(frozen=True)
class ConvolutionBudget:
    """Clipping policy for convolutions.

    ``ball_radius`` is a fixed radius, a callable ``n -> radius`` giving the
    clip for the ``n``-th power, or ``None`` (no clipping). Mass landing
    outside the radius is dropped and booked into the tail bracket; if it
    exceeds ``eps_step`` in a single convolution :class:`BudgetExceeded` is
    raised.
    """

    ball_radius: float | Callable[[int], float] | None = None
    eps_step: float = math.inf

    def radius_for(self, n: int | None) -> float:
        r = self.ball_radius
        if r is None:
            return math.inf
        if callable(r):
            return math.inf if n is None else float(r(n))
        return float(r)


@numba.njit(cache=True)
def _conv2d_direct(a, b):
    na0, na1 = a.shape
    nb0, nb1 = b.shape
    out = np.zeros((na0 + nb0 - 1, na1 + nb1 - 1))
    for i in range(na0):
        for j in range(na1):
            v = a[i, j]
            if v == 0.0:
                continue
            for k in range(nb0):
                row = out[i + k]
                brow = b[k]
                for l in range(nb1):
                    row[j + l] += v * brow[l]
    return out


def _grid_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim == 1:
        return np.convolve(a, b)
    if a.ndim == 2:
        # put the sparser factor on the outside loop
        if np.count_nonzero(a) > np.count_nonzero(b):
            a, b = b, a
        return _conv2d_direct(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return signal.convolve(a, b, method="direct")


def _check_compatible(a: SparseMeasure, b: SparseMeasure) -> None:
    if a.group != b.group:
        raise ValueError(f"measures live on different groups: {a.group!r} vs {b.group!r}")
    if a.norm != b.norm:
        raise ValueError(f"norm reference mismatch: {a.norm.name} vs {b.norm.name}")


def convolve(a: SparseMeasure, b: SparseMeasure, budget: ConvolutionBudget | None = None,
             n: int | None = None) -> SparseMeasure:
    """``(a*b)(g) = sum_h a(h) b(h^-1 g)`` over stored atoms, clipped to the
    budget radius. ``n`` is the power index used by radius schedules."""
    _check_compatible(a, b)
    budget = budget or ConvolutionBudget()
    radius = budget.radius_for(n)
    if a.is_grid and b.is_grid:
        grid = _grid_convolve(a.grid, b.grid)
        offset = tuple(x + y for x, y in zip(a.offset, b.offset))
        out = SparseMeasure(a.group, a.norm, grid=grid, offset=offset)
        clipped, clip_max = 0.0, 0.0
        if math.isfinite(radius):
            norms = out.norm_grid()
            outside = norms > radius + 1e-9
            if outside.any():
                dropped = out.grid[outside]
                clipped = math.fsum(dropped)
                clip_max = float(dropped.max())
                g = out.grid.copy()
                g[outside] = 0.0
                out = SparseMeasure(a.group, a.norm, grid=g, offset=out.offset)
    else:
        mul = a.group._mul
        acc: dict = {}
        bi = b.items()
        for h, x in a.items():
            for k, y in bi:
                acc.setdefault(mul(h, k), []).append(x * y)
        atoms = {}
        clipped_vals = []
        norm = a.norm
        for g, vals in acc.items():
            m = math.fsum(vals)
            if math.isfinite(radius) and norm(g) > radius + 1e-9:
                clipped_vals.append(m)
            else:
                atoms[g] = m
        clipped = math.fsum(clipped_vals)
        clip_max = max(clipped_vals, default=0.0)
        out = SparseMeasure(a.group, a.norm, atoms=atoms)
    if clipped > budget.eps_step:
        raise BudgetExceeded(f"clipped mass {clipped:.3g} exceeds eps_step={budget.eps_step:g} "
                             f"at radius {radius}; enlarge ball_radius")
    Ma, Mb = a.total(), b.total()
    ta, tb = a.tail_hi, b.tail_hi
    ea, eb = a.sup_err, b.sup_err
    out.tail_lo = clipped + a.tail_lo * Mb + b.tail_lo * Ma + a.tail_lo * b.tail_lo
    out.tail_hi = clipped + ta * Mb + tb * Ma + ta * tb
    out.sup_err = (clip_max + min(ta * b.max_atom(), ea * Mb) + min(tb * a.max_atom(), eb * Ma)
                   + min(ta * eb, ea * tb))
    out.meta = {"family": "convolution", "clipped": clipped, "radius": radius}
    return out


class PowerCache:
    """Memoized convolution powers of one measure (doubling recursion)."""

    def __init__(self, nu: SparseMeasure, budget: ConvolutionBudget | None = None):
        self.nu = nu
        self.budget = budget or ConvolutionBudget()
        self._cache: dict[int, SparseMeasure] = {1: nu}

    def __call__(self, n: int) -> SparseMeasure:
        if n < 0:
            raise ValueError("n must be nonnegative")
        if n == 0:
            d = SparseMeasure.delta(self.nu.group, self.nu.norm)
            return d
        hit = self._cache.get(n)
        if hit is not None:
            return hit
        half = self(n // 2)
        p = convolve(half, half, self.budget, n=2 * (n // 2))
        if n % 2:
            p = convolve(p, self.nu, self.budget, n=n)
        p.meta.update(power=n)
        self._cache[n] = p
        return p


def convolution_power(nu: SparseMeasure, n: int, budget: ConvolutionBudget | None = None) -> SparseMeasure:
    """``nu^(n)`` by binary doubling."""
    return PowerCache(nu, budget)(n)


class ReturnPoint(NamedTuple):
    n: int
    value: float
    lower: float
    upper: float

    @property
    def flagged(self) -> bool:
        """The certified bracket is wider than the value itself."""
        return (self.upper - self.lower) > self.value


def diagonal_value(p: SparseMeasure, q: SparseMeasure | None = None) -> tuple[float, float]:
    """``(value, error)`` for ``(p*q)(e) = sum_x p(x) q(x^-1)`` with certified
    upper error from the deficits of both factors."""
    q = p if q is None else q
    _check_compatible(p, q)
    if p.is_grid and q.is_grid:
        d = p.grid.ndim
        # align q(-x) with p(x): reversed q grid has offset -(q.offset + shape - 1)
        qr = q.grid[(slice(None, None, -1),) * d]
        qoff = tuple(-(o + s - 1) for o, s in zip(q.offset, q.grid.shape))
        lo = [max(a, b) for a, b in zip(p.offset, qoff)]
        hi = [min(a + s, b + t) for a, s, b, t in zip(p.offset, p.grid.shape, qoff, qr.shape)]
        if any(h <= l for l, h in zip(lo, hi)):
            value = 0.0
        else:
            ps = tuple(slice(l - o, h - o) for l, h, o in zip(lo, hi, p.offset))
            qs = tuple(slice(l - o, h - o) for l, h, o in zip(lo, hi, qoff))
            value = math.fsum((p.grid[ps] * qr[qs]).ravel())
    else:
        inv = p.group._inv
        value = math.fsum(m * q.mass(inv(g)) for g, m in p.items())
    err = (min(p.tail_hi * q.max_atom(), p.sup_err * q.total())
           + min(q.tail_hi * p.max_atom(), q.sup_err * p.total())
           + min(p.tail_hi * q.sup_err, p.sup_err * q.tail_hi))
    return value, err


def return_series(nu: SparseMeasure, n_list: Iterable[int],
                  budget: ConvolutionBudget | None = None,
                  cache: PowerCache | None = None) -> list[ReturnPoint]:
    """``nu^(n)(e)`` with a certified bracket ``[lower, upper]``.

    Stored masses never exceed the true ones, so ``value`` is itself the lower
    end; the upper end adds the propagated pointwise deficit. Even ``n`` is
    evaluated as the diagonal of ``nu^(n/2) * nu^(n/2)``.
    """
    ns = list(n_list)
    if ns != sorted(ns):
        raise ValueError("n_list must be sorted")
    cache = cache or PowerCache(nu, budget)
    out = []
    for n in ns:
        if n == 0:
            out.append(ReturnPoint(0, 1.0, 1.0, 1.0))
            continue
        if n % 2 == 0:
            value, err = diagonal_value(cache(n // 2))
        else:
            p = cache(n)
            value = p.mass(p.group.identity)
            err = min(p.sup_err, p.tail_hi)
        out.append(ReturnPoint(n, value, value, value + err))
    return out


def write_return_series(rows: Sequence[ReturnPoint], path, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(["n", "value", "lower", "upper"])
        for r in rows:
            w.writerow([r.n, repr(r.value), repr(r.lower), repr(r.upper)])


# -- continuous time --------------------------------------------------------------

def _poisson_cutoff(rate: float, eps: float) -> int:
    if rate <= 0:
        return 0
    n = int(stats.poisson.isf(eps, rate)) + 1
    while stats.poisson.sf(n, rate) >= eps:
        n += 1
    return n


def heat_kernel_series(nu: SparseMeasure, t_list: Sequence[float], subprob: bool = False,
                       budget: ConvolutionBudget | None = None,
                       eps_poisson: float = 1e-12) -> list[SparseMeasure]:
    """Heat kernels at several times from one pass of sequential powers."""
    if any(t < 0 for t in t_list):
        raise ValueError("t must be nonnegative")
    budget = budget or ConvolutionBudget()
    mass = nu.total() if subprob else 1.0
    if subprob and (nu.tail_hi > 0):
        raise ValueError("the sub-probability kernel must be exactly known (zero tail)")
    rates = [mass * t for t in t_list]
    cuts = [_poisson_cutoff(r, eps_poisson) for r in rates]
    nmax = max(cuts, default=0)
    acc = [None] * len(t_list)
    tails = [0.0] * len(t_list)
    sups = [0.0] * len(t_list)
    tail_los = [0.0] * len(t_list)
    P = SparseMeasure.delta(nu.group, nu.norm)
    for n in range(nmax + 1):
        if n:
            P = convolve(P, nu, budget, n=n)
        for i, t in enumerate(t_list):
            if n > cuts[i]:
                continue
            # e^{-mass t} t^n / n!  ==  e^{(1-mass) t} * Poisson(t) pmf
            w = math.exp(-mass * t + (n * math.log(t) if t > 0 else (0.0 if n == 0 else -math.inf))
                         - math.lgamma(n + 1))
            if w == 0.0:
                continue
            acc[i] = _axpy(acc[i], w, P)
            tails[i] += w * P.tail_hi
            tail_los[i] += w * P.tail_lo
            sups[i] += w * P.sup_err
    out = []
    for i, t in enumerate(t_list):
        ptail = float(stats.poisson.sf(cuts[i], rates[i])) if rates[i] > 0 else 0.0
        p = acc[i] if acc[i] is not None else SparseMeasure.delta(nu.group, nu.norm)
        p.tail_lo = tail_los[i]
        p.tail_hi = tails[i] + ptail
        p.sup_err = sups[i] + ptail
        p.meta = {"family": "heat_kernel", "t": t, "subprob": subprob, "n_star": cuts[i],
                  "poisson_tail": ptail, "mass_rate": mass}
        out.append(p)
    return out


def heat_kernel(nu: SparseMeasure, t: float, subprob: bool = False,
                budget: ConvolutionBudget | None = None, eps_poisson: float = 1e-12) -> SparseMeasure:
    """``p_t = e^{-t} sum_n t^n/n! nu^(n)``.

    With ``subprob`` the kernel is a truncated measure of total mass
    ``1 - delta_R`` and the result is ``e^{-(1-delta_R) t} sum_n t^n/n! nu_R^(n)``,
    the semigroup of the truncated jump kernel.
    """
    return heat_kernel_series(nu, [t], subprob, budget, eps_poisson)[0]


def _axpy(acc: SparseMeasure | None, w: float, P: SparseMeasure) -> SparseMeasure:
    if P.is_grid:
        if acc is None:
            return SparseMeasure(P.group, P.norm, grid=w * P.grid, offset=P.offset)
        lo = [min(a, b) for a, b in zip(acc.offset, P.offset)]
        hi = [max(a + s, b + t) for a, s, b, t in zip(acc.offset, acc.grid.shape, P.offset, P.grid.shape)]
        g = np.zeros([h - l for l, h in zip(lo, hi)])
        g[tuple(slice(a - l, a - l + s) for a, l, s in zip(acc.offset, lo, acc.grid.shape))] += acc.grid
        g[tuple(slice(a - l, a - l + s) for a, l, s in zip(P.offset, lo, P.grid.shape))] += w * P.grid
        return SparseMeasure(P.group, P.norm, grid=g, offset=tuple(lo))
    atoms = dict(acc.atoms) if acc is not None else {}
    for g, m in P.items():
        atoms[g] = atoms.get(g, 0.0) + w * m
    return SparseMeasure(P.group, P.norm, atoms=atoms)


# -- generator powers on a standard lattice -----------------------------------------

class AxisReturn(NamedTuple):
    """Per-axis return values ``A^(j)(0)`` with certified upper errors."""

    alpha: float
    values: np.ndarray
    errors: np.ndarray


def _axis_returns(alpha: float, jmax: int, M: int, clip: Callable[[int], float]) -> AxisReturn:
    A = mu_sa_axis(alpha, M)
    vals = np.empty(jmax + 1)
    errs = np.empty(jmax + 1)
    P = SparseMeasure.delta(A.group, A.norm)
    vals[0], errs[0] = 1.0, 0.0
    budget = ConvolutionBudget(ball_radius=clip)
    for j in range(1, jmax + 1):
        P = convolve(P, A, budget, n=j)
        v, lo, hi = P.value_bracket((0,))
        vals[j], errs[j] = v, hi - v
    return AxisReturn(alpha, vals, errs)


def default_axis_clip(alpha: float, cap: float = 16384.0) -> Callable[[int], float]:
    """Clip schedule ``256 + 64 j**(1/min(alpha, 2))`` capped at ``cap``: well
    beyond the spread of the ``j``-th power of the axis law."""
    e = 1.0 / min(alpha, 2.0)

    def clip(j: int) -> float:
        return min(cap, 256.0 + 64.0 * j**e)

    return clip


def axis_return_series(alphas: Sequence[float], n_list: Iterable[int],
                       M: int | Sequence[int] | None = None,
                       clip: Callable[[int], float] | float | None = None) -> list[ReturnPoint]:
    """``mu^(n)(0)`` for the generator-power measure on ``Z^d`` with the
    standard basis.

    The measure is the mixture ``(1/k) sum_i A_i`` of one-dimensional laws on
    the coordinate axes, which commute, so
    ``mu^(n)(0) = sum over (j_1..j_k) of multinomial(n; j) k^-n prod_i A_i^(j_i)(0)``.
    The ``A_i^(j)(0)`` come from sequential one-dimensional convolutions. By
    default each axis is clipped by :func:`default_axis_clip` and materialized
    up to ``|m| <= min(8192, clip(n_max))``.
    """
    ns = sorted(set(int(n) for n in n_list))
    nmax = ns[-1]
    alphas = [float(a) for a in alphas]
    axes = []
    for i, a in enumerate(alphas):
        if clip is None:
            ci = default_axis_clip(a)
        elif callable(clip):
            ci = clip
        else:
            ci = (lambda j, r=float(clip): r)
        if M is None:
            Mi = int(min(8192, ci(nmax)))
        elif isinstance(M, (int, np.integer)):
            Mi = int(M)
        else:
            Mi = int(M[i])
        axes.append(_axis_returns(a, nmax, Mi, ci))
    # fold the axes one at a time: S_k(n) = sum_j Bin(n, 1/k)(j) A_1(j) S_{k-1}(n - j)
    vals = axes[-1].values
    errs = axes[-1].errors
    for i in range(len(axes) - 2, -1, -1):
        k = len(axes) - i
        Av, Ae = axes[i].values, axes[i].errors
        nv = np.empty(nmax + 1)
        ne = np.empty(nmax + 1)
        for n in range(nmax + 1):
            j = np.arange(n + 1)
            w = stats.binom.pmf(j, n, 1.0 / k)
            nv[n] = math.fsum(w * Av[j] * vals[n - j])
            ne[n] = math.fsum(w * (Av[j] + Ae[j]) * (vals[n - j] + errs[n - j])) - nv[n]
        vals, errs = nv, ne
    return [ReturnPoint(n, float(vals[n]), float(vals[n]), float(vals[n] + errs[n])) for n in ns]
