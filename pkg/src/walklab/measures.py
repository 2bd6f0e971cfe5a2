"""Finitely supported measures with certified tail brackets, and the measure
families used throughout: norm-radial measures, measures on generator
powers, switch-walk-switch measures and truncations."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np
from scipy import integrate
from scipy.special import zeta

from .geometry import (Ball, LatticeWordNorm, Norm, NormWeights, OutOfBall, TableNorm,
                       WeightedLatticeNorm, lattice_word_volume)
from .groups import Group, embed_base, embed_lamp

__all__ = [
    "TailBracketError",
    "SparseMeasure",
    "PhiFunction",
    "build_nu_phi",
    "build_nu_alpha",
    "build_mu_sa",
    "mu_sa_axis",
    "build_nu_sa_beta",
    "build_sws",
    "truncate_measure",
    "second_moment_truncated",
    "tail_mass",
    "lazy_srw",
    "uniform_measure",
]

# dense storage limit for lattice measures; beyond it atoms are kept in a dict
GRID_LIMIT = 50_000_000


class TailBracketError(ValueError):
    """The tail bracket is wider than requested; materialize a larger ball."""


# -- the measure container -------------------------------------------------------

class SparseMeasure:
    """Nonnegative finitely supported mass function with error bookkeeping.

    The represented (true) measure equals the stored atoms plus a nonnegative
    deficit. ``tail_lo <= ||deficit||_1 <= tail_hi`` and
    ``||deficit||_inf <= sup_err``. For a probability measure the deficit is the
    mass outside the materialized support, and ``sup_err`` bounds any single
    unmaterialized atom, which is what certifies pointwise values.

    Lattice measures are stored on a dense grid (``grid`` with the lattice
    coordinates of ``grid[0, ..., 0]`` in ``offset``); other groups use a dict.
    """

    def __init__(self, group: Group, norm: Norm, *, atoms: dict | None = None,
                 grid: np.ndarray | None = None, offset: tuple | None = None,
                 tail_lo: float = 0.0, tail_hi: float = 0.0, sup_err: float = 0.0,
                 meta: dict | None = None):
        self.group = group
        self.norm = norm
        self.tail_lo = float(tail_lo)
        self.tail_hi = float(tail_hi)
        self.sup_err = float(sup_err)
        self.meta = dict(meta or {})
        if grid is not None:
            self.grid, self.offset = _crop(np.asarray(grid, dtype=float), tuple(offset))
            self.atoms = None
        else:
            self.grid = None
            self.offset = None
            self.atoms = {g: float(v) for g, v in (atoms or {}).items() if v != 0.0}

    # -- construction --------------------------------------------------------
    @classmethod
    def from_atoms(cls, group: Group, norm: Norm, atoms: dict, **kw) -> "SparseMeasure":
        if group.kind == "lattice" and atoms:
            pts = np.array(list(atoms.keys()), dtype=np.int64).reshape(len(atoms), group.d)
            lo = pts.min(axis=0)
            shape = tuple(pts.max(axis=0) - lo + 1)
            if int(np.prod(shape)) <= GRID_LIMIT:
                grid = np.zeros(shape)
                vals = np.fromiter(atoms.values(), dtype=float, count=len(atoms))
                np.add.at(grid, tuple((pts - lo).T), vals)
                return cls(group, norm, grid=grid, offset=tuple(int(x) for x in lo), **kw)
        return cls(group, norm, atoms=atoms, **kw)

    @classmethod
    def delta(cls, group: Group, norm: Norm, g: Any = None) -> "SparseMeasure":
        g = group.identity if g is None else g
        return cls.from_atoms(group, norm, {g: 1.0}, meta={"family": "delta"})

    def replace(self, **kw) -> "SparseMeasure":
        args = dict(tail_lo=self.tail_lo, tail_hi=self.tail_hi, sup_err=self.sup_err, meta=self.meta)
        args.update({k: v for k, v in kw.items() if k in args})
        if "grid" in kw or (self.grid is not None and "atoms" not in kw):
            return SparseMeasure(self.group, self.norm, grid=kw.get("grid", self.grid),
                                 offset=kw.get("offset", self.offset), **args)
        return SparseMeasure(self.group, self.norm, atoms=kw.get("atoms", self.atoms), **args)

    # -- access --------------------------------------------------------------
    @property
    def is_grid(self) -> bool:
        return self.grid is not None

    def mass(self, g: Any) -> float:
        if self.grid is not None:
            idx = tuple(int(a) - o for a, o in zip(g, self.offset))
            if any(i < 0 or i >= s for i, s in zip(idx, self.grid.shape)):
                return 0.0
            return float(self.grid[idx])
        return self.atoms.get(g, 0.0)

    __getitem__ = mass

    def coords(self) -> np.ndarray:
        """Lattice coordinates of every grid cell, shape ``grid.shape + (d,)``."""
        idx = np.indices(self.grid.shape)
        return np.stack([idx[i] + self.offset[i] for i in range(self.grid.ndim)], axis=-1)

    def items(self) -> list[tuple[Any, float]]:
        """Stored atoms in a deterministic order."""
        if self.grid is not None:
            nz = np.argwhere(self.grid != 0.0)
            off = np.asarray(self.offset)
            return [(tuple(int(v) for v in p + off), float(self.grid[tuple(p)])) for p in nz]
        key = self.group.canonical_key
        return sorted(self.atoms.items(), key=lambda kv: key(kv[0]))

    def support_size(self) -> int:
        if self.grid is not None:
            return int(np.count_nonzero(self.grid))
        return len(self.atoms)

    def total(self) -> float:
        if self.grid is not None:
            return math.fsum(self.grid.ravel())
        return math.fsum(self.atoms.values())

    def max_atom(self) -> float:
        if self.grid is not None:
            return float(self.grid.max()) if self.grid.size else 0.0
        return max(self.atoms.values(), default=0.0)

    def norm_grid(self) -> np.ndarray:
        return self.norm.on_coords(self.coords())

    def norm_values(self) -> tuple[list, np.ndarray, np.ndarray]:
        """``(elements, masses, norms)`` of the stored atoms."""
        items = self.items()
        els = [g for g, _ in items]
        ms = np.array([m for _, m in items])
        ns = np.array([self.norm(g) for g in els]) if els else np.zeros(0)
        return els, ms, ns

    def mass_bracket(self) -> tuple[float, float]:
        t = self.total()
        return t + self.tail_lo, t + self.tail_hi

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        inv = self.group._inv
        for g, m in self.items():
            m2 = self.mass(inv(g))
            if abs(m - m2) > rtol * max(m, m2):
                return False
        return True

    def value_bracket(self, g: Any) -> tuple[float, float, float]:
        """``(value, lower, upper)`` for the true mass at ``g``."""
        v = self.mass(g)
        return v, v, v + min(self.sup_err, self.tail_hi)

    def __repr__(self) -> str:
        return (f"SparseMeasure({self.group!r}, atoms={self.support_size()}, "
                f"tail=[{self.tail_lo:.3g},{self.tail_hi:.3g}], sup_err={self.sup_err:.3g})")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# group={self.group!r}\n# norm={self.norm.name}\n")
            fh.write(f"# tail_lo={self.tail_lo!r}\n# tail_hi={self.tail_hi!r}\n# sup_err={self.sup_err!r}\n")
            for k in sorted(self.meta):
                fh.write(f"# {k}={self.meta[k]!r}\n")
            w = csv.writer(fh)
            w.writerow(["element_key", "mass"])
            for g, m in self.items():
                w.writerow([self.group.canonical_key(g).hex(), repr(m)])


def _crop(grid: np.ndarray, offset: tuple) -> tuple[np.ndarray, tuple]:
    if grid.size == 0 or not grid.any():
        return np.zeros((1,) * grid.ndim), tuple(0 for _ in offset)
    sl = []
    off = []
    for ax in range(grid.ndim):
        other = tuple(i for i in range(grid.ndim) if i != ax)
        nz = np.flatnonzero(grid.any(axis=other) if other else grid != 0)
        sl.append(slice(nz[0], nz[-1] + 1))
        off.append(int(offset[ax]) + int(nz[0]))
    return np.ascontiguousarray(grid[tuple(sl)]), tuple(off)


# -- regularly varying profiles -----------------------------------------------------

@dataclass(frozen=True)
class PhiFunction:
    """``phi(t) = (1+t)**beta * log(e+t)**gamma``."""

    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.gamma < 0 and self.beta == 0:
            raise ValueError("phi must be nondecreasing")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = (1.0 + t) ** self.beta
        if self.gamma:
            out = out * np.log(np.e + t) ** self.gamma
        return out if out.ndim else float(out)

    def label(self) -> str:
        return f"(1+t)^{self.beta:g}" + (f"*log(e+t)^{self.gamma:g}" if self.gamma else "")


# -- tails of norm-radial series -------------------------------------------------------

def _integral(f: Callable, a: float, b: float) -> float:
    return integrate.quad(lambda x: float(f(np.array([x]))[0]), a, b, epsabs=0.0,
                          epsrel=1e-11, limit=200)[0]


def _integral_to_inf(f: Callable, a: float, max_doublings: int = 400) -> float:
    """``int_a^inf f`` for a positive, eventually decreasing, integrable ``f``,
    summed over dyadic blocks until a block is negligible."""
    parts = []
    lo = a
    for _ in range(max_doublings):
        hi = 2.0 * lo if lo > 0 else 1.0
        blk = _integral(f, lo, hi)
        parts.append(blk)
        if blk <= 1e-17 * math.fsum(parts):
            break
        lo = hi
    else:
        raise ArithmeticError("tail integral did not converge; is the profile integrable?")
    return math.fsum(parts)


def _integer_level_tail(weight: Callable, vol: Callable, R: int, r_cut: int,
                        shell: Callable | None = None) -> tuple[float, float]:
    """Bracket ``sum_{r > R} (V(r) - V(r-1)) * weight(r) / V(r)`` for an integer
    valued norm whose shell terms are eventually decreasing.

    Without a closed-form ``shell`` the summand beyond ``r_cut`` uses the local
    growth exponent ``D = log2(V(2x)/V(x))`` in ``1 - (1 - 1/x)**D``, which
    avoids the cancellation in ``V(x) - V(x-1)`` at large ``x``.
    """
    if shell is None:
        def ratio(x):
            xl = np.asarray(x, dtype=np.longdouble)
            v = np.asarray(vol(xl), dtype=np.longdouble)
            return np.asarray((v - np.asarray(vol(xl - 1), dtype=np.longdouble)) / v, dtype=float)

        def ratio_far(x):
            x = np.asarray(x, dtype=float)
            D = np.log2(np.asarray(vol(2.0 * x), dtype=float) / np.asarray(vol(x), dtype=float))
            return -np.expm1(D * np.log1p(-1.0 / x))
    else:
        def ratio(x):
            return shell(x) / vol(x)
        ratio_far = ratio
    total = 0.0
    lo = R + 1
    chunk = 1 << 20
    while lo <= r_cut:
        hi = min(r_cut, lo + chunk - 1)
        r = np.arange(lo, hi + 1, dtype=float)
        total += math.fsum(ratio(r) * weight(r))
        lo = hi + 1

    def f(x):
        return ratio_far(x) * weight(x)

    upper = _integral_to_inf(f, float(r_cut))
    lower = upper - _integral(f, float(r_cut), float(r_cut + 1))
    return total + lower, total + upper


def _weighted_lattice_tail(weights: NormWeights, weight: Callable, R: float,
                           c_cut: int = 1 << 22) -> tuple[float, float]:
    """Bracket ``sum over levels r > R of (dV/V)(r) * weight(r)`` for the
    closed-form weighted volume ``V(r) = prod_i (2 floor(r**e_i) + 1)``.

    A level at which only coordinate ``i`` jumps from ``c-1`` to ``c`` has
    ``dV/V = 2/(2c+1)``; the per-coordinate series are summed exactly up to
    ``c_cut`` with an integral remainder, and levels where several
    coordinates jump at once get an explicit correction.
    """
    expo = weights.budget_exponents
    lo_total = 0.0
    hi_total = 0.0
    jump_sets = []
    for e in expo:
        c0 = int(math.floor(R**e + 1e-9)) + 1
        c = np.arange(c0, max(c0, c_cut) + 1, dtype=float)
        r = c ** (1.0 / e)
        s = math.fsum(2.0 / (2.0 * c + 1.0) * weight(r))

        def f(x, e=e):
            return 2.0 / (2.0 * x + 1.0) * weight(x ** (1.0 / e))

        cend = float(max(c0, c_cut))
        hi_rem = _integral_to_inf(f, cend)
        lo_rem = hi_rem - _integral(f, cend, cend + 1.0)
        lo_total += s + lo_rem
        hi_total += s + hi_rem
        jump_sets.append(r)
    # coincident levels: replace sum_i 2/(2c_i+1) by the exact 1 - prod ratio
    if len(expo) > 1:
        rmax = min(js[-1] for js in jump_sets)
        allr = np.concatenate([js[js <= rmax] for js in jump_sets])
        allr = np.sort(allr)
        if allr.size > 1:
            d = np.diff(allr)
            dup = np.flatnonzero(d <= 1e-9 * allr[1:])
            if dup.size:
                levels = np.unique(np.round(allr[dup + 1], 9))
                corr = 0.0
                for r in levels:
                    ratios = []
                    for e in expo:
                        x = r**e
                        if abs(x - round(x)) < 1e-7 and round(x) > 0:
                            c = round(x)
                            ratios.append((2.0 * c - 1.0) / (2.0 * c + 1.0))
                    if len(ratios) > 1:
                        approx = sum(1.0 - q for q in ratios)
                        exact = 1.0 - float(np.prod(ratios))
                        corr += (approx - exact) * float(weight(r))
                lo_total -= corr
                hi_total -= corr
        # coincidences beyond rmax: each is second order, bounded by the product term
        bound = 0.0
        for i in range(len(expo)):
            for j in range(i + 1, len(expo)):
                ci = rmax ** expo[i]
                cj = rmax ** expo[j]
                bound += (2.0 / (2 * ci + 1)) * (2.0 / (2 * cj + 1)) * float(weight(rmax)) * min(ci, cj)
        lo_total -= bound
    return max(lo_total, 0.0), hi_total


# -- norm-radial builders ----------------------------------------------------------

def _radial_from_values(group, norm, elements_or_grid, norm_vals, weight, vol_at, R,
                        tail_unnorm, sup_unnorm, eps_tail, meta, grid_offset=None):
    raw = weight(norm_vals) / vol_at(norm_vals)
    S = math.fsum(np.ravel(raw))
    t_lo, t_hi = tail_unnorm
    c = 1.0 / (S + 0.5 * (t_lo + t_hi))
    tail_lo, tail_hi = c * t_lo, c * t_hi
    if tail_hi - tail_lo > eps_tail:
        raise TailBracketError(
            f"tail bracket width {tail_hi - tail_lo:.3g} exceeds eps_tail={eps_tail:g}; "
            f"use a larger ball than radius {R}")
    meta = dict(meta, normalizer=c, radius=R)
    if grid_offset is not None:
        return SparseMeasure(group, norm, grid=c * raw, offset=grid_offset, tail_lo=tail_lo,
                             tail_hi=tail_hi, sup_err=c * sup_unnorm, meta=meta)
    atoms = {g: c * float(v) for g, v in zip(elements_or_grid, raw)}
    return SparseMeasure.from_atoms(group, norm, atoms, tail_lo=tail_lo, tail_hi=tail_hi,
                                    sup_err=c * sup_unnorm, meta=meta)


def _lattice_box(d: int, R: int) -> tuple[np.ndarray, tuple]:
    ax = np.arange(-R, R + 1)
    mesh = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
    return mesh, (-R,) * d


def build_nu_phi(ball: Ball | tuple[Group, float], phi: PhiFunction, *,
                 volume_ext: Callable | None = None, eps_tail: float = 1e-8,
                 r_cut: int | None = None) -> SparseMeasure:
    """``nu_phi(g) = c / (phi(|g|) V(|g|))`` on a word-length ball.

    ``ball`` is an enumerated :class:`Ball`, or ``(lattice, R)`` for the
    standard lattice where the ball is materialized as a dense grid. The
    normalizer ``c`` makes the ball mass plus the tail-bracket midpoint equal
    to one. ``volume_ext`` extends ``V`` beyond the ball for non-lattice
    groups (a smooth model evaluated at real arguments).
    """
    if isinstance(ball, tuple):
        group, R = ball
        if not group.standard_basis:
            raise ValueError("(group, R) form needs a lattice with the standard basis")
        R = int(R)
        norm = LatticeWordNorm(group.d)
        vol = _lattice_volume_poly(group.d)
        shell = _lattice_shell_poly(group.d)
        mesh, off = _lattice_box(group.d, R)
        nv = norm.on_coords(mesh)
        nv = np.where(nv <= R, nv, np.inf)
        elements = None
    else:
        group = ball.group
        R = int(math.floor(ball.radius + 1e-9))
        norm = TableNorm(ball)
        shell = None
        if group.standard_basis:
            vol = _lattice_volume_poly(group.d)
            shell = _lattice_shell_poly(group.d)
        elif volume_ext is not None:
            vol = volume_ext
        else:
            raise ValueError(f"{group!r} needs volume_ext to bracket the tail beyond radius {R}")
        nv = ball.norms
        elements = ball.elements
        off = None
    if R < 2:
        raise ValueError("nu_phi needs a ball of radius at least 2")

    def vol_at(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        fin = np.isfinite(x)
        if elements is None:
            out[fin] = vol(x[fin])
        else:
            out[fin] = np.array([ball.volume(v) for v in x[fin]]) if x.size < 64 else \
                _ball_volume_lookup(ball, x[fin])
        return out

    def weight(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        fin = np.isfinite(x)
        out[fin] = 1.0 / np.asarray(phi(x[fin]), dtype=float)
        return out

    rc = r_cut or max(4 * R, 1 << 21)
    tail = _integer_level_tail(lambda r: 1.0 / np.asarray(phi(r)), vol, R, rc, shell)
    sup_unnorm = 1.0 / (phi(R + 1.0) * vol(np.array([R + 1.0]))[0])
    meta = {"family": "nu_phi", "phi": phi.label(), "beta": phi.beta, "gamma": phi.gamma}
    return _radial_from_values(group, norm, elements, nv, weight, vol_at, R, tail, sup_unnorm,
                               eps_tail, meta, grid_offset=off)


def build_nu_alpha(group: Group, alpha: float, R: int, **kw) -> SparseMeasure:
    """``nu_alpha(g) = c / ((1+|g|)**alpha V(|g|))`` on a standard lattice."""
    nu = build_nu_phi((group, R), PhiFunction(alpha), **kw)
    nu.meta.update(family="nu_alpha", alpha=alpha)
    return nu


def _ball_volume_lookup(ball: Ball, x: np.ndarray) -> np.ndarray:
    return np.searchsorted(ball._sorted_norms, x + 1e-9, side="right").astype(float)


def _lattice_shell_poly(d: int) -> Callable:
    """``V(r) - V(r-1)`` for the L1 ball of ``Z^d``, without cancellation."""
    from math import comb

    def shell(r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        binom = np.ones_like(r)
        for k in range(1, d + 1):
            if k > 1:
                binom = binom * (r - (k - 1)) / (k - 1)
            out = out + 2**k * comb(d, k) * binom
        return out

    return shell


def _lattice_volume_poly(d: int) -> Callable:
    """Continuous extension of the L1 volume of ``Z^d`` (exact at integers)."""
    from math import comb

    def vol(r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        binom = np.ones_like(r)
        for k in range(d + 1):
            if k:
                binom = binom * (r - (k - 1)) / k
            out = out + 2**k * comb(d, k) * binom
        return out

    return vol


def build_nu_sa_beta(normtable: Ball | tuple[NormWeights, float], beta: float, *,
                     tail: tuple[float, float] | None = None,
                     eps_tail: float = 1e-6) -> SparseMeasure:
    """``nu(g) = c / ((1+||g||)**beta V(||g||))`` for the budgeted norm.

    ``normtable`` comes from :func:`~walklab.geometry.weighted_norm_table`, or is
    ``(weights, R)`` for ``Z^d`` with the standard basis (closed-form norm on a
    dense grid). Non-lattice tables need an explicit unnormalized ``tail``
    bracket.
    """
    if not 0 < beta < 2:
        raise ValueError("beta must lie in (0, 2)")

    def weight(x):
        return (1.0 + np.asarray(x, dtype=float)) ** (-beta)

    if isinstance(normtable, tuple):
        weights, R = normtable
        d = len(weights.a)
        from .groups import lattice
        group = lattice(d)
        norm = WeightedLatticeNorm(weights)
        box = [int(math.floor(R**e + 1e-9)) for e in weights.budget_exponents]
        axes = [np.arange(-b, b + 1) for b in box]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        nv = norm.on_coords(mesh)
        nv = np.where(nv <= R + 1e-9, nv, np.inf)
        off = tuple(-b for b in box)
        elements = None
        vol_closed = norm.volume
    else:
        group = normtable.group
        R = normtable.radius
        norm = TableNorm(normtable)
        nv = normtable.norms
        elements = normtable.elements
        off = None
        weights = None
        vol_closed = None
        if group.standard_basis:
            weights = _weights_from_name(normtable)
            vol_closed = WeightedLatticeNorm(weights).volume

    def vol_at(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        fin = np.isfinite(x)
        if elements is None:
            out[fin] = [vol_closed(v) for v in x[fin]] if x[fin].size < 64 else \
                _vectorized_weighted_volume(weights, x[fin])
        else:
            out[fin] = _ball_volume_lookup(normtable, x[fin])
        return out

    def wfin(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.isfinite(x), weight(np.where(np.isfinite(x), x, 0.0)), 0.0)

    if tail is None:
        if weights is None:
            raise ValueError("non-lattice norm tables need an explicit tail bracket")
        tail = _weighted_lattice_tail(weights, weight, R)
    # largest unmaterialized atom: just beyond R at the smallest next level
    if weights is not None:
        nxt = min((math.floor(R**e + 1e-9) + 1) ** (1.0 / e) for e in weights.budget_exponents)
        sup_unnorm = float(weight(nxt)) / weighted_volume_scalar(weights, nxt)
    else:
        sup_unnorm = float(weight(R)) / max(1.0, float(vol_at(np.array([R]))[0]))
    meta = {"family": "nu_sa_beta", "beta": beta,
            "a": None if weights is None else weights.a}
    return _radial_from_values(group, norm, elements, nv, wfin, vol_at, R, tail, sup_unnorm,
                               eps_tail, meta, grid_offset=off)


def weighted_volume_scalar(weights: NormWeights, r: float) -> float:
    return float(WeightedLatticeNorm(weights).volume(r))


def _vectorized_weighted_volume(weights: NormWeights, x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x)
    for e in weights.budget_exponents:
        out *= 2 * np.floor(x**e + 1e-9) + 1
    return out


def _weights_from_name(ball: Ball) -> NormWeights:
    name = ball.norm_name
    inner = name[name.index("a=(") + 3: name.rindex(")")]
    return NormWeights(tuple(float(x) for x in inner.split(",")))


# -- measures on generator powers ----------------------------------------------------

def _kappa(alpha: float) -> float:
    """``1 / sum_{m in Z} (1+|m|)**-(1+alpha)``."""
    return 1.0 / (2.0 * float(zeta(1.0 + alpha)) - 1.0)


def _power_tail(alpha: float, M: int) -> float:
    """``sum_{m > M} (1+m)**-(1+alpha)`` via the Hurwitz zeta function."""
    return float(zeta(1.0 + alpha, M + 2))


def _auto_M(alpha: float, kappa: float, share: float, cap: int) -> int:
    # smallest M with 2*kappa*tail(M) <= share, found by doubling then bisection
    M = 16
    while M < cap and 2 * kappa * _power_tail(alpha, M) > share:
        M *= 2
    if M >= cap:
        return cap
    lo, hi = M // 2, M
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if 2 * kappa * _power_tail(alpha, mid) > share:
            lo = mid
        else:
            hi = mid
    return hi


def build_mu_sa(group: Group, a: Iterable[float], M: int | Iterable[int] | None = None, *,
                norm: Norm | None = None, tail_tol: float = 1e-8,
                M_cap: int = 1 << 15) -> SparseMeasure:
    """``mu(g) = (1/k) sum_i sum_m kappa_i (1+|m|)**-(1+alpha_i) 1[g = s_i**m]``.

    Each ``kappa_i`` normalizes its own series exactly. Powers ``|m| <= M_i``
    are materialized; ``M_i`` defaults to the smallest value giving total tail
    mass at most ``tail_tol`` (capped at ``M_cap``), and the exact tail mass is
    recorded as the bracket.
    """
    a = tuple(float(x) for x in a)
    k = len(group.generators)
    if len(a) != k:
        raise ValueError(f"{k} generators but {len(a)} exponents")
    if any(x <= 0 for x in a):
        raise ValueError("exponents must be positive")
    kappas = [_kappa(x) for x in a]
    if M is None:
        Ms = [_auto_M(x, kp, tail_tol, M_cap) for x, kp in zip(a, kappas)]
    elif isinstance(M, (int, np.integer)):
        Ms = [int(M)] * k
    else:
        Ms = [int(x) for x in M]
    if norm is None:
        norm = WeightedLatticeNorm(NormWeights(a)) if group.standard_basis else _no_norm(group)
    atoms: dict = {}
    tail = 0.0
    sup = 0.0
    for i, (alpha, kp, Mi) in enumerate(zip(a, kappas, Ms)):
        m = np.arange(-Mi, Mi + 1)
        w = kp / k * (1.0 + np.abs(m)) ** (-(1.0 + alpha))
        for mm, ww in zip(m.tolist(), w.tolist()):
            g = group.generator_power(i, mm)
            atoms[g] = atoms.get(g, 0.0) + ww
        tail += kp / k * 2.0 * _power_tail(alpha, Mi)
        sup += kp / k * (Mi + 2.0) ** (-(1.0 + alpha))
    meta = {"family": "mu_sa", "a": a, "M": tuple(Ms), "kappa": tuple(kappas)}
    return SparseMeasure.from_atoms(group, norm, atoms, tail_lo=tail * (1 - 1e-12),
                                    tail_hi=tail * (1 + 1e-12), sup_err=sup, meta=meta)


def mu_sa_axis(alpha: float, M: int, norm: Norm | None = None) -> SparseMeasure:
    """The one-dimensional law ``kappa (1+|m|)**-(1+alpha)`` on ``Z`` (the
    coordinate marginal of ``mu_{S,a}`` on a standard lattice)."""
    from .groups import lattice
    Z = lattice(1)
    return build_mu_sa(Z, (alpha,), M, norm=norm or LatticeWordNorm(1))


class _NoNorm(Norm):
    def __init__(self, group):
        self.name = f"unnormed:{group!r}"

    def __call__(self, g):
        raise OutOfBall(f"no norm attached; cannot evaluate at {g!r}")


def _no_norm(group: Group) -> Norm:
    return _NoNorm(group)


# -- small explicit measures ---------------------------------------------------------

def lazy_srw(group: Group, laziness: float = 0.5, norm: Norm | None = None) -> SparseMeasure:
    """Lazy simple random walk: stay with probability ``laziness``, else a
    uniformly chosen letter of the Cayley alphabet."""
    alph = group.alphabet()
    atoms = {group.identity: laziness}
    for s in alph:
        atoms[s] = atoms.get(s, 0.0) + (1.0 - laziness) / len(alph)
    if norm is None:
        norm = LatticeWordNorm(group.d) if group.standard_basis else _no_norm(group)
    return SparseMeasure.from_atoms(group, norm, atoms, meta={"family": "lazy_srw",
                                                              "laziness": laziness})


def uniform_measure(group: Group, elements: Iterable, norm: Norm | None = None) -> SparseMeasure:
    els = list(elements)
    atoms: dict = {}
    for g in els:
        g = group.normalize(g)
        atoms[g] = atoms.get(g, 0.0) + 1.0 / len(els)
    if norm is None:
        norm = LatticeWordNorm(group.d) if group.standard_basis else _no_norm(group)
    return SparseMeasure.from_atoms(group, norm, atoms, meta={"family": "uniform"})


# -- wreath products ------------------------------------------------------------------

def build_sws(eta: SparseMeasure, mu: SparseMeasure, wreath_group: Group,
              norm: Norm | None = None) -> SparseMeasure:
    """Switch-walk-switch measure ``q = eta * mu * eta`` on ``K wr H``, with
    ``eta`` on the lamp group and ``mu`` on the base lattice."""
    W = wreath_group
    if eta.group.kind != "cyclic" or eta.group.m != W.m:
        raise ValueError("eta must live on the lamp group of the wreath product")
    if mu.group.kind != "lattice" or mu.group.d != W.d:
        raise ValueError("mu must live on the base lattice of the wreath product")
    e_items = eta.items()
    m_items = mu.items()
    mul = W._mul
    acc: dict = {}
    for k1, a in e_items:
        x1 = embed_lamp(W, k1)
        for h, b in m_items:
            x2 = mul(x1, embed_base(W, h))
            for k2, c in e_items:
                g = mul(x2, embed_lamp(W, k2))
                acc.setdefault(g, []).append(a * b * c)
    atoms = {g: math.fsum(v) for g, v in acc.items()}
    tail = eta.tail_hi * 2 + mu.tail_hi
    return SparseMeasure(W, norm or _no_norm(W), atoms=atoms, tail_lo=0.0, tail_hi=tail,
                         sup_err=tail, meta={"family": "sws"})


# -- truncation ------------------------------------------------------------------------

def _norms_of(nu: SparseMeasure) -> tuple[list, np.ndarray, np.ndarray]:
    if nu.is_grid:
        return None, nu.grid, nu.norm_grid()
    return nu.norm_values()


def truncate_measure(nu: SparseMeasure, R: float) -> tuple[SparseMeasure, float]:
    """Restriction ``nu_R`` of ``nu`` to ``||g|| <= R`` (unnormalized) and the
    tail mass ``delta_R = nu(||g|| > R)``.

    The returned ``nu_R`` is an exactly known sub-probability measure. Its
    ``meta['delta_bracket']`` carries the certified interval for ``delta_R``.
    """
    radius = nu.meta.get("radius")
    if radius is not None and R > radius + 1e-9:
        raise ValueError(f"truncation radius {R} exceeds the materialized radius {radius}")
    els, ms, ns = _norms_of(nu)
    inside = ns <= R + 1e-9
    outside_mass = math.fsum(np.ravel(np.where(inside, 0.0, ms)))
    d_lo = outside_mass + nu.tail_lo
    d_hi = outside_mass + nu.tail_hi
    meta = dict(nu.meta, truncated_at=R, delta_bracket=(d_lo, d_hi), parent_radius=radius)
    meta["radius"] = R
    if nu.is_grid:
        nu_R = SparseMeasure(nu.group, nu.norm, grid=np.where(inside, ms, 0.0), offset=nu.offset,
                             meta=meta)
    else:
        atoms = {g: m for g, m, k in zip(els, ms, inside) if k}
        nu_R = SparseMeasure.from_atoms(nu.group, nu.norm, atoms, meta=meta)
    delta = 0.5 * (d_lo + d_hi)
    return nu_R, delta


def tail_mass(nu: SparseMeasure, R: float) -> float:
    """``delta_R``: mass of ``{||g|| > R}``."""
    return truncate_measure(nu, R)[1]


def second_moment_truncated(nu: SparseMeasure, R: float) -> float:
    """``G(R) = sum_{||x|| <= R} ||x||**2 nu(x)``."""
    radius = nu.meta.get("radius")
    if radius is not None and R > radius + 1e-9:
        raise ValueError(f"radius {R} exceeds the materialized radius {radius}")
    _, ms, ns = _norms_of(nu)
    inside = ns <= R + 1e-9
    return math.fsum(np.ravel(np.where(inside, ms * np.where(inside, ns, 0.0) ** 2, 0.0)))
