"""Metric balls, word length, volume functions and the weighted norm built
from per-generator letter budgets."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import comb

from .groups import Group

__all__ = [
    "CapExceeded",
    "OutOfBall",
    "Ball",
    "NormWeights",
    "Norm",
    "LatticeWordNorm",
    "WeightedLatticeNorm",
    "TableNorm",
    "enumerate_ball",
    "word_length",
    "volume",
    "weighted_norm_table",
    "closed_form_norm_lattice",
    "lattice_word_volume",
    "weighted_lattice_volume",
    "word_norm",
]

DEFAULT_CAP = 5_000_000
_EPS = 1e-9


class CapExceeded(MemoryError):
    """Raised when an enumeration would exceed its configured state cap."""

    def __init__(self, cap: int, what: str = "states"):
        super().__init__(f"enumeration exceeded the cap of {cap} {what}; "
                         f"raise `cap` or lower the radius")
        self.cap = cap


class OutOfBall(KeyError):
    """The element lies outside the enumerated region; its norm is unknown
    (which is not the same as the norm being large)."""


@dataclass(frozen=True)
class NormWeights:
    """Exponents ``a`` of a measure supported on generator powers, with the
    derived capped exponents and letter-budget exponents."""

    a: tuple[float, ...]

    def __post_init__(self):
        if len(self.a) == 0 or any(not (x > 0) for x in self.a):
            raise ValueError(f"weights must be positive, got {self.a}")
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))

    @property
    def alpha_tilde(self) -> tuple[float, ...]:
        return tuple(min(x, 2.0) for x in self.a)

    @property
    def alpha_star(self) -> float:
        return max(self.alpha_tilde)

    @property
    def budget_exponents(self) -> tuple[float, ...]:
        """``alpha_* / alpha~_i``: generator ``i`` may be used ``r**e_i`` times
        within norm ``r``."""
        s = self.alpha_star
        return tuple(s / t for t in self.alpha_tilde)

    @property
    def norm_exponents(self) -> tuple[float, ...]:
        s = self.alpha_star
        return tuple(t / s for t in self.alpha_tilde)

    @property
    def growth_degree(self) -> float:
        """Volume growth exponent of the weighted norm on ``Z^d`` with the
        standard basis: ``sum_i alpha_* / alpha~_i``."""
        return float(sum(self.budget_exponents))


# -- norms -------------------------------------------------------------------

class Norm:
    """A norm on a group. Subclasses provide scalar and (for lattices)
    vectorized evaluation."""

    name = "norm"
    integer_valued = False

    def __call__(self, g: Any) -> float:
        raise NotImplementedError

    def on_coords(self, coords: np.ndarray) -> np.ndarray:
        """Evaluate on an array of lattice points with trailing axis ``d``."""
        flat = coords.reshape(-1, coords.shape[-1])
        out = np.array([self(tuple(int(v) for v in row)) for row in flat], dtype=float)
        return out.reshape(coords.shape[:-1])

    def volume(self, r: float) -> int:
        raise NotImplementedError(f"{self.name} has no closed-form volume")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Norm) and self.name == other.name

    def __hash__(self) -> int:
        return hash(self.name)


class LatticeWordNorm(Norm):
    """Word length on ``Z^d`` for the standard basis (the L1 norm)."""

    integer_valued = True

    def __init__(self, d: int):
        self.d = d
        self.name = f"word:Lattice({d})"

    def __call__(self, g) -> float:
        return float(sum(abs(int(v)) for v in g))

    def on_coords(self, coords: np.ndarray) -> np.ndarray:
        return np.abs(coords).sum(axis=-1).astype(float)

    def volume(self, r: float) -> int:
        return lattice_word_volume(self.d, r)


class WeightedLatticeNorm(Norm):
    """Closed form of the budgeted norm on ``Z^d`` with the standard basis."""

    def __init__(self, weights: NormWeights):
        self.weights = weights
        self.d = len(weights.a)
        self.name = "weighted:Lattice(%d):a=(%s)" % (self.d, ",".join(f"{x:g}" for x in weights.a))

    def __call__(self, g) -> float:
        return closed_form_norm_lattice(self.weights, g)

    def on_coords(self, coords: np.ndarray) -> np.ndarray:
        p = np.asarray(self.weights.norm_exponents)
        return (np.abs(coords).astype(float) ** p).max(axis=-1)

    def volume(self, r: float) -> int:
        return weighted_lattice_volume(self.weights, r)


class TableNorm(Norm):
    """Norm read from an enumerated :class:`Ball`; unknown outside it."""

    def __init__(self, ball: "Ball"):
        self.ball = ball
        self.integer_valued = ball.integer_valued
        self.name = ball.norm_name

    def __call__(self, g) -> float:
        return self.ball.norm(g)

    def volume(self, r: float) -> int:
        return self.ball.volume(r)


def word_norm(group: Group) -> Norm:
    """Closed-form word norm when one is available."""
    if group.standard_basis:
        return LatticeWordNorm(group.d)
    raise NotImplementedError(f"no closed-form word norm for {group!r}; enumerate a ball instead")


# -- balls -------------------------------------------------------------------

@dataclass
class Ball:
    """An enumerated metric ball with a stable element index."""

    group: Group
    radius: float
    elements: list
    norms: np.ndarray
    norm_name: str = "word"
    integer_valued: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index_of = {g: i for i, g in enumerate(self.elements)}
        order = np.argsort(self.norms, kind="stable")
        self._sorted_norms = self.norms[order]

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, g) -> bool:
        return g in self.index_of

    def norm_of(self, g) -> float:
        return self.norm(g)

    def norm(self, g) -> float:
        try:
            return float(self.norms[self.index_of[g]])
        except KeyError:
            raise OutOfBall(f"{g!r} lies outside the ball of radius {self.radius}") from None

    def volume(self, r: float) -> int:
        if r > self.radius + _EPS:
            raise ValueError(f"volume requested at r={r} beyond ball radius {self.radius}")
        return int(np.searchsorted(self._sorted_norms, r + _EPS, side="right"))

    def levels(self) -> np.ndarray:
        """Distinct norm values, ascending."""
        return np.unique(self.norms)

    def as_norm(self) -> TableNorm:
        return TableNorm(self)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# group={self.group!r} radius={self.radius} norm={self.norm_name}\n")
            for k, v in self.meta.items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["element_key", "norm"])
            for g, n in zip(self.elements, self.norms):
                w.writerow([self.group.canonical_key(g).hex(), repr(float(n))])


def enumerate_ball(group: Group, r: float, cap: int = DEFAULT_CAP) -> Ball:
    """Breadth-first closure of the identity under the Cayley alphabet, up to
    word length ``floor(r)``."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    rmax = int(math.floor(r + _EPS))
    alphabet = group.alphabet()
    mul = group._mul
    dist = {group.identity: 0}
    order = [group.identity]
    frontier = [group.identity]
    for level in range(1, rmax + 1):
        nxt = []
        for g in frontier:
            for s in alphabet:
                h = mul(g, s)
                if h not in dist:
                    dist[h] = level
                    nxt.append(h)
                    if len(dist) > cap:
                        raise CapExceeded(cap, "ball elements")
        order.extend(nxt)
        frontier = nxt
        if not nxt:
            break
    norms = np.array([dist[g] for g in order], dtype=float)
    return Ball(group, float(r), order, norms, norm_name=f"word:{group!r}",
                integer_valued=True, meta={"cap": cap})


def word_length(ball: Ball, g) -> float:
    return ball.norm(g)


def volume(ball: Ball, r: float) -> int:
    return ball.volume(r)


def lattice_word_volume(d: int, r: float) -> int:
    """Number of points of ``Z^d`` with L1 norm at most ``r``."""
    if r < 0:
        return 0
    n = int(math.floor(r + _EPS))
    return int(sum(2**k * comb(d, k, exact=True) * comb(n, k, exact=True) for k in range(d + 1)))


def weighted_lattice_volume(weights: NormWeights, r: float) -> int:
    if r < 0:
        return 0
    out = 1
    for e in weights.budget_exponents:
        out *= 2 * int(math.floor(r**e + _EPS)) + 1
    return out


def closed_form_norm_lattice(weights: NormWeights, v: Sequence[int]) -> float:
    """``max_i |v_i| ** (alpha~_i / alpha_*)`` on ``Z^d`` with the standard basis."""
    if len(v) != len(weights.a):
        raise ValueError("dimension mismatch between weights and vector")
    return max((abs(int(x)) ** p if x else 0.0) for x, p in zip(v, weights.norm_exponents))


def weighted_norm_table(group: Group, weights: NormWeights, r_max: float,
                        cap: int = DEFAULT_CAP) -> Ball:
    """Exact budgeted norm on every element reachable within the letter budgets
    ``floor(r_max ** (alpha_*/alpha~_i))``.

    Multi-budget BFS over ``(element, count vector)`` states. A count vector is
    kept only when no stored vector for the same element is componentwise
    smaller; states are expanded in order of total letter count, so a later
    vector can never dominate an earlier one.
    """
    k = len(group.generators)
    if len(weights.a) != k:
        raise ValueError(f"{k} generators but {len(weights.a)} weights")
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    expo = weights.budget_exponents
    budgets = tuple(int(math.floor(r_max**e + _EPS)) for e in expo)
    p = weights.norm_exponents
    mul = group._mul
    letters = []
    for i, s in enumerate(group.generators):
        letters.append((i, s))
        inv = group._inv(s)
        if inv != s:
            letters.append((i, inv))

    fronts: dict[Any, list[tuple[int, ...]]] = {group.identity: [(0,) * k]}
    nstates = 1
    frontier = [(group.identity, (0,) * k)]
    while frontier:
        nxt = []
        for g, c in frontier:
            for i, s in letters:
                if c[i] >= budgets[i]:
                    continue
                c2 = c[:i] + (c[i] + 1,) + c[i + 1:]
                h = mul(g, s)
                front = fronts.get(h)
                if front is None:
                    fronts[h] = [c2]
                else:
                    if any(all(a <= b for a, b in zip(f, c2)) for f in front):
                        continue
                    front.append(c2)
                nstates += 1
                if nstates > cap:
                    raise CapExceeded(cap)
                nxt.append((h, c2))
        frontier = nxt

    elements = list(fronts)
    norms = np.empty(len(elements))
    for j, g in enumerate(elements):
        norms[j] = min(max((ci**pi if ci else 0.0) for ci, pi in zip(c, p)) for c in fronts[g])
    # only elements whose norm is certified by the budgets are kept
    keep = norms <= r_max + _EPS
    elements = [g for g, kp in zip(elements, keep) if kp]
    norms = norms[keep]
    order = np.lexsort((np.arange(len(norms)), norms))
    elements = [elements[i] for i in order]
    norms = norms[order]
    name = "weighted:%r:a=(%s)" % (group, ",".join(f"{x:g}" for x in weights.a))
    return Ball(group, float(r_max), elements, norms, norm_name=name, integer_valued=False,
                meta={"cap": cap, "budgets": budgets, "states": nstates})
