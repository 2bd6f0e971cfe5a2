"""Concrete finitely generated groups: lattices, the discrete Heisenberg group,
cyclic lamp groups and lamplighter groups over lattices.

Elements are plain hashable tuples (or ints for cyclic groups) in a unique
normal form, so they can be used directly as dictionary keys:

* ``Lattice(d)``: ``(v_1, ..., v_d)``
* ``Heisenberg3``: ``(x, y, z)`` with law
  ``(x1,y1,z1)(x2,y2,z2) = (x1+x2, y1+y2, z1+z2+x1*y2)``
* ``CyclicLamp(m)``: residue ``r`` in ``range(m)``
* ``WreathLampOverLattice(m, d)``: ``(lamps, pos)`` where ``lamps`` is a tuple of
  ``(position, residue)`` pairs sorted by position with zero residues removed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

__all__ = [
    "GroupError",
    "GroupSpec",
    "Group",
    "make_group",
    "lattice",
    "heisenberg",
    "cyclic_lamp",
    "wreath",
]

INT64_MAX = 2**63 - 1
INT32_MAX = 2**31 - 1

KINDS = ("lattice", "heisenberg", "cyclic", "wreath")


class GroupError(ValueError):
    """Malformed group specification or element."""


def _checked(v: int) -> int:
    if v > INT64_MAX or v < -INT64_MAX - 1:
        raise OverflowError(f"coordinate {v} overflows int64")
    return v


@dataclass(frozen=True)
class GroupSpec:
    """Declarative description of a catalog group.

    ``generators`` may be omitted, in which case the standard generating tuple
    is used (basis vectors; ``x, y`` for Heisenberg; the unit residue; the lamp
    switch followed by the base basis for wreath products).
    """

    kind: str
    d: int | None = None
    m: int | None = None
    generators: tuple | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "d": self.d, "m": self.m,
                "generators": None if self.generators is None else list(self.generators)}


class Group:
    """Handle exposing identity, multiplication, inversion and generators."""

    def __init__(self, spec: GroupSpec):
        kind = spec.kind
        if kind not in KINDS:
            raise GroupError(f"unknown group kind {kind!r}; expected one of {KINDS}")
        self.spec = spec
        self.kind = kind
        self.d = 0
        self.m = 0
        if kind in ("lattice", "wreath"):
            if spec.d is None or spec.d < 1:
                raise GroupError(f"{kind} requires d >= 1, got {spec.d}")
            self.d = int(spec.d)
        if kind in ("cyclic", "wreath"):
            if spec.m is None or spec.m < 2:
                raise GroupError(f"{kind} requires m >= 2, got {spec.m}")
            self.m = int(spec.m)
        if kind == "heisenberg":
            self.d = 3

        if kind == "lattice":
            self.identity = (0,) * self.d
        elif kind == "heisenberg":
            self.identity = (0, 0, 0)
        elif kind == "cyclic":
            self.identity = 0
        else:
            self.identity = ((), (0,) * self.d)

        gens = spec.generators if spec.generators is not None else self._standard_generators()
        gens = tuple(self.normalize(g) for g in gens)
        if len(gens) == 0:
            raise GroupError("generator tuple must be nonempty")
        for g in gens:
            if g == self.identity:
                raise GroupError("generators must differ from the identity")
        self.generators = gens

    # -- construction helpers -------------------------------------------------
    def _standard_generators(self) -> tuple:
        if self.kind == "lattice":
            return tuple(tuple(int(i == j) for j in range(self.d)) for i in range(self.d))
        if self.kind == "heisenberg":
            return ((1, 0, 0), (0, 1, 0))
        if self.kind == "cyclic":
            return (1,)
        zero = (0,) * self.d
        lamp = (((zero, 1),), zero)
        base = tuple(((), tuple(int(i == j) for j in range(self.d))) for i in range(self.d))
        return (lamp,) + base

    def __repr__(self) -> str:
        if self.kind == "lattice":
            return f"Lattice({self.d})"
        if self.kind == "heisenberg":
            return "Heisenberg3"
        if self.kind == "cyclic":
            return f"CyclicLamp({self.m})"
        return f"WreathLampOverLattice({self.m}, {self.d})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Group) and (self.kind, self.d, self.m, self.generators) == (
            other.kind, other.d, other.m, other.generators)

    def __hash__(self) -> int:
        return hash((self.kind, self.d, self.m, self.generators))

    @property
    def is_abelian(self) -> bool:
        return self.kind in ("lattice", "cyclic")

    @property
    def standard_basis(self) -> bool:
        """True for a lattice generated by its standard basis vectors."""
        return self.kind == "lattice" and self.generators == self._standard_generators()

    # -- validation -----------------------------------------------------------
    def normalize(self, g: Any) -> Any:
        """Coerce ``g`` into normal form, raising :class:`GroupError` if it is
        not an element of this group."""
        k = self.kind
        try:
            if k == "cyclic":
                if isinstance(g, (tuple, list)):
                    raise GroupError(f"{self!r} elements are residues, got {g!r}")
                return int(g) % self.m
            if k in ("lattice", "heisenberg"):
                t = tuple(int(x) for x in g)
                if len(t) != self.d:
                    raise GroupError(f"{self!r} elements have {self.d} coordinates, got {g!r}")
                return tuple(_checked(x) for x in t)
            lamps, pos = g
            pos = tuple(int(x) for x in pos)
            if len(pos) != self.d:
                raise GroupError(f"bad wreath position {pos!r}")
            if isinstance(lamps, dict):
                lamps = lamps.items()
            acc: dict[tuple, int] = {}
            for p, v in lamps:
                p = tuple(int(x) for x in (p if isinstance(p, (tuple, list)) else (p,)))
                if len(p) != self.d:
                    raise GroupError(f"bad lamp position {p!r}")
                acc[p] = (acc.get(p, 0) + int(v)) % self.m
            return (tuple(sorted((p, v) for p, v in acc.items() if v)), pos)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, GroupError):
                raise
            raise GroupError(f"{g!r} is not an element of {self!r}") from exc

    def contains(self, g: Any) -> bool:
        try:
            return self.normalize(g) == g
        except GroupError:
            return False

    def _require(self, g: Any) -> None:
        if not self.contains(g):
            raise GroupError(f"{g!r} is not a normal-form element of {self!r}")

    # -- group law ------------------------------------------------------------
    def multiply(self, g: Any, h: Any) -> Any:
        self._require(g)
        self._require(h)
        return self._mul(g, h)

    def _mul(self, g: Any, h: Any) -> Any:
        k = self.kind
        if k == "lattice":
            return tuple(_checked(a + b) for a, b in zip(g, h))
        if k == "heisenberg":
            return (_checked(g[0] + h[0]), _checked(g[1] + h[1]),
                    _checked(g[2] + h[2] + g[0] * h[1]))
        if k == "cyclic":
            return (g + h) % self.m
        (f1, p1), (f2, p2) = g, h
        if not f2:
            return (f1, tuple(_checked(a + b) for a, b in zip(p1, p2)))
        acc = dict(f1)
        m = self.m
        for q, v in f2:
            q = tuple(a + b for a, b in zip(q, p1))
            nv = (acc.get(q, 0) + v) % m
            if nv:
                acc[q] = nv
            else:
                acc.pop(q, None)
        return (tuple(sorted(acc.items())), tuple(_checked(a + b) for a, b in zip(p1, p2)))

    def inverse(self, g: Any) -> Any:
        self._require(g)
        return self._inv(g)

    def _inv(self, g: Any) -> Any:
        k = self.kind
        if k == "lattice":
            return tuple(-a for a in g)
        if k == "heisenberg":
            x, y, z = g
            return (-x, -y, _checked(x * y - z))
        if k == "cyclic":
            return (-g) % self.m
        f, p = g
        m = self.m
        lamps = tuple(sorted((tuple(a - b for a, b in zip(q, p)), (-v) % m) for q, v in f))
        return (lamps, tuple(-a for a in p))

    def power(self, g: Any, n: int) -> Any:
        """``g**n`` by closed form where available, else repeated squaring."""
        self._require(g)
        if n < 0:
            return self.power(self._inv(g), -n)
        k = self.kind
        if k == "lattice":
            return tuple(_checked(n * a) for a in g)
        if k == "heisenberg":
            x, y, z = g
            return (_checked(n * x), _checked(n * y), _checked(n * z + x * y * (n * (n - 1) // 2)))
        if k == "cyclic":
            return (n * g) % self.m
        result, base = self.identity, g
        while n:
            if n & 1:
                result = self._mul(result, base)
            base = self._mul(base, base)
            n >>= 1
        return result

    def generator_power(self, i: int, m: int) -> Any:
        if not 0 <= i < len(self.generators):
            raise IndexError(f"generator index {i} out of range for {len(self.generators)} generators")
        return self.power(self.generators[i], m)

    def alphabet(self) -> tuple:
        """Cayley alphabet: each generator and its inverse, deduplicated in order."""
        out: list = []
        for s in self.generators:
            for t in (s, self._inv(s)):
                if t not in out:
                    out.append(t)
        return tuple(out)

    # -- serialization --------------------------------------------------------
    def canonical_key(self, g: Any) -> bytes:
        """Injective byte encoding of ``g``; inverse of :meth:`decode`."""
        self._require(g)
        k = self.kind
        if k == "lattice":
            for a in g:
                if abs(a) > INT32_MAX:
                    raise OverflowError(f"lattice coordinate {a} exceeds the int32 key range")
            return struct.pack(f"<{self.d}i", *g)
        if k == "heisenberg":
            return struct.pack("<3q", *g)
        if k == "cyclic":
            return struct.pack("<I", g)
        f, p = g
        parts = [struct.pack("<I", len(f))]
        fmt = f"<{self.d}iI"
        for q, v in f:
            parts.append(struct.pack(fmt, *q, v))
        parts.append(struct.pack(f"<{self.d}i", *p))
        return b"".join(parts)

    def decode(self, key: bytes) -> Any:
        k = self.kind
        if k == "lattice":
            return tuple(struct.unpack(f"<{self.d}i", key))
        if k == "heisenberg":
            return tuple(struct.unpack("<3q", key))
        if k == "cyclic":
            return struct.unpack("<I", key)[0]
        (count,) = struct.unpack_from("<I", key, 0)
        off = 4
        fmt = f"<{self.d}iI"
        size = struct.calcsize(fmt)
        lamps = []
        for _ in range(count):
            vals = struct.unpack_from(fmt, key, off)
            lamps.append((tuple(vals[:-1]), vals[-1]))
            off += size
        pos = tuple(struct.unpack_from(f"<{self.d}i", key, off))
        return (tuple(lamps), pos)

    # -- random elements ------------------------------------------------------
    def random_element(self, rng: np.random.Generator, scale: int = 5) -> Any:
        """Random element with coordinates of order ``scale``; for property tests."""
        k = self.kind
        if k == "cyclic":
            return int(rng.integers(self.m))
        if k in ("lattice", "heisenberg"):
            return tuple(int(v) for v in rng.integers(-scale, scale + 1, size=self.d))
        nl = int(rng.integers(0, 4))
        lamps = [(tuple(int(v) for v in rng.integers(-scale, scale + 1, size=self.d)),
                  int(rng.integers(1, self.m))) for _ in range(nl)]
        pos = tuple(int(v) for v in rng.integers(-scale, scale + 1, size=self.d))
        return self.normalize((lamps, pos))


def make_group(spec: GroupSpec) -> Group:
    return Group(spec)


def lattice(d: int, generators: Sequence | None = None) -> Group:
    return Group(GroupSpec("lattice", d=d, generators=None if generators is None else tuple(generators)))


def heisenberg(generators: Sequence | None = None) -> Group:
    return Group(GroupSpec("heisenberg", generators=None if generators is None else tuple(generators)))


def cyclic_lamp(m: int) -> Group:
    return Group(GroupSpec("cyclic", m=m))


def wreath(m: int, d: int = 1) -> Group:
    return Group(GroupSpec("wreath", m=m, d=d))


def base_group(w: Group) -> Group:
    """The lattice ``H`` of a lamplighter group ``K wr H``."""
    if w.kind != "wreath":
        raise GroupError(f"{w!r} is not a wreath product")
    return lattice(w.d)


def lamp_group(w: Group) -> Group:
    if w.kind != "wreath":
        raise GroupError(f"{w!r} is not a wreath product")
    return cyclic_lamp(w.m)


def embed_lamp(w: Group, k: int) -> Any:
    """``k`` in ``K`` as the element switching the lamp at the base identity."""
    zero = (0,) * w.d
    return w.normalize((((zero, k),), zero))


def embed_base(w: Group, h: Sequence[int]) -> Any:
    return w.normalize(((), tuple(h)))
