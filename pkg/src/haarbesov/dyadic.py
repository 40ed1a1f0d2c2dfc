"""Dyadic cubes and sparse adaptive step functions.

Cube geometry is exact: coordinates and measures are ``mpq``.  A
:class:`StepFunction` is a sparse map from pairwise disjoint dyadic cubes to
Values, with the value 0 on the rest of its domain.  Two domains exist: the
unit cube ``I^d = [0,1)^d`` and the enlarged cube ``[-1,2)^d`` used by the
neighbor diagnostics.
"""
from __future__ import annotations

import itertools
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

from gmpy2 import mpfr, mpq

from .values import exact, from_hex, to_hex, value

__all__ = [
    "UNIT", "ENLARGED", "DyadicCube", "StepFunction", "refine_to_common",
    "average", "average_exact", "integral_over", "measure_support",
    "level_integrals", "zero", "constant", "indicator", "from_uniform",
    "dumps", "loads", "save", "load",
]

UNIT = "unit"
ENLARGED = "enlarged"
_DOMAINS = (UNIT, ENLARGED)


class DyadicCube(NamedTuple):
    """The cube prod_m [(i_m - 1) 2^-k, i_m 2^-k) with 1-based indices."""

    level: int
    index: tuple

    @classmethod
    def unit(cls, d: int) -> "DyadicCube":
        return cls(0, (1,) * d)

    @classmethod
    def of(cls, level: int, index: Sequence[int]) -> "DyadicCube":
        if level < 0:
            raise ValueError("cube level must be nonnegative")
        return cls(int(level), tuple(int(i) for i in index))

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def side(self) -> mpq:
        return mpq(1, 1 << self.level)

    @property
    def measure(self) -> mpq:
        return mpq(1, 1 << (self.level * len(self.index)))

    def lower(self) -> tuple:
        n = 1 << self.level
        return tuple(mpq(i - 1, n) for i in self.index)

    def upper(self) -> tuple:
        n = 1 << self.level
        return tuple(mpq(i, n) for i in self.index)

    def center(self) -> tuple:
        n = 2 << self.level
        return tuple(mpq(2 * i - 1, n) for i in self.index)

    def parent(self) -> "DyadicCube":
        if self.level == 0:
            raise ValueError("level-0 cube has no parent")
        return DyadicCube(self.level - 1, tuple(((i - 1) >> 1) + 1 for i in self.index))

    def ancestor(self, level: int) -> "DyadicCube":
        shift = self.level - level
        if shift < 0:
            raise ValueError("ancestor level exceeds cube level")
        if shift == 0:
            return self
        return DyadicCube(level, tuple(((i - 1) >> shift) + 1 for i in self.index))

    def children(self) -> list:
        base = [2 * (i - 1) + 1 for i in self.index]
        lev = self.level + 1
        return [DyadicCube(lev, tuple(b + e for b, e in zip(base, off)))
                for off in itertools.product((0, 1), repeat=len(base))]

    def offset(self) -> tuple:
        """Position (0 = lower half, 1 = upper half) inside the parent, per axis."""
        return tuple((i - 1) & 1 for i in self.index)

    def descendants(self, level: int) -> Iterator["DyadicCube"]:
        shift = level - self.level
        if shift < 0:
            raise ValueError("descendant level below cube level")
        n = 1 << shift
        ranges = [range((i - 1) * n + 1, i * n + 1) for i in self.index]
        for idx in itertools.product(*ranges):
            yield DyadicCube(level, idx)

    def contains(self, other: "DyadicCube") -> bool:
        """True if ``other`` is a (not necessarily strict) subcube."""
        return other.level >= self.level and other.ancestor(self.level) == self

    def overlaps(self, other: "DyadicCube") -> bool:
        return self.contains(other) or other.contains(self)

    def in_unit(self) -> bool:
        n = 1 << self.level
        return all(1 <= i <= n for i in self.index)

    def in_enlarged(self) -> bool:
        n = 1 << self.level
        return all(1 - n <= i <= 2 * n for i in self.index)

    def contains_point(self, x: Sequence) -> bool:
        n = 1 << self.level
        return all(i - 1 <= mpq(xi) * n < i for i, xi in zip(self.index, x))

    def __repr__(self) -> str:
        return f"DyadicCube({self.level}, {self.index})"


def _in_domain(cube: DyadicCube, domain: str) -> bool:
    return cube.in_unit() if domain == UNIT else cube.in_enlarged()


class StepFunction:
    """Piecewise constant function on a finite set of disjoint dyadic cubes.

    Parameters
    ----------
    dim : int
        Spatial dimension d.
    leaves : mapping, optional
        ``DyadicCube`` (or ``(level, index)`` pair) to value.  Values are
        rounded once to the current precision.
    domain : {"unit", "enlarged"}
        ``"unit"`` is I^d, ``"enlarged"`` is [-1,2)^d.
    """

    __slots__ = ("dim", "domain", "_leaves", "_exact")

    def __init__(self, dim: int, leaves: Mapping | Iterable = (), domain: str = UNIT,
                 *, check: bool = True):
        if dim < 1:
            raise ValueError("dimension must be positive")
        if domain not in _DOMAINS:
            raise ValueError(f"unknown domain {domain!r}")
        items = leaves.items() if isinstance(leaves, Mapping) else leaves
        store = {}
        for c, v in items:
            if not isinstance(c, DyadicCube):
                c = DyadicCube.of(c[0], c[1])
            if c in store:
                raise ValueError(f"duplicate leaf {c}")
            store[c] = v if isinstance(v, type(mpfr(0))) else value(v)
        self.dim = dim
        self.domain = domain
        self._leaves = dict(sorted(store.items()))
        self._exact = None
        if check:
            self._validate()

    @classmethod
    def _trusted(cls, dim: int, leaves: dict, domain: str = UNIT, *, presorted=False) -> "StepFunction":
        obj = cls.__new__(cls)
        obj.dim = dim
        obj.domain = domain
        obj._leaves = leaves if presorted else dict(sorted(leaves.items()))
        obj._exact = None
        return obj

    def _validate(self) -> None:
        levels = sorted({c.level for c in self._leaves})
        for c in self._leaves:
            if c.dim != self.dim:
                raise ValueError(f"leaf {c} has dimension {c.dim}, expected {self.dim}")
            if not _in_domain(c, self.domain):
                raise ValueError(f"leaf {c} lies outside the {self.domain} domain")
        for c in self._leaves:
            for lev in levels:
                if lev >= c.level:
                    break
                if c.ancestor(lev) in self._leaves:
                    raise ValueError(f"leaves {c.ancestor(lev)} and {c} overlap")

    # --- access -------------------------------------------------------
    @property
    def leaves(self) -> Mapping:
        return MappingProxyType(self._leaves)

    def items(self):
        return self._leaves.items()

    def __len__(self) -> int:
        return len(self._leaves)

    def exact_values(self) -> dict:
        """Leaf values as exact rationals (cached)."""
        if self._exact is None:
            self._exact = {c: exact(v) for c, v in self._leaves.items()}
        return self._exact

    @property
    def max_level(self) -> int:
        return max((c.level for c in self._leaves), default=0)

    def in_level(self, level: int) -> bool:
        """True if the function belongs to S_level (every leaf has level <= level)."""
        return self.max_level <= level

    def value_at(self, x: Sequence) -> mpfr:
        for c, v in self._leaves.items():
            if c.contains_point(x):
                return v
        return mpfr(0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepFunction):
            return NotImplemented
        return (self.dim == other.dim and self.domain == other.domain
                and self._leaves == other._leaves)

    def __hash__(self) -> int:
        return hash((self.dim, self.domain, tuple(self._leaves.items())))

    def __repr__(self) -> str:
        return f"StepFunction(dim={self.dim}, leaves={len(self._leaves)}, max_level={self.max_level})"

    def same_function(self, other: "StepFunction") -> bool:
        """Pointwise equality, independent of the leaf representation."""
        a, b = refine_to_common(self.nonzero(), other.nonzero())
        return a._leaves == b._leaves

    # --- derived functions -------------------------------------------
    def nonzero(self) -> "StepFunction":
        return StepFunction._trusted(
            self.dim, {c: v for c, v in self._leaves.items() if v != 0}, self.domain, presorted=True)

    def integral(self) -> mpq:
        ex = self.exact_values()
        return sum((c.measure * ex[c] for c in self._leaves), mpq(0))

    def map_values(self, fn) -> "StepFunction":
        return StepFunction._trusted(
            self.dim, {c: fn(v) for c, v in self._leaves.items()}, self.domain, presorted=True)

    def scale(self, c) -> "StepFunction":
        c = value(c)
        return self.map_values(lambda v: v * c)

    def __neg__(self) -> "StepFunction":
        return self.map_values(lambda v: -v)

    def __mul__(self, c) -> "StepFunction":
        return self.scale(c)

    __rmul__ = __mul__

    def _combine(self, other: "StepFunction", op) -> "StepFunction":
        a, b = refine_to_common(self, other)
        return StepFunction._trusted(
            self.dim, {c: op(v, b._leaves[c]) for c, v in a._leaves.items()}, self.domain,
            presorted=True)

    def __add__(self, other: "StepFunction") -> "StepFunction":
        return self._combine(other, lambda x, y: x + y)

    def __sub__(self, other: "StepFunction") -> "StepFunction":
        return self._combine(other, lambda x, y: x - y)

    def refined(self, level: int) -> "StepFunction":
        """Same function with every leaf coarser than ``level`` split down to it."""
        out = {}
        for c, v in self._leaves.items():
            if c.level >= level:
                out[c] = v
            else:
                for ch in c.descendants(level):
                    out[ch] = v
        return StepFunction._trusted(self.dim, out, self.domain)

    def with_domain(self, domain: str) -> "StepFunction":
        """Zero extension to (or restriction check into) another domain."""
        return StepFunction(self.dim, self._leaves, domain)

    def covering(self) -> list:
        """A partition of the whole domain into cubes, as (cube, value) pairs.

        Gaps between leaves are filled with the coarsest possible zero cubes.
        """
        if self.domain == UNIT:
            roots = [DyadicCube.unit(self.dim)]
        else:
            roots = [DyadicCube(0, idx) for idx in itertools.product((0, 1, 2), repeat=self.dim)]
        pieces = _overlay(list(self._leaves) + roots)
        return [(c, _lookup(self._leaves, c)) for c in pieces]


def _lookup(leaves: Mapping, cube: DyadicCube) -> mpfr:
    """Value of the function on ``cube``, which must not straddle leaves."""
    c = cube
    while True:
        v = leaves.get(c)
        if v is not None:
            return v
        if c.level == 0:
            return mpfr(0)
        c = c.parent()


def _overlay(cubes: Iterable[DyadicCube]) -> list:
    """Coarsest partition of the union of ``cubes`` refining every one of them."""
    cubes = set(cubes)
    split = set()
    for c in cubes:
        a = c
        while a.level > 0:
            a = a.parent()
            if a in split:
                break
            split.add(a)
    roots = []
    for c in cubes:
        a, top = c, True
        while a.level > 0:
            a = a.parent()
            if a in cubes:
                top = False
                break
        if top:
            roots.append(c)
    pieces = []
    stack = roots
    while stack:
        c = stack.pop()
        if c in split:
            stack.extend(c.children())
        else:
            pieces.append(c)
    pieces.sort()
    return pieces


def refine_to_common(f: StepFunction, g: StepFunction) -> tuple:
    """Represent ``f`` and ``g`` on one common set of leaves."""
    if f.dim != g.dim:
        raise ValueError(f"dimension mismatch: {f.dim} vs {g.dim}")
    if f.domain != g.domain:
        raise ValueError("domain mismatch")
    if f._leaves.keys() == g._leaves.keys():
        return f, g
    pieces = _overlay(itertools.chain(f._leaves, g._leaves))
    fa = {c: _lookup(f._leaves, c) for c in pieces}
    ga = {c: _lookup(g._leaves, c) for c in pieces}
    return (StepFunction._trusted(f.dim, fa, f.domain, presorted=True),
            StepFunction._trusted(g.dim, ga, g.domain, presorted=True))


def _check_cube(f: StepFunction, cube: DyadicCube) -> None:
    if cube.dim != f.dim:
        raise ValueError("cube dimension does not match the function")
    if not _in_domain(cube, f.domain):
        raise ValueError(f"{cube} lies outside the {f.domain} domain")


def integral_over(f: StepFunction, cube: DyadicCube) -> mpq:
    """Exact integral of ``f`` over ``cube``."""
    _check_cube(f, cube)
    ex = f.exact_values()
    total = mpq(0)
    for c in f._leaves:
        if c.level <= cube.level:
            if cube.ancestor(c.level) == c:
                return cube.measure * ex[c]
        elif c.ancestor(cube.level) == cube:
            total += c.measure * ex[c]
    return total


def average_exact(f: StepFunction, cube: DyadicCube) -> mpq:
    return integral_over(f, cube) / cube.measure


def average(f: StepFunction, cube: DyadicCube) -> mpfr:
    """Mean value of ``f`` over ``cube``, rounded once."""
    return mpfr(average_exact(f, cube))


def measure_support(f: StepFunction) -> mpq:
    return sum((c.measure for c, v in f._leaves.items() if v != 0), mpq(0))


def level_integrals(f: StepFunction, k: int) -> tuple:
    """Integrals of ``f`` over the level-k cubes meeting finer leaves.

    Returns ``(fine, coarse)``: ``fine`` maps level-k cubes to exact integrals
    of the leaves of level >= k inside them; ``coarse`` lists the leaves of
    level < k as ``(cube, value)``.
    """
    ex = f.exact_values()
    fine = {}
    coarse = []
    for c, v in f._leaves.items():
        if c.level >= k:
            a = c.ancestor(k)
            fine[a] = fine.get(a, 0) + c.measure * ex[c]
        else:
            coarse.append((c, v))
    return fine, coarse


# --- constructors ------------------------------------------------------
def zero(d: int, domain: str = UNIT) -> StepFunction:
    return StepFunction._trusted(d, {}, domain)


def constant(d: int, c=1) -> StepFunction:
    return StepFunction(d, {DyadicCube.unit(d): c})


def indicator(cube: DyadicCube, c=1, domain: str = UNIT) -> StepFunction:
    return StepFunction(cube.dim, {cube: c}, domain)


def from_uniform(d: int, level: int, values) -> StepFunction:
    """Uniform level step function from values in lexicographic index order.

    ``values`` may be a flat sequence of length 2^(level*d) or a nested
    array of shape (2^level,)*d indexed by ``index - 1``.
    """
    n = 1 << level
    flat = list(_flatten(values))
    if len(flat) != n ** d:
        raise ValueError(f"expected {n ** d} values, got {len(flat)}")
    cubes = (DyadicCube(level, tuple(i + 1 for i in idx))
             for idx in itertools.product(range(n), repeat=d))
    return StepFunction._trusted(d, {c: value(v) for c, v in zip(cubes, flat)})


def _flatten(values):
    if hasattr(values, "tolist") and not isinstance(values, type(mpfr(0))):
        values = values.tolist()
    for v in values:
        if isinstance(v, (list, tuple)):
            yield from _flatten(v)
        else:
            yield v


# --- text format ---------------------------------------------------------
def dumps(f: StepFunction) -> str:
    lines = [f"dim {f.dim}"]
    if f.domain != UNIT:
        lines.append(f"domain {f.domain}")
    for c, v in f.items():
        lines.append(" ".join([str(c.level), *map(str, c.index), to_hex(v)]))
    return "\n".join(lines) + "\n"


def loads(text: str) -> StepFunction:
    dim = None
    domain = UNIT
    leaves = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "dim":
            dim = int(parts[1])
            continue
        if parts[0] == "domain":
            domain = parts[1]
            continue
        if dim is None:
            raise ValueError(f"line {lineno}: leaf before 'dim' header")
        if len(parts) != dim + 2:
            raise ValueError(f"line {lineno}: expected {dim + 2} fields")
        cube = DyadicCube.of(int(parts[0]), [int(t) for t in parts[1:-1]])
        if cube in leaves:
            raise ValueError(f"line {lineno}: duplicate leaf {cube}")
        leaves[cube] = from_hex(parts[-1]) if "x" in parts[-1].lower() else value(parts[-1])
    if dim is None:
        raise ValueError("missing 'dim' header")
    return StepFunction(dim, leaves, domain)


def save(f: StepFunction, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(f))


def load(path) -> StepFunction:
    with open(path) as fh:
        return loads(fh.read())
