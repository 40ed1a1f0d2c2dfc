"""The isotropic d-dimensional Haar system and its partial sums.

A level k >= 1 Haar function lives on a cube of level k-1.  On the child
with offset e (0 for the lower half, 1 for the upper half per axis) it takes
the value ``(-1)^(eps . e) * 2^((k-1)d/2)``, where ``eps`` is its nonzero
type mask.  Level 0 is the constant function 1 on I^d.

Because ``2^((k-1)d/2)`` is irrational when ``(k-1)d`` is odd, coefficients are
carried internally as an exact *detail* ``D = sum_child sign * integral`` and
a scale exponent; ``c_h = 2^((k-1)d/2) D`` and ``c_h h = 2^((k-1)d) D sign``
is exact again.
"""
from __future__ import annotations

import itertools
from typing import Iterable, Iterator, Mapping, NamedTuple

import gmpy2
from gmpy2 import mpfr, mpq

from .dyadic import DyadicCube, StepFunction, _overlay, level_integrals
from .values import exact, get_precision, half_pow2, precision

__all__ = [
    "HaarIndex", "block", "block_size", "enumerate_haar", "position", "haar_at",
    "haar_as_step", "detail", "coefficient", "analyze", "analyze_exact",
    "partial_sum", "synthesize", "inner_exact", "sign_matrix", "gram_exact",
]


class HaarIndex(NamedTuple):
    level: int
    support: DyadicCube
    mask: tuple

    @classmethod
    def constant(cls, d: int) -> "HaarIndex":
        return cls(0, DyadicCube.unit(d), (0,) * d)

    @classmethod
    def of(cls, level: int, support_index, mask) -> "HaarIndex":
        """Validated constructor from the support index and the type mask."""
        support_index = tuple(int(i) for i in support_index)
        mask = tuple(int(e) for e in mask)
        d = len(support_index)
        if len(mask) != d:
            raise ValueError("mask length must equal the dimension")
        if level < 0:
            raise ValueError("negative Haar level")
        if level == 0:
            if any(mask) or support_index != (1,) * d:
                raise ValueError("level 0 has only the constant function")
            return cls.constant(d)
        if not any(mask) or any(e not in (0, 1) for e in mask):
            raise ValueError("mask must be a nonzero 0/1 vector")
        support = DyadicCube.of(level - 1, support_index)
        if not support.in_unit():
            raise ValueError("support cube outside I^d")
        return cls(level, support, mask)

    @property
    def dim(self) -> int:
        return len(self.mask)

    @property
    def scale_exponent(self) -> int:
        """e with sup|h| = 2^(e/2)."""
        return max(self.level - 1, 0) * len(self.mask)

    def scale(self) -> mpfr:
        return half_pow2(self.scale_exponent)

    def sign(self, child: DyadicCube) -> int:
        """Sign of the function on a child cube of its support."""
        if self.level == 0:
            return 1
        par = sum(e & o for e, o in zip(self.mask, child.offset()))
        return -1 if par & 1 else 1

    def __repr__(self) -> str:
        return f"HaarIndex({self.level}, {self.support.index}, {self.mask})"


_MASKS = {}


def _masks(d: int) -> list:
    if d not in _MASKS:
        _MASKS[d] = [m for m in itertools.product((0, 1), repeat=d) if any(m)]
    return _MASKS[d]


def block_size(d: int, k: int) -> int:
    if k == 0:
        return 1
    return ((1 << d) - 1) << ((k - 1) * d)


def block(d: int, k: int) -> Iterator[HaarIndex]:
    """H^d_k in lexicographic order of (support index, mask)."""
    if k == 0:
        yield HaarIndex.constant(d)
        return
    n = 1 << (k - 1)
    for idx in itertools.product(range(1, n + 1), repeat=d):
        sup = DyadicCube(k - 1, idx)
        for m in _masks(d):
            yield HaarIndex(k, sup, m)


def enumerate_haar(d: int, max_level: int) -> Iterator[HaarIndex]:
    for k in range(max_level + 1):
        yield from block(d, k)


def position(h: HaarIndex) -> int:
    """0-based position of ``h`` in the default enumeration."""
    if h.level == 0:
        return 0
    d, k = h.dim, h.level
    base = 1 << ((k - 1) * d)
    rank = 0
    for i in h.support.index:
        rank = (rank << (k - 1)) + (i - 1)
    m = 0
    for e in h.mask:
        m = (m << 1) | e
    return base + rank * ((1 << d) - 1) + (m - 1)


def haar_at(d: int, pos: int) -> HaarIndex:
    """Inverse of :func:`position`."""
    if pos < 0:
        raise ValueError("negative position")
    if pos == 0:
        return HaarIndex.constant(d)
    k = 1
    while (1 << (k * d)) <= pos:
        k += 1
    off = pos - (1 << ((k - 1) * d))
    rank, m = divmod(off, (1 << d) - 1)
    m += 1
    mask = tuple((m >> (d - 1 - t)) & 1 for t in range(d))
    idx = []
    for _ in range(d):
        idx.append((rank & ((1 << (k - 1)) - 1)) + 1)
        rank >>= (k - 1)
    return HaarIndex(k, DyadicCube(k - 1, tuple(reversed(idx))), mask)


def haar_as_step(h: HaarIndex) -> StepFunction:
    if h.level == 0:
        return StepFunction._trusted(h.dim, {h.support: mpfr(1)})
    a = h.scale()
    return StepFunction._trusted(h.dim, {c: a if h.sign(c) > 0 else -a for c in h.support.children()})


def _child_integrals(g: StepFunction, support: DyadicCube) -> dict:
    """Exact integrals of ``g`` over the children of ``support``."""
    out = {c: mpq(0) for c in support.children()}
    ex = g.exact_values()
    lev = support.level + 1
    for c in g.leaves:
        if c.level <= support.level:
            if support.ancestor(c.level) == c:
                m = support.measure / len(out) * ex[c]
                return {ch: m for ch in out}
        elif c.ancestor(support.level) == support:
            out[c.ancestor(lev)] += c.measure * ex[c]
    return out


def _detail_from(h: HaarIndex, child_int: Mapping) -> mpq:
    return sum((ci if h.sign(c) > 0 else -ci for c, ci in child_int.items()), mpq(0))


def detail(g: StepFunction, h: HaarIndex) -> mpq:
    """Exact ``D`` with ``c_h(g) = 2^(e/2) D``, e = ``h.scale_exponent``."""
    if h.level == 0:
        return g.integral()
    return _detail_from(h, _child_integrals(g, h.support))


def _scaled(D: mpq, e: int) -> mpfr:
    """2^(e/2) D, rounded once (up to a negligible guard-digit double rounding)."""
    if e % 2 == 0:
        return mpfr(D * mpq(1 << (e // 2)))
    with precision(get_precision() + 64):
        t = gmpy2.sqrt(mpfr(2)) * mpfr(D * mpq(1 << (e // 2)))
    return mpfr(t)


def coefficient(g: StepFunction, h: HaarIndex) -> mpfr:
    """Haar coefficient c_h(g) = integral of g*h."""
    return _scaled(detail(g, h), h.scale_exponent)


def analyze_exact(g: StepFunction, max_level: int) -> dict:
    """Nonzero details ``{h: D}`` for all Haar functions of level <= max_level."""
    d = g.dim
    out = {}
    total = g.integral()
    if total != 0:
        out[HaarIndex.constant(d)] = total
    if max_level < 1:
        return out
    ex = g.exact_values()
    # integrals over every cube of level 1..max_level that meets a finer leaf
    cube_int = {}
    for c in g.leaves:
        if ex[c] == 0:
            continue
        w = c.measure * ex[c]
        if c.level == 0:
            continue
        top = min(c.level, max_level)
        a = c.ancestor(top)
        while True:
            cube_int[a] = cube_int.get(a, 0) + w
            if a.level == 1:
                break
            a = a.parent()
    supports = sorted({c.parent() for c in cube_int})
    for sup in supports:
        children = sup.children()
        ci = {c: cube_int.get(c, mpq(0)) for c in children}
        for m in _masks(d):
            h = HaarIndex(sup.level + 1, sup, m)
            D = _detail_from(h, ci)
            if D != 0:
                out[h] = D
    return out


def analyze(g: StepFunction, max_level: int) -> dict:
    """Nonzero Haar coefficients ``{h: c_h}`` up to ``max_level``."""
    return {h: _scaled(D, h.scale_exponent) for h, D in analyze_exact(g, max_level).items()}


def partial_sum(g: StepFunction, k: int, extra: Iterable[HaarIndex] = ()) -> StepFunction:
    """P_k g plus the terms c_h(g) h for the Haar functions in ``extra``.

    Every ``extra`` index must have level k+1.  Leaves of ``g`` coarser than
    level k are kept as they are.
    """
    if k < 0:
        raise ValueError("negative level")
    extra = list(extra)
    groups = {}
    for h in extra:
        if not isinstance(h, HaarIndex) or h.level != k + 1 or h.dim != g.dim:
            raise ValueError(f"{h!r} is not a level-{k + 1} Haar index in dimension {g.dim}")
        groups.setdefault(h.support, set()).add(h)
    fine, coarse = level_integrals(g, k)
    scale_k = mpq(1 << (k * g.dim))
    leaves = {c: v for c, v in coarse}
    exact_vals = {}
    for cube, integ in fine.items():
        exact_vals[cube] = integ * scale_k
    if groups:
        fine1, _ = level_integrals(g, k + 1)
        for sup, hs in groups.items():
            if sup not in exact_vals:
                continue  # g is constant (coarse leaf) or zero here
            ci = {c: fine1.get(c, mpq(0)) for c in sup.children()}
            av = exact_vals.pop(sup)
            for ch in sup.children():
                v = av
                for h in hs:
                    D = _detail_from(h, ci)
                    v += scale_k * D if h.sign(ch) > 0 else -scale_k * D
                exact_vals[ch] = v
    for c, v in exact_vals.items():
        if v != 0:
            leaves[c] = mpfr(v)
    return StepFunction._trusted(g.dim, leaves, g.domain)


def _contributions(coeffs: Mapping, normalized: bool) -> dict:
    contrib = {}
    for h, c in coeffs.items():
        if c == 0:
            continue
        if h.level == 0:
            cubes = [(h.support, 1)]
            amp = exact(c)
        else:
            cubes = [(ch, h.sign(ch)) for ch in h.support.children()]
            e = h.scale_exponent
            if normalized:
                amp = exact(c) * mpq(1 << e)
            elif e % 2 == 0:
                amp = exact(c) * mpq(1 << (e // 2))
            else:
                amp = exact(mpfr(c) * h.scale())
        for cube, sg in cubes:
            contrib[cube] = contrib.get(cube, 0) + (amp if sg > 0 else -amp)
    return contrib


def synthesize(coeffs: Mapping, up_to: int | None = None, *, normalized: bool = False,
               dim: int | None = None) -> StepFunction:
    """The finite sum of ``c_h h``.

    ``up_to`` keeps only indices whose enumeration position is below it.
    With ``normalized=True`` the map holds exact details D instead of
    coefficients, and the result is exact up to the final rounding.
    """
    if up_to is not None:
        coeffs = {h: c for h, c in coeffs.items() if position(h) < up_to}
    if not coeffs:
        if dim is None:
            raise ValueError("dimension needed for an empty coefficient map")
        return StepFunction._trusted(dim, {})
    d = next(iter(coeffs)).dim
    contrib = _contributions(coeffs, normalized)
    pieces = _overlay(contrib)
    leaves = {}
    for p in pieces:
        v = mpq(0)
        a = p
        while True:
            v += contrib.get(a, 0)
            if a.level == 0:
                break
            a = a.parent()
        if v != 0:
            leaves[p] = mpfr(v)
    return StepFunction._trusted(d, leaves)


def inner_exact(h1: HaarIndex, h2: HaarIndex) -> mpq:
    """Exact L2 inner product of two Haar functions."""
    f1 = {c: h1.sign(c) for c in ([h1.support] if h1.level == 0 else h1.support.children())}
    f2 = {c: h2.sign(c) for c in ([h2.support] if h2.level == 0 else h2.support.children())}
    pieces = _overlay(list(f1) + list(f2))
    total = 0

    def sgn(table, cube):
        a = cube
        while True:
            if a in table:
                return table[a]
            if a.level == 0:
                return 0
            a = a.parent()

    for p in pieces:
        total += p.measure * sgn(f1, p) * sgn(f2, p)
    if total == 0:
        return mpq(0)
    e = h1.scale_exponent + h2.scale_exponent
    if e % 2:
        raise ArithmeticError("inner product is irrational")
    return mpq(total) * mpq(1 << (e // 2))


def sign_matrix(d: int, max_level: int):
    """Sparse integer matrix of Haar sign patterns on the level ``max_level`` grid.

    Row n holds the signs of the Haar function at enumeration position n on
    the cells of T_L (L = max_level), flattened lexicographically.  Together
    with the scale exponents this represents every function exactly.
    """
    import numpy as np
    from scipy import sparse

    L = max_level
    rows, cols, vals = [], [], []
    strides = np.array([1 << (L * (d - 1 - a)) for a in range(d)], dtype=np.int64)

    def cells(cube):
        shift = L - cube.level
        axes = [np.arange((i - 1) << shift, i << shift, dtype=np.int64) * s
                for i, s in zip(cube.index, strides)]
        grid = axes[0]
        for ax in axes[1:]:
            grid = (grid[:, None] + ax[None, :]).ravel()
        return grid

    hs = list(enumerate_haar(d, L))
    for n, h in enumerate(hs):
        parts = [(h.support, 1)] if h.level == 0 else [(c, h.sign(c)) for c in h.support.children()]
        for cube, sg in parts:
            cc = cells(cube)
            rows.append(np.full(cc.size, n, dtype=np.int64))
            cols.append(cc)
            vals.append(np.full(cc.size, sg, dtype=np.int64))
    m = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(len(hs), 1 << (L * d)), dtype=np.int64)
    return hs, m


def gram_exact(d: int, max_level: int) -> dict:
    """Nonzero entries ``{(i, j): <h_i, h_j>}`` of the Haar Gram matrix, exactly.

    The inner product is ``S_ij 2^((e_i + e_j)/2) 2^(-L d)`` with the integer
    sign overlap ``S = M M^T``; an irrational nonzero entry raises.
    """
    hs, m = sign_matrix(d, max_level)
    overlap = (m @ m.T).tocoo()
    cell = mpq(1, 1 << (max_level * d))
    out = {}
    for i, j, s in zip(overlap.row.tolist(), overlap.col.tolist(), overlap.data.tolist()):
        if s == 0:
            continue
        e = hs[i].scale_exponent + hs[j].scale_exponent
        if e % 2:
            raise ArithmeticError(f"irrational Gram entry at {(i, j)}")
        out[(i, j)] = mpq(s) * mpq(1 << (e // 2)) * cell
    return out
