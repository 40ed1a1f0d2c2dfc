"""Explicit function families behind the negative results, with closed forms.

Step-function families return :class:`StepFunction`; the smooth atom families
live in :mod:`haarbesov.atoms` and are re-exported here for convenience.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from gmpy2 import mpfr, mpq

from .dyadic import DyadicCube, StepFunction
from .params import BesovParams
from .values import as_rational, exact, pow2, value

__all__ = [
    "LEAF_BUDGET", "make_chi", "make_gka", "gka_terms", "gka_integral", "gka_approx_powers",
    "make_iib", "iib_cubes", "iib_projection", "LinearFunction", "make_linear",
    "make_atom_family",
]

LEAF_BUDGET = 1 << 16


def make_chi(cube: DyadicCube) -> StepFunction:
    """Indicator of a dyadic cube inside I^d."""
    if not cube.in_unit():
        raise ValueError(f"{cube} is not inside I^d")
    return StepFunction._trusted(cube.dim, {cube: mpfr(1)})


def gka_terms(k: int, d: int) -> list:
    """The (cube, value) pairs of the divergent-average family.

    For d >= 2 the j-th cube is Delta_{j,(2,...,2)} with value 2^{jd}/j.  In
    d = 1 those cubes would overlap, so the j-th term sits on
    Delta_{j+1,3} = [1/2^j, 3/2^{j+1}) with value 2^{j+1}/(j+1).
    """
    if k < 1 or d < 1:
        raise ValueError("need k >= 1 and d >= 1")
    out = []
    for j in range(1, k + 1):
        if d == 1:
            out.append((DyadicCube(j + 1, (3,)), Fraction(1 << (j + 1), j + 1)))
        else:
            out.append((DyadicCube(j, (2,) * d), Fraction(1 << (j * d), j)))
    return out


def make_gka(k: int, d: int) -> StepFunction:
    return StepFunction._trusted(d, {c: value(a) for c, a in gka_terms(k, d)})


def gka_integral(k: int, d: int) -> Fraction:
    """Exact integral of the rounded family (differs from H_k by rounding only)."""
    return sum((c.measure * exact(value(a)) for c, a in gka_terms(k, d)), mpq(0))


def gka_approx_powers(k: int, d: int, p) -> list:
    """Closed-form E_l(g_k)_p^p for l = 0..(finest level), in the power layer.

    Each term ``a_j^p 2^{-jd}`` is rounded the same way the generic routine
    rounds it, so the sums are bit-identical to ``approx_sequence``.
    """
    p = as_rational(p)
    pe = value(p)
    terms = [(c.level, c.measure * exact(value(a) ** pe if p != 1 else value(a)))
             for c, a in gka_terms(k, d)]
    top = max(lev for lev, _ in terms)
    out = []
    for l in range(top + 1):
        out.append(sum((t for lev, t in terms if lev > l), mpq(0)))
    return out


def _odd_cubes(k: int, d: int) -> list:
    """Level-k cubes with all indices odd, in lexicographic order."""
    n = 1 << k
    return [DyadicCube(k, idx) for idx in itertools.product(range(1, n + 1, 2), repeat=d)]


def iib_cubes(k: int, d: int, placement: str = "lowest") -> list:
    """(odd cube, j, subcube of level k+j) triples of the partial-sum family."""
    odd = _odd_cubes(k, d)
    out = []
    for j, cube in enumerate(odd, 1):
        shift = j
        if placement == "lowest":
            sub = DyadicCube(k + j, tuple(((i - 1) << shift) + 1 for i in cube.index))
        elif placement == "highest":
            sub = DyadicCube(k + j, tuple(i << shift for i in cube.index))
        else:
            raise ValueError(f"unknown placement {placement!r}")
        out.append((cube, j, sub))
    return out


def make_iib(k: int, d: int, p, alpha=None, *, placement: str = "lowest",
             order=None, leaf_budget: int = LEAF_BUDGET) -> StepFunction:
    """The family g_k = sum_j b_{k,j} chi of shrinking subcubes.

    ``b_{k,j} = 2^{(k+j)d} j^{-alpha}`` with ``alpha = 1/p`` by default.
    ``order`` optionally permutes which odd cube receives which j.
    """
    if k < 1:
        raise ValueError("need k >= 1")
    n = 1 << ((k - 1) * d)
    if n > leaf_budget:
        raise ValueError(f"{n} leaves exceed the leaf budget {leaf_budget}")
    p = as_rational(p)
    alpha = 1 / p if alpha is None else as_rational(alpha)
    ae = value(alpha)
    triples = iib_cubes(k, d, placement)
    if order is not None:
        js = [triples[i][1] for i in order]
        if sorted(js) != list(range(1, n + 1)):
            raise ValueError("order must be a permutation")
    else:
        js = [t[1] for t in triples]
    leaves = {}
    for (cube, _, _), j in zip(triples, js):
        # subcube of level k+j inside this cube, at the requested corner
        if placement == "lowest":
            sub = DyadicCube(k + j, tuple(((i - 1) << j) + 1 for i in cube.index))
        else:
            sub = DyadicCube(k + j, tuple(i << j for i in cube.index))
        leaves[sub] = pow2((k + j) * d) / (mpfr(j) ** ae)
    return StepFunction._trusted(d, leaves)


def iib_projection(k: int, d: int, p, alpha=None) -> StepFunction:
    """Closed form of P_k g_k: 2^{kd} j^{-alpha} on the j-th odd cube."""
    p = as_rational(p)
    alpha = 1 / p if alpha is None else as_rational(alpha)
    ae = value(alpha)
    leaves = {}
    for cube, j, _ in iib_cubes(k, d):
        leaves[cube] = pow2(k * d) / (mpfr(j) ** ae)
    return StepFunction._trusted(d, leaves)


@dataclass(frozen=True)
class LinearFunction:
    """f(x) = x_1 + ... + x_d with its dyadic projections."""

    dim: int

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x.sum(axis=-1)

    __call__ = evaluate

    def local_means(self, kernel, t, pts):
        """Analytic local means; None when the kernel is not recognized.

        A kernel with vanishing moments of order <= 1 annihilates f; the
        even bump returns f(x) times its integral.
        """
        pts = np.asarray(pts, dtype=float)
        if kernel.moment_order >= 1:
            return np.zeros(len(pts)), np.zeros(len(pts))
        if kernel.name == "bump":
            mass = float(kernel.box_integral(np.full(self.dim, -0.5), np.full(self.dim, 0.5)))
            return pts.sum(axis=-1) * mass, np.zeros(len(pts))
        return None

    def exact_value(self, x) -> mpq:
        return sum((mpq(as_rational(t)) for t in x), mpq(0))

    def projection(self, k: int) -> StepFunction:
        """P_k f: the value at the center of each level-k cube."""
        n = 1 << k
        leaves = {}
        for idx in itertools.product(range(1, n + 1), repeat=self.dim):
            c = DyadicCube(k, idx)
            leaves[c] = mpfr(sum(c.center(), mpq(0)))
        return StepFunction._trusted(self.dim, leaves)

    def projection_exact(self, k: int, x) -> mpq:
        n = 1 << k
        return sum(((mpq(as_rational(t)) * n).__floor__() * 2 + 1 for t in x), mpq(0)) / (2 * n)

    def residual(self, k: int, x) -> mpq:
        """(f - P_k f)(x), exactly."""
        return self.exact_value(x) - self.projection_exact(k, x)

    def residual_profile(self, y) -> mpq:
        """f_0(y): the periodic sawtooth with f - P_k f = 2^-k f_0(2^k .)."""
        return sum((mpq(as_rational(t)) - (mpq(as_rational(t)).__floor__()) - mpq(1, 2) for t in y),
                   mpq(0))

    def residual_evaluator(self, k: int):
        """Vectorized float evaluator of f - P_k f."""
        n = float(1 << k)

        def ev(x):
            x = np.asarray(x, dtype=float)
            y = x * n
            return ((y - np.floor(y) - 0.5).sum(axis=-1)) / n
        return ev


def make_linear(d: int) -> LinearFunction:
    return LinearFunction(d)


def make_atom_family(tag: str, k: int, d: int, p=None):
    """Smooth atom families; see :mod:`haarbesov.atoms`."""
    from .atoms import atom_family_iia, atom_family_iib
    if tag == "iia":
        return atom_family_iia(k, d)
    if tag == "iib":
        if p is None:
            raise ValueError("the iib atom family needs p")
        return atom_family_iib(k, d, p)
    raise ValueError(f"unknown atom family {tag!r}")
