"""Smooth atoms, local-mean kernels and quadrature-based norm estimators.

The atom profile is ``phi(x) = x exp(-1/(1-x^2)) / M`` on (-1, 1), with M
chosen so that ``sup |phi| = 1``.  Its antiderivative has the closed form
``-(u e^{-1/u} - E1(1/u)) / (2M)`` with ``u = 1 - x^2``.

Kernels are built from the bump ``psi(z) = exp(-1/(1-4z^2))`` on (-1/2, 1/2):
``kappa_0`` is the tensor product of ``psi`` and ``kappa`` is its Laplacian, so
the integrals of ``kappa`` against 1 and against every ``x_i`` vanish.
Box integrals of both kernels reduce to one-dimensional primitives of
``psi`` and to ``psi'`` itself, which makes local means of step functions
quadrature-free apart from a tabulated primitive accurate to ~1e-16.

Values in this module are float64 unless stated otherwise; only atom
coefficients and projections onto step functions are Values.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import mpmath
import numpy as np
from gmpy2 import mpfr, mpq
from scipy import special
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .dyadic import DyadicCube, StepFunction
from .params import BesovParams
from .values import as_rational, exact, from_hex, get_precision, pow2, to_hex, value

__all__ = [
    "QuadratureError", "QuadSpec", "SmoothProfile", "ODD_PROFILE", "Kernel", "bump_kernel",
    "laplacian_kernel", "kernel_moments", "Atom", "AtomicDecomposition", "Superposition",
    "atom_family_iia", "atom_family_iib", "atomic_norm_upper", "project_atoms",
    "projection_weight", "sample_atoms", "local_mean", "local_means", "lp_local_mean",
    "localmeans_norm", "read_atoms_csv", "write_atoms_csv", "half_integral",
]


class QuadratureError(RuntimeError):
    """Raised when a quadrature cannot certify the requested tolerance."""


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature settings.

    ``tol`` is the relative tolerance on each integral of ``|kappa f|^p``;
    ``order`` is the number of Gauss-Legendre nodes per axis and cell;
    ``max_cells`` bounds the adaptive refinement; ``inner_panels`` and
    ``inner_order`` set the composite rule used for evaluator inputs.
    """

    tol: float = 1e-8
    order: int = 6
    max_cells: int = 2_000_000
    inner_panels: int = 6
    inner_order: int = 64
    chunk: int = 20000


# --- one-dimensional building blocks ------------------------------------------
def _gl01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1) / 2, w / 2


def _psi(z):
    z = np.asarray(z, dtype=float)
    u = 1 - 4 * z * z
    out = np.zeros_like(z)
    m = u > 0
    out[m] = np.exp(-1 / u[m])
    return out


def _dpsi(z):
    z = np.asarray(z, dtype=float)
    u = 1 - 4 * z * z
    out = np.zeros_like(z)
    m = u > 0
    um = u[m]
    out[m] = np.exp(-1 / um) * (-8 * z[m] / (um * um))
    return out


def _d2psi(z):
    z = np.asarray(z, dtype=float)
    u = 1 - 4 * z * z
    out = np.zeros_like(z)
    m = u > 0
    um, zm = u[m], z[m]
    out[m] = np.exp(-1 / um) * (-8 / um**2 - 128 * zm**2 / um**3 + 64 * zm**2 / um**4)
    return out


class _Primitive:
    """Psi0(z) = integral of psi from -1/2 to z, tabulated on panels."""

    def __init__(self, panels: int = 1024, order: int = 16):
        self.n = panels
        self.h = 1.0 / panels
        self.x, self.w = _gl01(order)
        edges = -0.5 + self.h * np.arange(panels)
        pts = edges[:, None] + self.h * self.x[None, :]
        vals = (_psi(pts) * self.w).sum(axis=1) * self.h
        self.table = np.concatenate([[0.0], np.cumsum(vals)])
        self.total = self.table[-1]

    def __call__(self, z):
        z = np.clip(np.asarray(z, dtype=float), -0.5, 0.5)
        pos = (z + 0.5) / self.h
        idx = np.minimum(np.floor(pos).astype(np.int64), self.n - 1)
        left = -0.5 + idx * self.h
        width = z - left
        pts = left[..., None] + width[..., None] * self.x
        part = (_psi(pts) * self.w).sum(axis=-1) * width
        return self.table[idx] + part


_PSI0 = None


def _psi0():
    global _PSI0
    if _PSI0 is None:
        _PSI0 = _Primitive()
    return _PSI0


# --- the atom profile -----------------------------------------------------------
def _profile_constants(dps: int = 40):
    with mpmath.workdps(dps):
        xs = (mpmath.sqrt(6) - mpmath.sqrt(2)) / 2
        M = xs * mpmath.exp(-1 / (1 - xs**2))
        half = (mpmath.exp(-1) - mpmath.e1(1)) / (2 * M)
    return xs, M, half


_XSTAR, _M, _HALF = _profile_constants()
_MF = float(_M)


def _phi(x):
    x = np.asarray(x, dtype=float)
    u = 1 - x * x
    out = np.zeros_like(x)
    m = u > 0
    out[m] = x[m] * np.exp(-1 / u[m]) / _MF
    return out


def _phi_primitive(x):
    """Integral of phi from -1 to x (even in x, zero outside (-1, 1))."""
    x = np.asarray(x, dtype=float)
    u = 1 - x * x
    out = np.zeros_like(x)
    m = u > 0
    um = u[m]
    inv = 1 / um
    out[m] = -(um * np.exp(-inv) - special.exp1(inv)) / (2 * _MF)
    return out


@dataclass(frozen=True)
class SmoothProfile:
    """A compactly supported C-infinity univariate profile with metadata."""

    name: str
    evaluate: Callable
    primitive: Callable
    support: tuple
    parity: str
    integral: float
    maximizer: float

    def __call__(self, x):
        return self.evaluate(x)

    def integral_between(self, a, b):
        return self.primitive(b) - self.primitive(a)


ODD_PROFILE = SmoothProfile(
    name="odd_bump", evaluate=_phi, primitive=_phi_primitive, support=(-1.0, 1.0),
    parity="odd", integral=0.0, maximizer=float(_XSTAR))


def half_integral(d: int = 1):
    """b_0 = (integral of phi over (0, 1))^d as a Value."""
    with mpmath.workdps(max(40, get_precision() // 3 + 10)):
        xs = (mpmath.sqrt(6) - mpmath.sqrt(2)) / 2
        M = xs * mpmath.exp(-1 / (1 - xs**2))
        half = (mpmath.exp(-1) - mpmath.e1(1)) / (2 * M)
        return value(mpmath.nstr(half**d, get_precision() // 3 + 5))


# --- kernels ---------------------------------------------------------------------
@dataclass(frozen=True)
class Kernel:
    """A kernel supported in [-1/2, 1/2]^d.

    ``moment_order`` is -1 for a kernel with positive integral and otherwise
    the highest order of vanishing moments.
    """

    name: str
    dim: int
    moment_order: int
    evaluate: Callable
    box_integral: Callable
    radius: float = 0.5

    def __call__(self, z):
        return self.evaluate(z)


def bump_kernel(d: int) -> Kernel:
    """kappa_0(z) = prod psi(z_i)."""
    P = _psi0()

    def ev(z):
        z = np.asarray(z, dtype=float)
        return np.prod(_psi(z), axis=-1)

    def box(a, b):
        a = np.clip(np.asarray(a, dtype=float), -0.5, 0.5)
        b = np.clip(np.asarray(b, dtype=float), -0.5, 0.5)
        seg = np.where(b > a, P(b) - P(a), 0.0)
        return np.prod(seg, axis=-1)

    return Kernel("bump", d, -1, ev, box)


def laplacian_kernel(d: int) -> Kernel:
    """kappa = sum_i psi''(z_i) prod_{m != i} psi(z_m)."""
    P = _psi0()

    def ev(z):
        z = np.asarray(z, dtype=float)
        ps = _psi(z)
        dd = _d2psi(z)
        total = np.zeros(z.shape[:-1])
        for i in range(d):
            term = dd[..., i]
            for m in range(d):
                if m != i:
                    term = term * ps[..., m]
            total = total + term
        return total

    def box(a, b):
        a = np.clip(np.asarray(a, dtype=float), -0.5, 0.5)
        b = np.clip(np.asarray(b, dtype=float), -0.5, 0.5)
        inside = np.all(b > a, axis=-1)
        seg = P(b) - P(a)
        dseg = _dpsi(b) - _dpsi(a)
        total = np.zeros(a.shape[:-1])
        for i in range(d):
            term = dseg[..., i]
            for m in range(d):
                if m != i:
                    term = term * seg[..., m]
            total = total + term
        return np.where(inside, total, 0.0)

    return Kernel("laplacian", d, 1, ev, box)


def kernel_moments(kernel: Kernel, panels: int = 6, order: int = 64) -> dict:
    """Integral and first moments of a kernel by a composite tensor Gauss rule."""
    x, w = _gl01(order)
    h = 1.0 / panels
    nodes = (-0.5 + h * (np.arange(panels)[:, None] + x[None, :])).ravel()
    wts = np.tile(w * h, panels)
    d = kernel.dim
    if d > 1:
        grids = np.meshgrid(*([nodes] * (d - 1)), indexing="ij")
        R = np.stack([g.ravel() for g in grids], axis=-1)
        WR = np.ones(len(R))
        for g in np.meshgrid(*([wts] * (d - 1)), indexing="ij"):
            WR = WR * g.ravel()
    else:
        R, WR = np.zeros((1, 0)), np.ones(1)
    sums = np.zeros(d + 1)
    # one slice per node of the first axis keeps memory bounded
    for z1, w1 in zip(nodes, wts):
        Z = np.concatenate([np.full((len(R), 1), z1), R], axis=1)
        KW = kernel.evaluate(Z) * WR * w1
        sums[0] += KW.sum()
        sums[1:] += KW @ Z
    out = {"integral": float(sums[0])}
    for i in range(d):
        out[f"x{i + 1}"] = float(sums[i + 1])
    return out


# --- atoms and decompositions ------------------------------------------------------
@dataclass(frozen=True)
class Atom:
    """x -> prod_m phi(2^level x_m - shift_m)."""

    level: int
    shift: tuple
    profile: SmoothProfile = ODD_PROFILE

    @property
    def dim(self) -> int:
        return len(self.shift)

    def center(self) -> tuple:
        return tuple(mpq(i, 1) / (1 << self.level) if self.level >= 0 else None for i in self.shift)

    def box(self) -> tuple:
        """Exact support box (lower, upper)."""
        n = mpq(1 << self.level)
        return (tuple((i - 1) / n for i in self.shift), tuple((i + 1) / n for i in self.shift))

    def local(self, lo: Sequence, hi: Sequence):
        """Box [lo, hi) in the atom's own coordinates, as float arrays."""
        n = 1 << self.level
        a = np.array([float(mpq(l) * n - i) for l, i in zip(lo, self.shift)])
        b = np.array([float(mpq(h) * n - i) for h, i in zip(hi, self.shift)])
        return a, b

    def integral_over(self, lo: Sequence, hi: Sequence) -> float:
        """Integral of the atom over the box [lo, hi), by the closed-form primitive."""
        a, b = self.local(lo, hi)
        a, b = np.clip(a, -1, 1), np.clip(b, -1, 1)
        seg = self.profile.primitive(b) - self.profile.primitive(a)
        return float(np.prod(seg)) * 2.0 ** (-self.level * self.dim)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.ldexp(x, self.level) - np.array(self.shift, dtype=float)
        return np.prod(self.profile.evaluate(y), axis=-1)


@dataclass
class AtomicDecomposition:
    """A finite sum of coefficient * atom."""

    dim: int
    terms: list = field(default_factory=list)   # (level, shift tuple, coefficient Value)
    profile: SmoothProfile = ODD_PROFILE

    def __post_init__(self):
        clean = []
        for j, i, c in self.terms:
            i = tuple(int(t) for t in i)
            if len(i) != self.dim:
                raise ValueError("shift dimension mismatch")
            c = c if isinstance(c, type(mpfr(0))) else value(c)
            if c == 0:
                raise ValueError("atomic decompositions carry nonzero coefficients only")
            clean.append((int(j), i, c))
        self.terms = clean

    def __len__(self) -> int:
        return len(self.terms)

    def atoms(self):
        for j, i, c in self.terms:
            yield Atom(j, i, self.profile), c

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for a, c in self.atoms():
            out = out + float(c) * a.evaluate(x)
        return out

    __call__ = evaluate

    def integral_over(self, lo: Sequence, hi: Sequence) -> mpfr:
        """Integral over the box [lo, hi), as a Value."""
        total = mpfr(0)
        for a, c in self.atoms():
            total += c * mpfr(a.integral_over(lo, hi))
        return total

    def average(self, cube: DyadicCube) -> mpfr:
        return self.integral_over(cube.lower(), cube.upper()) / mpfr(cube.measure)


def atom_family_iib(k: int, d: int, p) -> AtomicDecomposition:
    """Atoms of level k+j at the interior vertices of T_{k-2}, j = 1..n_k.

    The j-th vertex (lexicographic) carries ``j^{-1/p} 2^{(k+j)d} a_{k+j,i}``.
    """
    if k < 3:
        raise ValueError("the vertex grid of T_{k-2} has interior vertices only for k >= 3")
    p = as_rational(p)
    ip = value(1 / p)
    m = (1 << (k - 2)) - 1
    terms = []
    for j, v in enumerate(itertools.product(range(1, m + 1), repeat=d), 1):
        J = k + j
        shift = tuple(t << (j + 2) for t in v)
        terms.append((J, shift, pow2(J * d) / mpfr(j) ** ip))
    return AtomicDecomposition(d, terms)


def atom_family_iia(k: int, d: int) -> AtomicDecomposition:
    """sum_{j<=k} 2^{jd}/j a_{j,0}: nested atoms centred at the origin."""
    if k < 1:
        raise ValueError("need k >= 1")
    return AtomicDecomposition(d, [(j, (0,) * d, pow2(j * d) / j) for j in range(1, k + 1)])


def atomic_norm_upper(dec: AtomicDecomposition, params: BesovParams) -> mpfr:
    """(sum_j 2^{j(s-d/p)q} (sum_i |c_{j,i}|^p)^{q/p})^{1/q} for this decomposition.

    This bounds the atomic quasi-norm from above.  The admissible range is
    d(1/p-1) <= s < 2 and d/(d+1) <= p < 1.
    """
    d = dec.dim
    p, q, s = params.p, params.q, params.s
    if not (Fraction(d, d + 1) <= p < 1 and params.critical(d) <= s < 2):
        raise ValueError(f"parameters {params} outside the atomic range for d={d}")
    pe, qe = value(p), value(q)
    by_level = {}
    for j, _, c in dec.terms:
        by_level[j] = by_level.get(j, mpfr(0)) + abs(c) ** pe
    total = mpfr(0)
    for j, S in by_level.items():
        total += pow2(j * (s - d / p) * q) * S ** value(q / p)
    return total ** (1 / qe)


def _check_aligned(dec: AtomicDecomposition, k: int) -> None:
    if k < 3:
        raise ValueError("alignment needs k >= 3")
    seen = set()
    for j, i, _ in dec.terms:
        if j < k:
            raise ValueError(f"atom of level {j} is coarser than level {k}")
        centre = tuple(mpq(t, 1) / (1 << j) for t in i)
        for c in centre:
            scaled = c * (1 << (k - 2))
            if scaled.denominator != 1 or not 0 < scaled < (1 << (k - 2)):
                raise ValueError(f"atom centre {centre} is not an interior vertex of T_{k - 2}")
        if centre in seen:
            raise ValueError(f"two atoms share the centre {centre}")
        seen.add(centre)


def project_atoms(dec: AtomicDecomposition, k: int, check: bool = True) -> StepFunction:
    """Level-k Haar projection P_k of an atomic decomposition.

    Averages over level-k cubes come from exact one-dimensional integrals of
    the profile.  With ``check`` the atoms must sit at distinct interior
    vertices of T_{k-2} with level at least k.
    """
    if check:
        _check_aligned(dec, k)
    d = dec.dim
    n = 1 << k
    scale = mpfr(mpq(1 << (k * d)))
    acc = {}
    for a, c in dec.atoms():
        lo, hi = a.box()
        ranges = []
        for l, h in zip(lo, hi):
            first = max(int((l * n).__floor__()) + 1, 1)
            last = min(int((h * n).__ceil__()), n)
            ranges.append(range(first, last + 1))
        for idx in itertools.product(*ranges):
            cube = DyadicCube(k, idx)
            w = a.integral_over(cube.lower(), cube.upper())
            if w != 0:
                acc[cube] = acc.get(cube, mpfr(0)) + c * mpfr(w) * scale
    return StepFunction._trusted(d, {c: v for c, v in acc.items() if v != 0})


def projection_weight(k: int, j: int, d: int, order: int = 24, panels: int = 8) -> float:
    """2^{kd} |integral of a_{k+j,i} over one adjacent level-k cube|, by quadrature.

    Independent of the closed-form primitive; compares with b_0 2^{-jd}.
    """
    x, w = _gl01(order)
    h = 1.0 / panels
    nodes = (h * (np.arange(panels)[:, None] + x[None, :])).ravel()
    wts = np.tile(w * h, panels)
    one = float((ODD_PROFILE.evaluate(nodes) * wts).sum())   # integral over (0, 1)
    # the atom occupies 2^{-jd} of the cube's volume in local coordinates
    return one ** d * 2.0 ** (-j * d)


def sample_atoms(dec: AtomicDecomposition, extra: int = 4, order: int = 16) -> StepFunction:
    """Fine step-function sampling: Gauss-Legendre cell averages of every atom.

    Each atom of level J is averaged over the level-(J+extra) cells of its
    support.  Atoms must have disjoint supports.
    """
    x, w = _gl01(order)
    d = dec.dim
    grids = np.meshgrid(*([x] * d), indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=-1)
    wg = np.meshgrid(*([w] * d), indexing="ij")
    W = np.ones(len(X))
    for g in wg:
        W = W * g.ravel()
    leaves = {}
    m = 1 << extra
    for a, c in dec.atoms():
        L = a.level + extra
        base = [(t - 1) * m + 1 for t in a.shift]
        for off in itertools.product(range(2 * m), repeat=d):
            idx = tuple(b + o for b, o in zip(base, off))
            # local coordinates of the cell: [-1 + o/m, -1 + (o+1)/m)
            lo = np.array([-1 + o / m for o in off])
            pts = lo + X / m
            avg = float((np.prod(a.profile.evaluate(pts), axis=-1) * W).sum())
            if avg != 0:
                cube = DyadicCube(L, idx)
                if cube in leaves:
                    raise ValueError("atom supports overlap")
                leaves[cube] = c * mpfr(avg)
    return StepFunction(d, leaves)


# --- CSV ---------------------------------------------------------------------------
def write_atoms_csv(dec: AtomicDecomposition, fh=None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["j"] + [f"i_{m + 1}" for m in range(dec.dim)] + ["coeff_hex"])
    for j, i, c in dec.terms:
        wr.writerow([j, *i, to_hex(c)])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_atoms_csv(fh) -> AtomicDecomposition:
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not rows[0][0].lstrip("-").isdigit():
        rows = rows[1:]
    if not rows:
        raise ValueError("empty atom table")
    d = len(rows[0]) - 2
    terms = []
    for r in rows:
        if len(r) != d + 2:
            raise ValueError(f"bad row {r}")
        c = from_hex(r[-1]) if "x" in r[-1].lower() else value(r[-1])
        terms.append((int(r[0]), tuple(int(t) for t in r[1:-1]), c))
    return AtomicDecomposition(d, terms)


# --- local means ---------------------------------------------------------------------
@dataclass
class Superposition:
    """A finite linear combination of local-mean sources."""

    parts: list      # (coefficient, source)

    @property
    def dim(self) -> int:
        return _dim_of(self.parts[0][1])


def _dim_of(f) -> int:
    d = getattr(f, "dim", None)
    if d is None:
        raise ValueError("source has no dimension; wrap it with a 'dim' attribute")
    return d


class _LeafTable:
    """Float copies of a step function's leaves for vectorized box integrals."""

    def __init__(self, f: StepFunction):
        items = [(c, v) for c, v in f.items() if v != 0]
        self.n = len(items)
        self.lo = np.array([[float(t) for t in c.lower()] for c, _ in items]).reshape(self.n, f.dim)
        self.hi = np.array([[float(t) for t in c.upper()] for c, _ in items]).reshape(self.n, f.dim)
        self.val = np.array([float(v) for _, v in items])


def _step_local_means(tab: _LeafTable, kernel: Kernel, t: float, pts: np.ndarray,
                      chunk: int = 20000) -> np.ndarray:
    out = np.zeros(len(pts))
    if tab.n == 0 or len(pts) == 0:
        return out
    r = kernel.radius * t
    order = np.lexsort(pts.T[::-1])
    pts_sorted = pts[order]
    res = np.zeros(len(pts))
    step = max(1, chunk // max(1, min(tab.n, 64)))
    for s in range(0, len(pts_sorted), step):
        P = pts_sorted[s:s + step]
        blo, bhi = P.min(axis=0) - r, P.max(axis=0) + r
        cand = np.nonzero(np.all((tab.hi > blo) & (tab.lo < bhi), axis=1))[0]
        if cand.size == 0:
            continue
        for c0 in range(0, cand.size, 256):
            cc = cand[c0:c0 + 256]
            a = (P[:, None, :] - tab.hi[None, cc, :]) / t
            b = (P[:, None, :] - tab.lo[None, cc, :]) / t
            K = kernel.box_integral(a, b)
            res[s:s + step] += K @ tab.val[cc]
    out[order] = res
    return out


def _inner_rule(d: int, panels: int, order: int):
    x, w = _gl01(order)
    h = 1.0 / panels
    nodes = (-0.5 + h * (np.arange(panels)[:, None] + x[None, :])).ravel()
    wts = np.tile(w * h, panels)
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=-1)
    W = np.ones(len(Z))
    for g in np.meshgrid(*([wts] * d), indexing="ij"):
        W = W * g.ravel()
    return Z, W


def _evaluator_local_means(fn: Callable, kernel: Kernel, t: float, pts: np.ndarray,
                           quad: QuadSpec) -> tuple:
    d = kernel.dim
    Z1, W1 = _inner_rule(d, quad.inner_panels, quad.inner_order)
    Z2, W2 = _inner_rule(d, max(1, (2 * quad.inner_panels) // 3), quad.inner_order)
    K1 = kernel.evaluate(Z1) * W1
    K2 = kernel.evaluate(Z2) * W2
    vals = np.empty(len(pts))
    errs = np.empty(len(pts))
    step = max(1, quad.chunk // len(Z2))
    for s in range(0, len(pts), step):
        P = pts[s:s + step]
        v1 = fn(P[:, None, :] - t * Z1[None, :, :]) @ K1
        v2 = fn(P[:, None, :] - t * Z2[None, :, :]) @ K2
        vals[s:s + step] = v1
        errs[s:s + step] = np.abs(v2 - v1)
    return vals, errs


def _evaluator_of(f) -> Callable:
    if hasattr(f, "evaluate"):
        return f.evaluate
    if callable(f):
        return f
    raise TypeError(f"cannot evaluate {f!r}")


def local_means(f, kernel: Kernel, t, points, quad: QuadSpec = QuadSpec()) -> tuple:
    """(kappa^t * f)(x) at many points; returns (values, error estimates)."""
    t = float(as_rational(t)) if not isinstance(t, float) else t
    if t <= 0:
        raise ValueError("t must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(f, Superposition):
        vals = np.zeros(len(pts))
        errs = np.zeros(len(pts))
        for c, part in f.parts:
            v, e = local_means(part, kernel, t, pts, quad)
            vals += float(c) * v
            errs += abs(float(c)) * e
        return vals, errs
    if isinstance(f, StepFunction):
        if f.dim != kernel.dim:
            raise ValueError("dimension mismatch")
        return _step_local_means(_LeafTable(f), kernel, t, pts, quad.chunk), np.zeros(len(pts))
    if hasattr(f, "local_means"):
        res = f.local_means(kernel, t, pts)
        if res is not None:
            return res
    return _evaluator_local_means(_evaluator_of(f), kernel, t, pts, quad)


def local_mean(f, kernel: Kernel, t, x, quad: QuadSpec = QuadSpec()) -> tuple:
    """(kappa^t * f)(x) at one point; returns (value, error estimate)."""
    v, e = local_means(f, kernel, t, np.asarray(x, dtype=float)[None, :], quad)
    return float(v[0]), float(e[0])


# --- adaptive L_p integration -----------------------------------------------------------
class _CellRule:
    def __init__(self, d: int, order: int):
        x, w = _gl01(order)
        grids = np.meshgrid(*([x] * d), indexing="ij")
        self.X = np.stack([g.ravel() for g in grids], axis=-1)
        W = np.ones(len(self.X))
        for g in np.meshgrid(*([w] * d), indexing="ij"):
            W = W * g.ravel()
        self.W = W
        self.d = d
        self.offsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=float)


def _integrate(values_fn, lo, hi, h0, p: float, quad: QuadSpec) -> tuple:
    """Greedy adaptive integral of |values_fn|^p over the box [lo, hi).

    ``values_fn(points) -> (values, inner_errors)``.  Returns (integral, error).
    """
    d = len(lo)
    rule = _CellRule(d, quad.order)
    counts = [max(1, int(round((h - l) / h0))) for l, h in zip(lo, hi)]
    grids = np.meshgrid(*[l + h0 * np.arange(c) for l, c in zip(lo, counts)], indexing="ij")
    corners = np.stack([g.ravel() for g in grids], axis=-1)
    sides = np.full(len(corners), float(h0))

    def rule_on(C, H):
        pts = (C[:, None, :] + H[:, None, None] * rule.X[None, :, :]).reshape(-1, d)
        v, e = values_fn(pts)
        a = np.abs(v.reshape(len(C), -1))
        e = np.abs(e.reshape(len(C), -1))
        v = a ** p
        # |a^p - b^p| for |a - b| <= e: mean-value bound away from zero
        with np.errstate(divide="ignore", invalid="ignore"):
            far = p * np.maximum(a - e, 0) ** (p - 1) * e
        e = np.where(a >= 2 * e, far, (a + e) ** p)
        e = np.where(e > 0, e, 0.0)
        vol = H ** d
        return (v @ rule.W) * vol, (e @ rule.W) * vol

    def split(C, H):
        half = H / 2
        kids = (C[:, None, :] + half[:, None, None] * rule.offsets[None, :, :]).reshape(-1, d)
        return kids, np.repeat(half, len(rule.offsets))

    q, _ = rule_on(corners, sides)
    kids, khalf = split(corners, sides)
    kq, kinner = rule_on(kids, khalf)
    nk = len(rule.offsets)
    fine = kq.reshape(-1, nk).sum(axis=1)
    err = np.abs(fine - q) + kinner.reshape(-1, nk).sum(axis=1)
    # active cells: corners, sides, own estimate q, fine estimate, error, children's q
    C, H, F, E, KQ = corners, sides, fine, err, kq.reshape(-1, nk)
    done_I, done_E = 0.0, 0.0
    ncells = len(C)
    while True:
        total = done_I + F.sum()
        etot = done_E + E.sum()
        if etot <= quad.tol * abs(total) or etot == 0.0:
            return total, etot
        if ncells > quad.max_cells:
            raise QuadratureError(
                f"adaptive quadrature exceeded {quad.max_cells} cells "
                f"(estimate {total:.3e}, error {etot:.3e})")
        order = np.argsort(-E)
        cum = np.cumsum(E[order])
        target = 0.5 * E.sum()
        nref = int(np.searchsorted(cum, target) + 1)
        refine = order[:nref]
        keep = order[nref:]
        # cells whose share is already negligible are retired for good
        small = keep[E[keep] <= quad.tol * abs(total) * 1e-3 / max(1, len(E))]
        done_I += F[small].sum()
        done_E += E[small].sum()
        keep = np.setdiff1d(keep, small, assume_unique=True)
        kids, khalf = split(C[refine], H[refine])
        kown = KQ[refine].ravel()
        gq, ginner = rule_on(*split(kids, khalf))
        gfine = gq.reshape(-1, nk).sum(axis=1)
        gerr = np.abs(gfine - kown) + ginner.reshape(-1, nk).sum(axis=1)
        ncells += len(kids)
        C = np.concatenate([C[keep], kids])
        H = np.concatenate([H[keep], khalf])
        F = np.concatenate([F[keep], gfine])
        E = np.concatenate([E[keep], gerr])
        KQ = np.concatenate([KQ[keep], gq.reshape(-1, nk)])


@dataclass
class LpIntegral:
    """The integral of |kappa^t * f|^p and an estimate of its absolute error."""

    integral: float
    error: float
    p: float

    @property
    def norm(self) -> float:
        return self.integral ** (1 / self.p) if self.integral > 0 else 0.0

    @property
    def norm_error(self) -> float:
        if self.integral <= 0:
            return self.error ** (1 / self.p)
        return self.norm * self.error / (self.p * self.integral)


def _clusters(tab: _LeafTable, reach: float) -> list:
    """Groups of leaves whose reach-dilated boxes touch (connected components)."""
    if tab.n == 0:
        return []
    centers = (tab.lo + tab.hi) / 2
    half = (tab.hi - tab.lo) / 2
    rmax = 2 * (half.max() + reach)
    tree = cKDTree(centers)
    pairs = tree.query_pairs(rmax, p=np.inf, output_type="ndarray")
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        gap = np.abs(centers[a] - centers[b]) - half[a] - half[b]
        touch = np.all(gap < 2 * reach, axis=1)
        a, b = a[touch], b[touch]
    else:
        a = b = np.zeros(0, dtype=int)
    g = coo_matrix((np.ones(len(a)), (a, b)), shape=(tab.n, tab.n))
    _, labels = connected_components(g, directed=False)
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    return list(groups.values())


def _cluster_key(f_items: list, t: mpq):
    """Translation, dilation and scalar-invariant signature of a leaf cluster."""
    lo0 = [min(c.lower()[m] for c, _ in f_items) for m in range(f_items[0][0].dim)]
    v0 = f_items[0][1]
    key = []
    for c, v in f_items:
        rel = tuple((l - o) / t for l, o in zip(c.lower(), lo0))
        key.append((rel, c.side / t, exact(v) / exact(v0)))
    return tuple(sorted(key)), lo0, v0


def lp_local_mean(f, kernel: Kernel, t, p, quad: QuadSpec = QuadSpec(), window=None,
                  _cache: dict | None = None) -> LpIntegral:
    """Integral of |kappa^t * f|^p over the support of kappa^t * f (or ``window``).

    Step functions are split into clusters of leaves whose local means do not
    interact.  Clusters that agree up to translation and a scalar factor are
    integrated once, using the invariance of the integral under both.
    ``window`` is a box ``(lo, hi)`` restricting the integration domain.
    """
    t = as_rational(t)
    tf = float(t)
    pf = float(as_rational(p))
    if isinstance(f, StepFunction) and window is None:
        nz = f.nonzero()
        tab = _LeafTable(nz)
        items = list(nz.items())
        reach = kernel.radius * tf
        cache = {} if _cache is None else _cache
        total, err = 0.0, 0.0
        tq = mpq(t.numerator, t.denominator)
        for group in _clusters(tab, reach):
            sub = [items[i] for i in group]
            key, lo0, v0 = _cluster_key(sub, tq)
            if key not in cache:
                # unit-scaled copy: coordinates relative to the cluster, in units of t
                def fn(pts, sub=sub, lo0=lo0, v0=v0):
                    return _step_cluster_values(sub, lo0, v0, tq, kernel, pts, quad)
                lo = np.array([-kernel.radius] * f.dim)
                ext = [max(float((c.upper()[m] - o) / tq) for c, _ in sub) for m, o in enumerate(lo0)]
                hi = np.array(ext) + kernel.radius
                h0 = min(0.5, min(float(c.side / tq) for c, _ in sub))
                span = hi - lo
                hi = lo + np.ceil(span / h0 - 1e-12) * h0
                cache[key] = _integrate(fn, lo, hi, h0, pf, quad)
            I0, E0 = cache[key]
            factor = abs(float(v0)) ** pf * tf ** f.dim
            total += factor * I0
            err += factor * E0
        return LpIntegral(total, err, pf)
    d = _dim_of(f)
    if window is None:
        window = (np.zeros(d), np.ones(d))
    lo, hi = (np.asarray(w, dtype=float) for w in window)
    h0 = tf / 2
    span = hi - lo
    if np.any(np.abs(span / h0 - np.round(span / h0)) > 1e-9):
        h0 = float(np.min(span)) / max(1, math.ceil(float(np.min(span)) / h0))

    def fn(pts):
        return local_means(f, kernel, tf, pts, quad)

    I, E = _integrate(fn, lo, hi, h0, pf, quad)
    return LpIntegral(I, E, pf)


def _step_cluster_values(sub, lo0, v0, t, kernel, pts, quad):
    """Local means of a normalized cluster at points given in units of t."""
    d = len(lo0)
    lo = np.array([[float((l - o) / t) for l, o in zip(c.lower(), lo0)] for c, _ in sub]).reshape(-1, d)
    side = np.array([float(c.side / t) for c, _ in sub])
    tab = _LeafTable.__new__(_LeafTable)
    tab.n = len(sub)
    tab.lo = lo
    tab.hi = lo + side[:, None]
    tab.val = np.array([float(exact(v) / exact(v0)) for _, v in sub])
    return _step_local_means(tab, kernel, 1.0, pts, quad.chunk), np.zeros(len(pts))


def localmeans_norm(f, params: BesovParams, levels: int, quad: QuadSpec = QuadSpec(),
                    kernels: tuple | None = None, terms: Sequence[int] | None = None,
                    window=None):
    """Local-means quasi-norm, with a quadrature error estimate.

    Computes ``(||kappa_0(1,f)||_p^q + sum_{j=1}^{levels} 2^{jsq}
    ||kappa(2^-j, f)||_p^q)^{1/q}``.  ``terms`` restricts the sum to a subset of
    j (0 denotes the kappa_0 term), which gives a lower bound.
    """
    from .approx import NormReport
    if not 0 < params.s <= 1:
        raise ValueError("local means with this kernel need 0 < s <= 1")
    d = _dim_of(f)
    k0, k1 = kernels or (bump_kernel(d), laplacian_kernel(d))
    js = list(range(levels + 1)) if terms is None else sorted(set(terms))
    p, q, s = float(params.p), float(params.q), float(params.s)
    rows = []
    total, rel = 0.0, 0.0
    for j in js:
        if j < 0 or j > levels:
            raise ValueError(f"term {j} outside 0..{levels}")
        kern = k0 if j == 0 else k1
        t = Fraction(1, 1 << j)
        res = lp_local_mean(f, kern, t, params.p, quad, window)
        nrm = res.norm
        term = (2.0 ** (j * s) * nrm) ** q
        total += term
        r = res.norm_error / nrm if nrm > 0 else 0.0
        rel = max(rel, r)
        rows.append({"level": j, "lp": nrm, "lp_error": res.norm_error, "term": term})
    val = total ** (1 / q) if total > 0 else 0.0
    return NormReport(mpfr(val), mpfr(val * rel), rows, exact=False)
