"""Best approximation by dyadic step functions and the associated quasi-norms.

All ``p``-th power sums are formed in a *power layer*: every term
``w * |v|^p`` is rounded once (``w`` is an exact measure), the sum of the
rounded terms is exact, and the result is rounded once more.  Closed-form
expressions evaluated the same way therefore agree bit-for-bit.

Rounding budgets are a-priori bounds on the relative error, propagated with
:class:`~haarbesov.values.Tracked`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr, mpq

from .dyadic import DyadicCube, StepFunction, level_integrals, _check_cube
from .haar import partial_sum
from .params import BesovParams
from .values import (Tracked, abs_log_bound, as_rational, budget_of, exact, pow2, tadd, tmul,
                     tpow, tracked, unit_roundoff, value)

__all__ = [
    "ApproxSequence", "NormReport", "Step11Result", "lp_quasinorm", "lp_power",
    "best_constant", "best_approx", "approx_sequence", "a_norm", "modulus",
    "modulus_report", "bnorm_diff", "check_step11",
]


def _check_p(p) -> Fraction:
    p = as_rational(p)
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    return p


class _Powers:
    """|x|^p at the current precision, with a small cache."""

    def __init__(self, p: Fraction):
        self.p = p
        self.pe = value(p)
        self.cache = {}
        self.maxlog = 0.0

    def __call__(self, x) -> mpfr:
        x = abs(x)
        if self.p == 1 or x == 0:
            return x
        r = self.cache.get(x)
        if r is None:
            r = x ** self.pe
            self.cache[x] = r
            self.maxlog = max(self.maxlog, abs_log_bound(x))
        return r

    def rel(self) -> float:
        """Relative error bound of one power-layer term."""
        if self.p == 1:
            return 0.0
        u = float(unit_roundoff())
        return u * (1 + float(self.p) * (1 + self.maxlog))


def _diff(v, xi) -> mpfr:
    """v - xi rounded once from the exact difference."""
    if xi == 0:
        return v
    return mpfr(exact(v) - exact(xi))


@dataclass
class NormReport:
    """A quasi-norm value with its rounding (or quadrature) error budget."""

    value: mpfr
    budget: mpfr
    per_level: list = field(default_factory=list)
    exact: bool = True

    def to_json(self) -> dict:
        def conv(x):
            if isinstance(x, type(mpfr(0))):
                return float(x)
            if isinstance(x, type(mpq(0))):
                return float(x)
            if isinstance(x, Fraction):
                return str(x)
            return x
        return {
            "value": float(self.value),
            "value_hex": format(self.value, "a"),
            "budget": float(self.budget),
            "exact": self.exact,
            "per_level": [{k: conv(v) for k, v in row.items()} for row in self.per_level],
        }


# --- L_p -----------------------------------------------------------------
def lp_power(f: StepFunction, p, pw: _Powers | None = None) -> tuple:
    """(sum of w |v|^p exactly over rounded terms, relative error bound)."""
    p = _check_p(p)
    pw = pw or _Powers(p)
    total = mpq(0)
    for c, v in f.items():
        if v != 0:
            total += c.measure * exact(pw(v))
    return total, pw.rel()


def lp_quasinorm(f: StepFunction, p) -> mpfr:
    """(integral of |f|^p)^(1/p)."""
    p = _check_p(p)
    S, rel = lp_power(f, p)
    return tpow(tracked(S, rel), 1 / p).value


def _lp_tracked(f: StepFunction, p: Fraction, pw: _Powers) -> Tracked:
    S, rel = lp_power(f, p, pw)
    return tpow(tracked(S, rel), 1 / p)


# --- best constants --------------------------------------------------------
def _cube_best(entries: Sequence, cube_measure: mpq, pw: _Powers) -> tuple:
    """Best constant on one cube.

    ``entries`` are ``(w, v)`` pairs of nonzero leaf values inside the cube.
    Returns ``(xi, F, closed)`` where ``F`` is the exact power-layer sum of
    ``w |v - xi|^p`` and ``closed`` marks the support-at-most-half shortcut.
    """
    supp = sum((w for w, _ in entries), mpq(0))
    if 2 * supp <= cube_measure:
        return mpfr(0), sum((w * exact(pw(v)) for w, v in entries), mpq(0)), True
    weights = {}
    for w, v in entries:
        weights[v] = weights.get(v, 0) + w
    w0 = cube_measure - supp
    vals = list(weights)
    wf = [mpfr(weights[v]) for v in vals]
    best_xi, best_F = mpfr(0), None
    cands = vals if mpfr(0) in weights else [mpfr(0)] + vals
    if len(cands) > 24:
        cands = _prefilter(cands, vals, wf, w0, pw.p)
    for xi in cands:
        F = mpfr(w0) * pw(xi) if w0 else mpfr(0)
        for v, w in zip(vals, wf):
            if v != xi:
                F += w * pw(_diff(v, xi))
        if best_F is None or F < best_F:
            best_xi, best_F = xi, F
    xi = best_xi
    F = w0 * exact(pw(xi)) + sum((weights[v] * exact(pw(_diff(v, xi))) for v in vals if v != xi), mpq(0))
    return xi, F, False


def _prefilter(cands: list, vals: list, wf: list, w0, p: Fraction) -> list:
    """Candidates whose float64 objective is within a rigorous margin of the best.

    Each float term errs by at most w * delta^p, delta bounding the error of
    the float difference, so no candidate that could be optimal is dropped.
    """
    pf = float(p)
    v = np.array([float(x) for x in vals])
    w = np.array([float(x) for x in wf])
    c = np.array([float(x) for x in cands])
    if np.any(w == 0) or not np.all(np.isfinite(v)):
        return cands          # weights or values outside float range
    scale = max(float(np.max(np.abs(v))), 1e-300)
    delta = 8 * 2.0 ** -52 * scale + 2.0 ** -1000
    out = np.empty(len(c))
    step = max(1, 2_000_000 // len(v))
    for s in range(0, len(c), step):
        cc = c[s:s + step]
        out[s:s + step] = (np.abs(v[None, :] - cc[:, None]) ** pf) @ w + float(w0) * np.abs(cc) ** pf
    margin = 2 * ((w.sum() + float(w0)) * delta ** pf) + 1e-12 * float(np.min(out))
    keep = np.nonzero(out <= np.min(out) + 2 * margin)[0]
    return [cands[i] for i in keep]


def _restrict_entries(f: StepFunction, cube: DyadicCube) -> tuple:
    """Nonzero (w, v) entries of f inside ``cube``, or the value if f is constant there."""
    entries = []
    for c, v in f.items():
        if c.level <= cube.level:
            if cube.ancestor(c.level) == c:
                return None, v
        elif v != 0 and c.ancestor(cube.level) == cube:
            entries.append((c.measure, v))
    return entries, None


def best_constant(f: StepFunction, cube: DyadicCube, p) -> tuple:
    """Minimizer xi of ||f - xi||_{L_p(cube)} and the minimal error."""
    p = _check_p(p)
    _check_cube(f, cube)
    entries, const = _restrict_entries(f, cube)
    if entries is None:
        return const, mpfr(0)
    pw = _Powers(p)
    xi, F, _ = _cube_best(entries, cube.measure, pw)
    return xi, tpow(tracked(F, pw.rel()), 1 / p).value


@dataclass
class ApproxSequence:
    """E_0(f)_p, ..., E_L(f)_p together with the exact power sums behind them."""

    p: Fraction
    powers: list          # exact power-layer sums E_l^p
    closed: list          # True where every cube used the zero shortcut
    rel: list             # relative error bound of each power sum
    params: BesovParams | None = None

    @property
    def values(self) -> list:
        return [tpow(tracked(S, r), 1 / self.p).value for S, r in zip(self.powers, self.rel)]

    def tracked(self, l: int) -> Tracked:
        return tpow(tracked(self.powers[l], self.rel[l]), 1 / self.p)

    def __len__(self) -> int:
        return len(self.powers)


def approx_sequence(f: StepFunction, p, L: int, params: BesovParams | None = None,
                    pw: _Powers | None = None) -> ApproxSequence:
    """E_l(f)_p for l = 0..L.

    Once every level-l cube holds at most one nonzero leaf the remaining
    levels are closed form: E_m^p is the power sum over leaves finer than m.
    """
    p = _check_p(p)
    pw = pw or _Powers(p)
    leaves = [(c, v) for c, v in f.items() if v != 0]
    powers, closed = [], []
    singleton_from = None
    for l in range(L + 1):
        groups = {}
        for c, v in leaves:
            if c.level > l:
                groups.setdefault(c.ancestor(l), []).append((c.measure, v))
        if all(len(g) == 1 for g in groups.values()):
            singleton_from = l
            break
        cube_m = mpq(1, 1 << (l * f.dim))
        S, cl = mpq(0), True
        for g in groups.values():
            _, F, fast = _cube_best(g, cube_m, pw)
            S += F
            cl = cl and fast
        powers.append(S)
        closed.append(cl)
    if singleton_from is not None:
        terms = {}
        for c, v in leaves:
            terms[c.level] = terms.get(c.level, 0) + c.measure * exact(pw(v))
        suffix = mpq(0)
        by_level = sorted(terms, reverse=True)
        tail = {}
        for lev in by_level:
            suffix += terms[lev]
            tail[lev] = suffix
        # E_l^p = sum over leaves with level > l
        levels_sorted = sorted(terms)
        idx = 0
        for l in range(singleton_from, L + 1):
            while idx < len(levels_sorted) and levels_sorted[idx] <= l:
                idx += 1
            powers.append(tail[levels_sorted[idx]] if idx < len(levels_sorted) else mpq(0))
            closed.append(True)
    rel = pw.rel()
    return ApproxSequence(p, powers, closed, [rel] * len(powers), params)


def best_approx(f: StepFunction, k: int, p) -> mpfr:
    """E_k(f)_p, the L_p distance from f to S_k."""
    if k < 0:
        raise ValueError("negative level")
    return approx_sequence(f, p, k).values[k]


# --- A-norm -----------------------------------------------------------------
def _level_weight(k: int, sq: Fraction) -> Tracked:
    e = k * sq
    if e.denominator == 1:
        return Tracked(pow2(e), 0.0)
    u = float(unit_roundoff())
    return Tracked(pow2(e), u * (2 + abs(float(e)) * math.log(2)))


def _q_sum(terms: list) -> Tracked:
    """Exact sum of tracked nonnegative terms, rounded once."""
    S = sum((exact(t.value) for t in terms), mpq(0))
    rel = max((t.rel for t in terms), default=0.0)
    return tracked(S, rel)


def a_norm(f: StepFunction, params: BesovParams, L_max: int | None = None) -> NormReport:
    """||f||_{L_p} + (sum_{k=0}^{L_max} (2^{ks} E_k(f)_p)^q)^{1/q}."""
    if L_max is None:
        L_max = f.max_level
    if f.max_level > L_max:
        raise ValueError(f"L_max={L_max} is below the finest leaf level {f.max_level}")
    p, q, s = params.p, params.q, params.s
    pw = _Powers(p)
    seq = approx_sequence(f, p, L_max, params, pw)
    lp = _lp_tracked(f, p, pw)
    terms, rows = [], []
    for k, (S, r) in enumerate(zip(seq.powers, seq.rel)):
        Ek = tpow(tracked(S, r), q / p)
        term = tmul(Ek, _level_weight(k, s * q)) if S != 0 else Tracked(mpfr(0), 0.0)
        terms.append(term)
        rows.append({"level": k, "E": seq.tracked(k).value, "term": term.value,
                     "closed": seq.closed[k]})
    tail = tpow(_q_sum(terms), 1 / q)
    total = tadd(lp, tail)
    return NormReport(total.value, budget_of(total), rows)


# --- modulus of smoothness ---------------------------------------------------
def _breaks_1d(f: StepFunction) -> tuple:
    cover = sorted(f.covering(), key=lambda cv: cv[0].lower()[0])
    b = [mpq(0)] + [c.upper()[0] for c, _ in cover]
    return b, [v for _, v in cover]


def _phi_1d(b: list, vals: list, y: mpq, pw: _Powers, dcache: dict) -> mpq:
    """Exact power-layer value of integral_{0}^{1-y} |f(x+y) - f(x)|^p dx."""
    n = len(vals)
    total = mpq(0)
    i, j = 0, 0            # x in piece i, x + y in piece j
    x = mpq(0)
    end = 1 - y
    while j < n and b[j + 1] <= y:
        j += 1
    while x < end:
        nxt = min(b[i + 1], b[j + 1] - y, end)
        if vals[i] != vals[j]:
            key = (i, j)
            t = dcache.get(key)
            if t is None:
                t = exact(pw(_diff(vals[j], vals[i])))
                dcache[key] = t
            total += (nxt - x) * t
        x = nxt
        if x >= end:
            break
        if b[i + 1] == x:
            i += 1
        if b[j + 1] - y == x:
            j += 1
    return total


def _box_arrays(cover):
    import numpy as np
    lo = np.array([[float(t) for t in c.lower()] for c, _ in cover])
    hi = np.array([[float(t) for t in c.upper()] for c, _ in cover])
    return lo, hi


def _phi_nd(cover, lo, hi, y, pw: _Powers, dcache: dict) -> mpq:
    """Power-layer value of integral over I_y of |f(x+y) - f(x)|^p for d >= 2."""
    import numpy as np
    yf = np.array([float(t) for t in y])
    ov = np.minimum(hi[:, None, :], hi[None, :, :] - yf) - np.maximum(lo[:, None, :], lo[None, :, :] - yf)
    pos = np.all(ov > 0, axis=2)
    total = mpq(0)
    for a, bb in zip(*np.nonzero(pos)):
        va, vb = cover[a][1], cover[bb][1]
        if va == vb:
            continue
        key = (int(a), int(bb))
        t = dcache.get(key)
        if t is None:
            t = exact(pw(_diff(vb, va)))
            dcache[key] = t
        vol = mpq(1)
        for m in range(len(y)):
            vol *= mpq(*float(ov[a, bb, m]).as_integer_ratio())
        total += vol * t
    return total


def _default_directions(d: int) -> list:
    import itertools
    dirs = [tuple(1 if m == i else 0 for m in range(d)) for i in range(d)]
    for signs in itertools.product((1, -1), repeat=d - 1):
        dirs.append((1,) + signs)
    return dirs


def _knots_1d(b: list, t: mpq) -> list:
    ks = {bj - bi for i, bi in enumerate(b) for bj in b[i + 1:] if bj - bi <= t}
    ks.add(t)
    return sorted(ks)


class _ModulusEngine:
    """Shared state for evaluating omega(t, f)_p at several t."""

    def __init__(self, f: StepFunction, p: Fraction, directions=None):
        if f.domain != "unit":
            raise ValueError("the modulus is defined on I^d")
        self.f, self.p, self.d = f, p, f.dim
        self.pw = _Powers(p)
        self.dcache = {}
        self.phi_cache = {}
        if self.d == 1:
            if directions not in (None, [(1,)], [(-1,)], [(1,), (-1,)], [(-1,), (1,)]):
                raise ValueError("in d=1 only the directions +-e_1 exist")
            self.b, self.vals = _breaks_1d(f)
            self.knots = _knots_1d(self.b, mpq(1))
            self.exact = True
        else:
            if f.max_level > 24:
                raise ValueError("d >= 2 modulus supports leaf levels up to 24")
            self.cover = f.covering()
            self.lo, self.hi = _box_arrays(self.cover)
            self.dirs = [tuple(int(t) for t in v) for v in (directions or _default_directions(self.d))]
            coords = []
            for m in range(self.d):
                cs = sorted({c.lower()[m] for c, _ in self.cover} | {mpq(1)})
                coords.append(cs)
            self.coords = coords
            self.exact = False

    def phi_1d(self, y: mpq) -> mpq:
        r = self.phi_cache.get(y)
        if r is None:
            r = _phi_1d(self.b, self.vals, y, self.pw, self.dcache)
            self.phi_cache[y] = r
        return r

    def phi_nd(self, y: tuple) -> mpq:
        r = self.phi_cache.get(y)
        if r is None:
            r = _phi_nd(self.cover, self.lo, self.hi, y, self.pw, self.dcache)
            self.phi_cache[y] = r
        return r

    def sup_power(self, t: mpq) -> mpq:
        """max of Phi over the candidate shifts with |y| <= t."""
        if self.d == 1:
            if len(self.vals) <= 1:
                return mpq(0)
            ys = [y for y in self.knots if y <= t]
            if t < 1:
                ys.append(t)
            return max((self.phi_1d(y) for y in ys if 0 < y < 1), default=mpq(0))
        best = mpq(0)
        for v in self.dirs:
            nz = [m for m in range(self.d) if v[m]]
            norm2 = sum(x * x for x in v)
            diffs = set()
            for m in nz:
                cs = self.coords[m]
                diffs |= {bj - bi for i, bi in enumerate(cs) for bj in cs[i + 1:]}
            lim = t * t / norm2
            cands = {mu for mu in diffs if 0 < mu and mu * mu <= lim and mu < 1}
            end = mpq(math.isqrt(int(lim * (1 << 52))), 1 << 26)   # floor(t/|v|) at 2^-26
            if 0 < end < 1:
                cands.add(end)
            for mu in cands:
                best = max(best, self.phi_nd(tuple(mu * x for x in v)))
        return best


def modulus_report(f: StepFunction, t, p, directions=None) -> NormReport:
    """omega(t, f)_p with its budget; ``exact`` is False for the d >= 2 lower bound."""
    p = _check_p(p)
    t = as_rational(t)
    if t <= 0:
        raise ValueError("t must be positive")
    eng = _ModulusEngine(f, p, directions)
    S = eng.sup_power(mpq(t.numerator, t.denominator))
    val = tpow(tracked(S, eng.pw.rel()), 1 / p)
    return NormReport(val.value, budget_of(val), [], eng.exact)


def modulus(f: StepFunction, t, p, directions=None) -> mpfr:
    """First-order L_p modulus of smoothness (a lower bound when d >= 2)."""
    return modulus_report(f, t, p, directions).value


def bnorm_diff(f: StepFunction, params: BesovParams, levels: int, directions=None) -> NormReport:
    """||f||_{L_p} + (sum_{k=0}^{levels} (2^{ks} omega(2^-k, f)_p)^q)^{1/q}."""
    p, q, s = params.p, params.q, params.s
    eng = _ModulusEngine(f, p, directions)
    lp = _lp_tracked(f, p, eng.pw)
    terms, rows = [], []
    sups = []
    for k in range(levels + 1):
        sups.append(eng.sup_power(mpq(1, 1 << k)))
    rel = eng.pw.rel()
    for k, S in enumerate(sups):
        w = tracked(S, rel)
        om = tpow(w, 1 / p)
        term = tmul(tpow(w, q / p), _level_weight(k, s * q)) if S else Tracked(mpfr(0), 0.0)
        terms.append(term)
        rows.append({"level": k, "omega": om.value, "term": term.value})
    tail = tpow(_q_sum(terms), 1 / q)
    total = tadd(lp, tail)
    return NormReport(total.value, budget_of(total), rows, eng.exact)


# --- explicit-constant inequality -------------------------------------------
@dataclass
class Step11Result:
    passed: bool
    lhs: mpfr
    rhs: mpfr

    def __bool__(self) -> bool:
        return self.passed


def check_step11(g: StepFunction, k: int, extra: Iterable = (), p=Fraction(1, 2)) -> Step11Result:
    """Check ||Pg||_p^p <= 2^d 2^{kd(p-1)} sum_{cubes of T_k} ||g||_{L_1(cube)}^p.

    ``P`` is P_k plus the level k+1 Haar terms in ``extra``.  Both sides are
    power-layer sums; the comparison allows for their rounding budgets.
    """
    p = _check_p(p)
    d = g.dim
    Pg = partial_sum(g, k, extra)
    pw = _Powers(p)
    lhs, rel_l = lp_power(Pg, p, pw)
    # L_1 norms on level-k cubes, exactly
    l1 = {}
    coarse_sum = mpq(0)
    for c, v in g.items():
        if v == 0:
            continue
        if c.level >= k:
            a = c.ancestor(k)
            l1[a] = l1.get(a, 0) + c.measure * abs(exact(v))
        else:
            # constant on 2^{(k-l)d} level-k cubes, each with the same L_1 norm
            per = mpq(1, 1 << (k * d)) * abs(exact(v))
            coarse_sum += (1 << ((k - c.level) * d)) * exact(pw(mpfr(per)))
    total = coarse_sum + sum((exact(pw(mpfr(x))) for x in l1.values()), mpq(0))
    rhs = tmul(tracked(total, pw.rel() + float(unit_roundoff())), _level_weight(1, k * d * (p - 1)))
    rhs_val = rhs.value * (1 << d)
    lhs_t = tracked(lhs, rel_l)
    slack = budget_of(lhs_t) + budget_of(Tracked(rhs_val, rhs.rel))
    passed = lhs_t.value <= rhs_val + slack
    return Step11Result(bool(passed), lhs_t.value, rhs_val)
