"""The ten acceptance criteria, each at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line; the lines are printed in the
terminal summary.
"""
import time
from fractions import Fraction

import numpy as np
import pytest
from gmpy2 import mpq

from conftest import ACCEPTANCE_LINES
from haarbesov.approx import a_norm, best_constant, bnorm_diff, check_step11
from haarbesov.atoms import (atom_family_iib, half_integral, project_atoms, projection_weight,
                             sample_atoms)
from haarbesov.dyadic import DyadicCube, StepFunction, measure_support
from haarbesov.experiments import (indicator_bracket, parse_config, random_haar_prefix,
                                   random_step_function, run_experiment)
from haarbesov.haar import gram_exact, partial_sum
from haarbesov.params import BesovParams
from haarbesov.values import value


def _record(n, title, ok, detail):
    ACCEPTANCE_LINES.append((n, title, f"[{n:>2}] {'PASS' if ok else 'FAIL'} {title}: {detail}"))
    assert ok, detail


def _run(text):
    return run_experiment(parse_config(text))


def _failed(res):
    return "; ".join(c.line() for c in res.checks if not c.passed) or "all checks pass"


def test_01_gram_identity():
    t0 = time.perf_counter()
    bad = []
    for d in (1, 2, 3):
        G = gram_exact(d, 4)
        n = 1 << (4 * d)
        if G != {(i, i): mpq(1) for i in range(n)}:
            bad.append(d)
    dt = time.perf_counter() - t0
    _record(1, "Haar Gram matrix is the identity through level 4, d=1,2,3",
            not bad and dt < 10, f"mismatch in d={bad}, {dt:.2f}s (limit 10s)")


def _random_values_function(rng, p):
    """A level-4 step function on I; about a third of them have support <= 1/2."""
    level = 4
    n = 1 << level
    vals = rng.uniform(-1, 1, n)
    if rng.random() < 1 / 3:
        vals[rng.permutation(n)[: n // 2 + int(rng.integers(0, n // 2))]] = 0.0
    else:
        # repeated values make ties between candidates likely
        vals = np.round(vals * 4) / 4
    leaves = {DyadicCube(level, (i + 1,)): value(float(v)) for i, v in enumerate(vals) if v != 0}
    return StepFunction(1, leaves)


def test_02_best_constant_against_grid_search():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    cube = DyadicCube.unit(1)
    fails, zero_cases = [], 0
    for p in (Fraction(3, 10), Fraction(1, 2), Fraction(2, 3), Fraction(9, 10), Fraction(1)):
        pf = float(p)
        for n in range(200):
            f = _random_values_function(rng, p)
            xi, err = best_constant(f, cube, p)
            Fstar = float(err) ** pf
            w = np.array([float(c.measure) for c, _ in f.items()])
            v = np.array([float(x) for _, x in f.items()])
            w0 = 1.0 - w.sum()
            lo, hi = min(0.0, v.min(initial=0.0)), max(0.0, v.max(initial=0.0))
            grid = np.linspace(lo, hi, 10_000) if hi > lo else np.zeros(1)
            h = (hi - lo) / 9999 if hi > lo else 0.0
            F = (np.abs(v[None, :] - grid[:, None]) ** pf) @ w + w0 * np.abs(grid) ** pf
            Fgrid = F.min()
            if not (Fstar <= Fgrid + 1e-12 and Fgrid - Fstar <= (h / 2) ** pf + 1e-12):
                fails.append((float(p), n, Fstar, Fgrid))
            if 2 * measure_support(f) <= 1:
                zero_cases += 1
                if xi != 0:
                    fails.append((float(p), n, "nonzero minimizer", float(xi)))
    dt = time.perf_counter() - t0
    _record(2, "best constant vs 10^4-point grid, 200 functions per p",
            not fails and zero_cases > 0 and dt < 60,
            f"{len(fails)} mismatches, {zero_cases} support<=1/2 cases, {dt:.1f}s (limit 60s)")


def test_03_indicator_scaling_bracket():
    worst = 0.0
    for d in (1, 2):
        for p in ("1/2", "2/3"):
            rows = indicator_bracket(d, BesovParams(p, 2, "1/4"), 10)
            norm = [r["normalized"] for r in rows]
            worst = max(worst, max(norm) / min(norm))
    _record(3, "indicator A-norm / 2^{k(s-d/p)} bracket, q=2, s=1/4", worst <= 1.5,
            f"max M/m = {worst:.4f} (limit 1.5)")


def test_04_average_divergence():
    res = _run("experiment = E2\nd = 2\np = 2/3\nq = 2\ns = 1\nk_max = 30\n")
    _record(4, "average divergence with bounded A-norm (d=2, p=2/3, q=2, s=1)",
            res.passed and res.seconds < 120, f"{_failed(res)}; {res.seconds:.1f}s (limit 120s)")


def test_05_partial_sum_blowup():
    res = _run("experiment = E3\nd = 1\np = 2/3\nq = 1\ns = 1/2\nk_min = 4\nk_max = 12\n"
               "variant = both\neps = 1/20\n")
    slope = next(v.slope for k, v in res.fits.items() if "alpha" not in k)
    _record(5, "P_k g_k blow-up (d=1, p=2/3, q=1, s=1/2, k=4..12)",
            res.passed and res.seconds < 300,
            f"slope {slope:.3f}; {_failed(res)}; {res.seconds:.1f}s (limit 300s)")


def test_06_uniform_boundedness():
    t0 = time.perf_counter()
    lines, ok = [], True
    for d, p, q, s in [(1, "4/5", "1/2", "1/4"), (2, "3/4", "1/2", "2/3")]:
        res = _run(f"experiment = E1\nd = {d}\np = {p}\nq = {q}\ns = {s}\nn = 100\n"
                   "level_min = 4\nlevel_max = 8\nseed = 1\n")
        ok = ok and res.passed
        slope = next(iter(res.fits.values())).slope
        lines.append(f"d={d} slope {slope:.4f}")
        if not res.passed:
            lines.append(_failed(res))
    dt = time.perf_counter() - t0
    _record(6, "uniform boundedness of partial sums, 100 functions per level",
            ok and dt < 600, f"{'; '.join(lines)}; {dt:.1f}s (limit 600s)")


def test_07_explicit_constant_inequality():
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(500):
        d = int(rng.integers(1, 3))
        g = random_step_function(d, int(rng.integers(2, 6)), rng)
        k = int(rng.integers(0, g.max_level + 1))
        extra = random_haar_prefix(g, k, rng)
        p = Fraction(int(rng.integers(1, 11)), 10)
        if not check_step11(g, k, extra, p):
            failures += 1
    _record(7, "explicit-constant inequality with C = 2^d, 500 pairs", failures == 0,
            f"{failures} failures")


def test_08_local_means_positivity():
    res = _run("experiment = E5\npart = a\nd = 1\np = 3/5\nq = 1\ns = 1\nk_min = 2\nk_max = 6\n"
               "tol = 1e-8\n")
    _record(8, "local means of f - P_k f stay bounded below (d=1, p=0.6)",
            res.passed and res.seconds < 300, f"{_failed(res)}; {res.seconds:.1f}s (limit 300s)")


def test_09a_projection_matches_sampling():
    worst = 0.0
    for d, k in [(1, 5), (1, 7), (2, 4), (2, 5)]:
        dec = atom_family_iib(k, d, "2/3")
        diff = project_atoms(dec, k) - partial_sum(sample_atoms(dec), k)
        worst = max([worst] + [abs(float(v)) for _, v in diff.items()])
    _record(9, "(a) closed-form atom projection vs sampled partial sum", worst <= 1e-6,
            f"max |difference| = {worst:.2e} (limit 1e-6)")


def test_09b_projection_weight():
    worst = 0.0
    for d in (1, 2, 3):
        b0 = float(half_integral(d))
        for k in (3, 5):
            for j in range(1, 9):
                worst = max(worst, abs(projection_weight(k, j, d) / (b0 * 2.0 ** (-j * d)) - 1))
    _record(9, "(b) projection weight / (b_0 2^{-jd}) = 1", worst <= 1e-8,
            f"max deviation {worst:.2e} (limit 1e-8)")


@pytest.fixture(scope="module")
def e5bc():
    return _run("experiment = E5\npart = bc\nd = 2\np = 2/3\nq = 1\ns = 1\nk_min = 3\nk_max = 7\n")


def test_09c_local_means_lower_bound_slope(e5bc):
    slope = [c for c in e5bc.checks if "slope" in c.name]
    ok = bool(slope) and all(c.passed for c in slope)
    _record(9, "(c) local-means lower bound slope vs log k (d=2, p=2/3, k=3..7)", ok,
            "; ".join(c.line() for c in slope))


def test_09d_atomic_norm_bounded(e5bc):
    atomic = [c for c in e5bc.checks if "atomic" in c.name]
    ok = bool(atomic) and all(c.passed for c in atomic)
    _record(9, "(d) atomic_norm_upper max/min over k=3..7", ok,
            "; ".join(c.line() for c in atomic))


def test_10_norm_equivalence_ratio():
    rng = np.random.default_rng(10)
    params = BesovParams("2/3", 1, "1/2")
    ratios = []
    for _ in range(100):
        f = random_step_function(1, 6, rng)
        a = a_norm(f, params)
        b = bnorm_diff(f, params, 16)
        ratios.append(float(b.value) / float(a.value))
    spread = max(ratios) / min(ratios)
    _record(10, "bnorm_diff / a_norm over 100 level-6 functions", spread <= 10,
            f"max/min = {spread:.3f} (limit 10), ratios in [{min(ratios):.3f}, {max(ratios):.3f}]")
