import itertools
from fractions import Fraction

import numpy as np
import pytest
from gmpy2 import mpfr, mpq
from hypothesis import given, settings, strategies as st

from haarbesov.approx import (a_norm, approx_sequence, best_approx, best_constant, bnorm_diff,
                              check_step11, lp_quasinorm, modulus, modulus_report)
from haarbesov.dyadic import DyadicCube, StepFunction, from_uniform, indicator
from haarbesov.experiments import random_haar_prefix, random_step_function
from haarbesov.families import gka_approx_powers, make_gka
from haarbesov.params import BesovParams
from haarbesov.values import exact


def _grid(f, level):
    """Values of f on the uniform level grid as a float array (d = 1)."""
    n = 1 << level
    return np.array([float(f.value_at((mpq(2 * i + 1, 2 * n),))) for i in range(n)])


def _brute_modulus(f, level, t, p):
    """sup over shifts m 2^-level <= t of the shifted L_p difference, on the grid."""
    a = _grid(f, level)
    n = len(a)
    best = 0.0
    for m in range(1, n):
        if Fraction(m, n) > t:
            break
        best = max(best, np.sum(np.abs(a[m:] - a[:-m]) ** p) / n)
    return best ** (1 / p)


def test_lp_quasinorm():
    f = from_uniform(1, 2, [1, -8, 0, 0])
    assert abs(float(lp_quasinorm(f, "1/3")) - ((1 + 2) / 4) ** 3) < 1e-15
    assert lp_quasinorm(f, 1) == mpfr("2.25")


def test_best_constant_zero_when_support_at_most_half():
    f = indicator(DyadicCube(1, (1,)), 5)
    xi, err = best_constant(f, DyadicCube.unit(1), "1/2")
    assert xi == 0
    assert err == mpfr("1.25")   # (5^(1/2) / 2)^2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-6, 6), min_size=4, max_size=4),
       st.sampled_from([Fraction(3, 10), Fraction(1, 2), Fraction(2, 3), Fraction(1)]))
def test_best_constant_beats_a_grid(vals, p):
    f = from_uniform(1, 2, vals)
    xi, err = best_constant(f, DyadicCube.unit(1), p)
    a = np.array(vals, dtype=float)
    grid = np.linspace(-7, 7, 2801)
    F = (np.abs(a[None, :] - grid[:, None]) ** float(p)).mean(axis=1)
    Fstar = float(err) ** float(p)
    assert Fstar <= F.min() + 1e-12
    assert abs(Fstar - np.mean(np.abs(a - float(xi)) ** float(p))) < 1e-12


def test_approx_sequence_of_indicator():
    k = 5
    f = indicator(DyadicCube(k, (3,)))
    seq = approx_sequence(f, "1/2", 8)
    for l, E in enumerate(seq.values):
        want = 2.0 ** (-2 * k) if l < k else 0.0
        assert abs(float(E) - want) <= 1e-30 + 1e-15 * want
    assert all(seq.closed)


def test_approx_sequence_monotone_on_random_functions():
    rng = np.random.default_rng(1)
    for d in (1, 2):
        for _ in range(5):
            f = random_step_function(d, 5, rng)
            vals = approx_sequence(f, "2/3", 6).values
            assert all(a >= b for a, b in zip(vals, vals[1:]))
            assert vals[5] == 0 and vals[6] == 0


def test_singleton_shortcut_matches_closed_form_bit_for_bit():
    for d in (1, 2, 3):
        k = 6
        L = k + 2
        closed = gka_approx_powers(k, d, "2/3")
        closed += [mpq(0)] * (L + 1 - len(closed))
        assert approx_sequence(make_gka(k, d), "2/3", L).powers == closed


def test_best_approx_level_argument():
    with pytest.raises(ValueError):
        best_approx(indicator(DyadicCube(1, (1,))), -1, 1)


def test_a_norm_of_indicator_closed_form():
    k = 6
    params = BesovParams("1/2", 2, "1/4")
    f = indicator(DyadicCube(k, (1,)))
    rep = a_norm(f, params)
    p, q, s = 0.5, 2.0, 0.25
    lp = 2.0 ** (-k / p)
    tail = sum((2 ** (l * s) * 2.0 ** (-k / p)) ** q for l in range(k)) ** (1 / q)
    assert abs(float(rep.value) - (lp + tail)) < 1e-14 * (lp + tail)
    assert rep.budget < 1e-30 * rep.value


def test_a_norm_rejects_short_level_range():
    with pytest.raises(ValueError):
        a_norm(indicator(DyadicCube(3, (1,))), BesovParams(1, 1, "1/2"), 2)


def test_modulus_d1_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(6):
        f = random_step_function(1, 5, rng)
        for p in (Fraction(1, 2), Fraction(1)):
            for k in range(0, 6):
                t = Fraction(1, 1 << k)
                got = float(modulus(f, t, p))
                assert abs(got - _brute_modulus(f, 5, t, float(p))) < 1e-12


def test_modulus_d2_agrees_with_d1_for_functions_of_one_variable():
    rng = np.random.default_rng(9)
    g = random_step_function(1, 4, rng)
    leaves = {DyadicCube(c.level, (c.index[0], i)): v
              for c, v in g.items() for i in range(1, (1 << c.level) + 1)}
    f = StepFunction(2, leaves)
    for k in range(1, 4):
        t = Fraction(1, 1 << k)
        a, b = modulus_report(f, t, "2/3"), modulus(g, t, "2/3")
        assert not a.exact
        assert abs(float(a.value) - float(b)) < 1e-14


def test_bnorm_diff_rows():
    f = indicator(DyadicCube(2, (2,)))
    rep = bnorm_diff(f, BesovParams("1/2", 1, "1/2"), 6)
    assert len(rep.per_level) == 7
    assert rep.exact
    # a jump of height one on each side: omega(t)^p = 2t for t <= 1/4
    for row in rep.per_level[2:]:
        t = 2.0 ** -row["level"]
        assert abs(float(row["omega"]) - (2 * t) ** 2) < 1e-15


def test_check_step11_on_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = int(rng.integers(1, 3))
        g = random_step_function(d, 4, rng)
        k = int(rng.integers(0, 4))
        extra = random_haar_prefix(g, k, rng)
        assert check_step11(g, k, extra)


def test_lp_quasinorm_small_cases():
    assert lp_quasinorm(indicator(DyadicCube(2, (1,))), "1/2") == mpfr(1) / 16
    assert lp_quasinorm(StepFunction(2, {}), "2/3") == 0


def test_best_constant_documented_cases():
    f = from_uniform(1, 2, [1, 1, 1, 0])
    xi, err = best_constant(f, DyadicCube.unit(1), "1/2")
    assert xi == 1 and err == mpfr(1) / 16
    xi, err = best_constant(from_uniform(1, 1, [3, 3]), DyadicCube.unit(1), "1/3")
    assert xi == 3 and err == 0


def test_gka_best_approximation_value():
    assert best_approx(make_gka(2, 2), 1, "2/3") == mpfr(1) / 8


def test_norms_of_zero_and_constants():
    params = BesovParams("2/3", 1, "1/2")
    assert a_norm(StepFunction(1, {}), params).value == 0
    assert bnorm_diff(StepFunction(1, {}), params, 5).value == 0
    c = from_uniform(1, 0, [5])
    assert bnorm_diff(c, params, 5).value == 5
    for k in range(4):
        assert modulus(c, Fraction(1, 1 << k), "1/2") == 0


def test_modulus_of_half_indicator_against_a_dense_shift_grid():
    f = indicator(DyadicCube(1, (1,)))
    t = Fraction(1, 4)
    got = modulus(f, t, 1)
    # one jump at 1/2: the difference is 1 on a set of measure |y| inside I_y
    ys = np.linspace(0, 0.25, 10_001)
    assert abs(float(got) - ys.max()) < 1e-15
    assert got == mpfr("0.25")


def test_modulus_is_bounded_by_the_quasi_triangle():
    rng = np.random.default_rng(12)
    for _ in range(10):
        f = random_step_function(1, 5, rng)
        p = Fraction(2, 3)
        bound = 2 ** 1.5 * float(lp_quasinorm(f, p))
        for k in range(4):
            assert float(modulus(f, Fraction(1, 1 << k), p)) <= bound * (1 + 1e-12)


def test_check_step11_documented_cases():
    from haarbesov.haar import HaarIndex, haar_as_step
    for d in (1, 2):
        h = HaarIndex.of(3, (1,) * d, (1,) * d)
        assert check_step11(haar_as_step(h), 2, [h])
        assert check_step11(StepFunction(d, {}), 1)


def test_quasi_triangle_and_homogeneity():
    rng = np.random.default_rng(13)
    params = BesovParams("2/3", "1/2", "1/2")
    g = float(params.gamma)
    for _ in range(10):
        f1 = random_step_function(1, 5, rng)
        f2 = random_step_function(1, 5, rng)
        a, b, c = a_norm(f1, params), a_norm(f2, params), a_norm(f1 + f2, params)
        assert float(c.value) ** g <= float(a.value) ** g + float(b.value) ** g + float(a.budget + b.budget + c.budget)
        s = a_norm(f1 * -3, params)
        assert abs(s.value - 3 * a.value) <= s.budget + 3 * a.budget


def test_difference_norm_diverges_when_s_reaches_one_over_p():
    f = indicator(DyadicCube(2, (2,)))
    params = BesovParams(1, 1, 1)
    vals = [float(bnorm_diff(f, params, L).value) for L in (4, 8, 16, 32)]
    assert all(b > a + 1 for a, b in zip(vals, vals[1:]))
