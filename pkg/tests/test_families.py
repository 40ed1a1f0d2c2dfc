import random
from fractions import Fraction

import numpy as np
import pytest
from gmpy2 import mpq

from haarbesov.dyadic import DyadicCube
from haarbesov.families import (gka_integral, gka_terms, iib_cubes, iib_projection, make_chi,
                                make_gka, make_iib, make_linear)
from haarbesov.haar import partial_sum


def test_chi_must_live_in_the_unit_cube():
    assert make_chi(DyadicCube(2, (4,))).integral() == mpq(1, 4)
    with pytest.raises(ValueError):
        make_chi(DyadicCube(1, (3,)))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_gka_cubes_are_disjoint(d):
    cubes = [c for c, _ in gka_terms(12, d)]
    for a in cubes:
        for b in cubes:
            assert a == b or not a.overlaps(b)
    make_gka(12, d)._validate()


@pytest.mark.parametrize("d", [2, 3])
def test_gka_integral_is_the_harmonic_number(d):
    k = 20
    H = sum(Fraction(1, j) for j in range(1, k + 1))
    assert abs(float(gka_integral(k, d)) - float(H)) < 1e-30 + 1e-15 * float(H)
    assert make_gka(k, d).integral() == gka_integral(k, d)


def test_gka_d1_variant_uses_shifted_cubes():
    assert gka_terms(2, 1)[0][0] == DyadicCube(2, (3,))


@pytest.mark.parametrize("d,k", [(1, 5), (2, 3), (3, 2)])
def test_iib_leaf_count_and_placement(d, k):
    f = make_iib(k, d, "2/3")
    assert len(f) == 1 << ((k - 1) * d)
    for cube, j, sub in iib_cubes(k, d):
        assert sub.level == k + j
        assert cube.contains(sub)
        assert sub.lower() == cube.lower()


@pytest.mark.parametrize("d,k", [(1, 6), (2, 3)])
def test_iib_projection_closed_form_is_exact(d, k):
    for alpha in (None, Fraction(3, 2)):
        f = make_iib(k, d, "2/3", alpha)
        assert partial_sum(f, k) == iib_projection(k, d, "2/3", alpha)


def test_iib_order_permutation():
    n = 1 << 3
    order = list(reversed(range(n)))
    f = make_iib(4, 1, 1, order=order)
    assert f.max_level == 4 + n
    with pytest.raises(ValueError):
        make_iib(4, 1, 1, order=[0] * n)


def test_iib_leaf_budget():
    with pytest.raises(ValueError):
        make_iib(10, 2, "1/2", leaf_budget=100)


def test_linear_projection_and_residual():
    f = make_linear(2)
    P = f.projection(2)
    assert partial_sum(f.projection(4), 2).same_function(P)
    rng = random.Random(2)
    ev = f.residual_evaluator(3)
    for _ in range(50):
        x = (Fraction(rng.randrange(1000), 1000), Fraction(rng.randrange(1000), 1000))
        r = f.residual(3, x)
        assert r == f.residual_profile(tuple(8 * t for t in x)) / 8
        assert abs(float(ev(np.array([[float(t) for t in x]]))[0]) - float(r)) < 1e-15


def test_linear_projection_values_are_cell_centres():
    f = make_linear(1)
    P = f.projection(3)
    assert P.value_at((Fraction(1, 20),)) == Fraction(1, 16)


def test_chi_of_the_unit_cube_and_its_approximation():
    from haarbesov.approx import best_approx
    assert make_chi(DyadicCube.unit(2)).value_at((Fraction(1, 3), Fraction(2, 3))) == 1
    cube = DyadicCube(3, (2, 5))
    assert best_approx(make_chi(cube), 3, "1/2") == 0


def test_iib_lp_norms_closed_form():
    from haarbesov.approx import lp_quasinorm
    k, p = 3, Fraction(2, 3)
    H = 1 + Fraction(1, 2) + Fraction(1, 3) + Fraction(1, 4)
    got = float(lp_quasinorm(partial_sum(make_iib(k, 1, p), k), p))
    assert abs(got - 2 ** -1.5 * float(H) ** 1.5) < 1e-15
    for d, k in [(1, 5), (2, 3)]:
        f = make_iib(k, d, p)
        n = 1 << ((k - 1) * d)
        want = sum(2.0 ** (-(j + k) * d) * (2.0 ** ((k + j) * d) * j ** -1.5) ** (2 / 3) for j in range(1, n + 1))
        assert abs(float(lp_quasinorm(f, p)) ** (2 / 3) - want) < 1e-13 * want


def test_iib_quantities_do_not_depend_on_placement_or_order():
    from haarbesov.approx import a_norm, lp_quasinorm
    from haarbesov.params import BesovParams
    params = BesovParams("2/3", 1, "1/2")
    for k in (3, 4):
        lo = make_iib(k, 1, params.p)
        hi = make_iib(k, 1, params.p, placement="highest")
        assert a_norm(lo, params).value == a_norm(hi, params).value
        assert a_norm(partial_sum(lo, k), params).value == a_norm(partial_sum(hi, k), params).value
        n = 1 << (k - 1)
        perm = random.Random(k).sample(range(n), n)
        shuffled = make_iib(k, 1, params.p, order=perm)
        assert lp_quasinorm(partial_sum(shuffled, k), params.p) == lp_quasinorm(partial_sum(lo, k), params.p)


def test_families_use_only_the_zero_shortcut():
    from haarbesov.approx import approx_sequence
    for f in (make_gka(8, 2), make_gka(8, 1), make_iib(4, 2, "2/3")):
        assert all(approx_sequence(f, "2/3", f.max_level).closed)


def test_linear_function_documented_properties():
    for d in (1, 2, 3):
        f = make_linear(d)
        assert f.projection(0).leaves[DyadicCube.unit(d)] == Fraction(d, 2)
    f = make_linear(2)
    k = 3
    g = np.linspace(0, 1, 401, endpoint=False)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    r = f.residual_evaluator(k)(X)
    assert r.max() <= 2 * 2.0 ** -(k + 1) and r.min() >= -2 * 2.0 ** -(k + 1)
    rng = random.Random(6)
    for _ in range(10_000):
        x = (Fraction(rng.randrange(1 << 20), 1 << 20), Fraction(rng.randrange(3 ** 12), 3 ** 12))
        assert f.residual(k, x) == f.residual_profile(tuple((1 << k) * t for t in x)) / (1 << k)


def test_atom_family_sizes():
    from haarbesov.families import make_atom_family
    assert len(make_atom_family("iib", 3, 2, "2/3")) == 1
    assert len(make_atom_family("iib", 5, 1, "2/3")) == 7
    with pytest.raises(ValueError):
        make_atom_family("iib", 3, 2)
