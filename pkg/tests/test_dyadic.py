from fractions import Fraction

import pytest
from gmpy2 import mpfr, mpq
from hypothesis import given, settings, strategies as st

from haarbesov.dyadic import (ENLARGED, DyadicCube, StepFunction, average, average_exact,
                              constant, dumps, from_uniform, indicator, integral_over, level_integrals,
                              load, loads, measure_support, refine_to_common, save, zero)


def test_cube_geometry():
    c = DyadicCube(2, (2, 3))
    assert c.lower() == (mpq(1, 4), mpq(1, 2))
    assert c.upper() == (mpq(1, 2), mpq(3, 4))
    assert c.measure == mpq(1, 16)
    assert c.parent() == DyadicCube(1, (1, 2))
    assert c.ancestor(0) == DyadicCube.unit(2)
    assert len(c.children()) == 4
    assert all(c.contains(ch) for ch in c.children())


def test_children_offsets_product_order():
    offs = [ch.offset() for ch in DyadicCube(0, (1, 1)).children()]
    assert offs == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_cube_validation():
    with pytest.raises(ValueError):
        DyadicCube.of(-1, (1,))
    assert not DyadicCube(1, (3,)).in_unit()
    assert DyadicCube(1, (3,)).in_enlarged()


def test_ancestor_of_negative_index():
    c = DyadicCube(2, (-1,))      # [-1/2, -1/4)
    assert c.ancestor(0) == DyadicCube(0, (0,))


def test_overlapping_leaves_rejected():
    with pytest.raises(ValueError):
        StepFunction(1, {DyadicCube(1, (1,)): 1, DyadicCube(2, (2,)): 2})


def test_leaf_outside_domain_rejected():
    with pytest.raises(ValueError):
        StepFunction(1, {DyadicCube(1, (3,)): 1})
    f = StepFunction(1, {DyadicCube(1, (3,)): 1}, ENLARGED)
    assert f.integral() == mpq(1, 2)


def test_integrals_and_averages():
    f = StepFunction(2, {DyadicCube(1, (1, 1)): 4, DyadicCube(2, (4, 4)): -16})
    assert f.integral() == mpq(0)
    assert integral_over(f, DyadicCube(1, (1, 1))) == 1
    assert average_exact(f, DyadicCube(1, (2, 2))) == -4
    assert average(f, DyadicCube(0, (1, 1))) == 0
    assert measure_support(f) == mpq(1, 4) + mpq(1, 16)


def test_level_integrals_split():
    f = StepFunction(1, {DyadicCube(1, (1,)): 2, DyadicCube(3, (8,)): 8})
    fine, coarse = level_integrals(f, 2)
    assert fine == {DyadicCube(2, (4,)): mpq(1)}
    assert coarse == [(DyadicCube(1, (1,)), mpfr(2))]


def test_value_at_and_zero_elsewhere():
    f = indicator(DyadicCube(2, (3,)), 5)
    assert f.value_at((Fraction(9, 16),)) == 5
    assert f.value_at((Fraction(1, 16),)) == 0


def test_arithmetic_and_same_function():
    f = constant(1, 2)
    g = from_uniform(1, 1, [2, 2])
    assert f.same_function(g)
    assert f != g
    h = f - g
    assert all(v == 0 for _, v in h.items())
    a, b = refine_to_common(f, indicator(DyadicCube(2, (1,))))
    assert set(a.leaves) == set(b.leaves)


def test_from_uniform_nested():
    f = from_uniform(2, 1, [[1, 2], [3, 4]])
    assert f.leaves[DyadicCube(1, (1, 2))] == 2
    assert f.leaves[DyadicCube(1, (2, 1))] == 3


def test_covering_partitions_domain():
    f = indicator(DyadicCube(3, (5,)))
    assert sum(c.measure for c, _ in f.covering()) == 1
    g = f.with_domain(ENLARGED)
    assert sum(c.measure for c, _ in g.covering()) == 3


def test_text_format_comments_and_errors():
    f = loads("# a comment\ndim 1\n1 2 0x1p+0  # trailing\n")
    assert f.leaves[DyadicCube(1, (2,))] == 1
    with pytest.raises(ValueError):
        loads("1 2 0x1p+0\n")
    with pytest.raises(ValueError):
        loads("dim 2\n1 1 0x1p+0\n")


def test_save_and_load(tmp_path):
    f = from_uniform(1, 2, ["1/3", "-2/7", 0, "5"])
    path = tmp_path / "f.txt"
    save(f, path)
    assert load(path) == f


leaf = st.tuples(st.integers(1, 6), st.integers(0, 10**6), st.fractions(-100, 100))


@settings(max_examples=60, deadline=None)
@given(st.lists(leaf, min_size=0, max_size=8), st.sampled_from(["unit", "enlarged"]))
def test_roundtrip_is_bit_exact(raw, domain):
    leaves = {}
    for lev, i, v in raw:
        c = DyadicCube(lev, ((i % (1 << lev)) + 1,))
        if not any(c.contains(o) or o.contains(c) for o in leaves):
            leaves[c] = v
    f = StepFunction(1, leaves, domain)
    assert loads(dumps(f)) == f


def test_zero_function():
    assert zero(3).integral() == 0
    assert zero(2).max_level == 0


def test_refine_to_common_preserves_integrals():
    f = StepFunction(2, {DyadicCube(3, (1, 1)): 5})
    g = StepFunction(2, {DyadicCube(1, (1, 1)): 2})
    a, b = refine_to_common(f, g)
    assert DyadicCube(3, (1, 1)) in a.leaves and set(a.leaves) == set(b.leaves)
    assert a.integral() == f.integral() and b.integral() == g.integral()
    a, b = refine_to_common(f, f)
    assert a.same_function(f) and b.same_function(f)


def test_averages_of_simple_functions():
    cube = DyadicCube(3, (2, 7))
    assert average(indicator(cube), cube) == 1
    from haarbesov.families import make_gka
    assert average(make_gka(2, 2), DyadicCube.unit(2)) == mpfr("1.5")
    from haarbesov.haar import HaarIndex, haar_as_step
    h = HaarIndex.of(3, (2, 1), (0, 1))
    assert average(haar_as_step(h), h.support) == 0


def test_measure_support_of_simple_functions():
    from haarbesov.families import make_gka
    assert measure_support(indicator(DyadicCube(2, (1, 3)))) == mpq(1, 16)
    assert measure_support(zero(2)) == 0
    assert measure_support(make_gka(5, 2)) == sum(mpq(1, 4 ** j) for j in range(1, 6))


def test_parent_average_is_mean_of_children():
    import random
    rng = random.Random(4)
    f = StepFunction(2, {c: rng.randint(-9, 9) for c in DyadicCube.unit(2).descendants(3)})
    for c in DyadicCube.unit(2).descendants(2):
        kids = [average_exact(f, ch) for ch in c.children()]
        assert average_exact(f, c) == sum(kids) / 4


def test_average_is_linear():
    f = from_uniform(1, 2, ["1/3", 2, -1, 5])
    g = from_uniform(1, 3, [1, 0, 0, 2, "7/5", 0, 1, 1])
    c = DyadicCube(1, (1,))
    lhs = average(f * 3 - g * 2, c)
    rhs = 3 * average(f, c) - 2 * average(g, c)
    assert abs(lhs - rhs) <= 4 * abs(rhs) * mpfr(2) ** -127
