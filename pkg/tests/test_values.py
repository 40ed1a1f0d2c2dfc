from fractions import Fraction

import pytest
from gmpy2 import mpfr, mpq
from hypothesis import given, strategies as st

from haarbesov.values import (as_rational, exact, from_hex, get_precision, pow2, precision,
                              set_precision, tadd, tmul, tpow, tracked, to_hex, value)


def test_default_precision_is_128_bits():
    assert get_precision() == 128


def test_precision_context_restores():
    before = get_precision()
    with precision(64):
        assert get_precision() == 64
        assert value(Fraction(1, 3)).precision == 64
    assert get_precision() == before


def test_set_precision_roundtrip():
    set_precision(200)
    try:
        assert value(1).precision == 200
    finally:
        set_precision(128)


@pytest.mark.parametrize("text,expected", [("2/3", Fraction(2, 3)), ("0.25", Fraction(1, 4)),
                                           ("3", Fraction(3))])
def test_as_rational_strings(text, expected):
    assert as_rational(text) == expected


def test_as_rational_float_uses_shortest_repr():
    assert as_rational(0.8) == Fraction(4, 5)


@given(st.fractions(min_value=-10**6, max_value=10**6))
def test_hex_roundtrip_bit_exact(x):
    v = value(x)
    assert from_hex(to_hex(v)) == v


def test_exact_of_value():
    assert exact(value("1/4")) == mpq(1, 4)


@pytest.mark.parametrize("e", [-1100, -3, 0, 5, 2000])
def test_pow2_integer_exponent_exact(e):
    assert exact(pow2(e)) == mpq(2) ** e


def test_pow2_fractional_exponent():
    assert abs(pow2(Fraction(1, 2)) ** 2 - 2) < mpfr(2) ** -120


def test_tracked_budgets_grow():
    x = tracked(mpq(1, 3))
    assert x.rel > 0
    y = tmul(x, x)
    assert y.rel > x.rel
    z = tpow(tadd(x, x), Fraction(3, 2))
    assert z.rel > 0 and abs(z.value - (mpfr(2) / 3) ** 1.5) < 1e-30


def test_tracked_exact_input_has_no_error():
    assert tracked(mpq(1, 2)).rel == 0.0
