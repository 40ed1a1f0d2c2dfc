"""Arbitrary-precision values and the exact dyadic layer underneath them.

Function values are ``gmpy2.mpfr`` numbers with a configurable mantissa
(128 bits by default) and an effectively unbounded exponent range.  Anything
that must never round (measures, integrals of step functions, coordinates)
is kept as ``gmpy2.mpq``.
"""
from __future__ import annotations

import contextlib
import math
from fractions import Fraction
from typing import NamedTuple, Union

import gmpy2
from gmpy2 import mpfr, mpq, mpz

__all__ = [
    "DEFAULT_PRECISION", "Value", "Exact", "set_precision", "get_precision",
    "precision", "value", "exact", "as_rational", "to_hex", "from_hex",
    "unit_roundoff", "pow2", "half_pow2", "abs_log_bound", "Tracked",
    "tracked", "tpow", "tmul", "tadd", "budget_of",
]

DEFAULT_PRECISION = 128

Value = type(mpfr(0))
Exact = type(mpq(0))
Number = Union[int, float, str, Fraction, "mpq", "mpfr"]


def _configure(ctx, bits: int) -> None:
    ctx.precision = bits
    ctx.emax = gmpy2.get_emax_max()
    ctx.emin = gmpy2.get_emin_min()


def set_precision(bits: int = DEFAULT_PRECISION) -> None:
    """Set the mantissa width used for every new Value in this thread."""
    if bits < 24:
        raise ValueError("precision below 24 bits is not supported")
    _configure(gmpy2.get_context(), int(bits))


def get_precision() -> int:
    return gmpy2.get_context().precision


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily change the Value precision."""
    ctx = gmpy2.get_context().copy()
    _configure(ctx, int(bits))
    with gmpy2.context(ctx):
        yield


set_precision(DEFAULT_PRECISION)


def as_rational(x: Number) -> Fraction:
    """Parse a parameter such as ``"2/3"``, ``0.8`` or ``Fraction(1, 2)`` exactly.

    Floats are read through their shortest repr, so ``0.8`` means 4/5.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, mpz)):
        return Fraction(int(x))
    if isinstance(x, float):
        return Fraction(repr(x))
    if isinstance(x, type(mpq(0))):
        return Fraction(int(x.numerator), int(x.denominator))
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, Value):
        return Fraction(*x.as_integer_ratio())
    raise TypeError(f"cannot interpret {x!r} as a rational number")


def value(x: Number) -> mpfr:
    """Round ``x`` once to the current Value precision."""
    if isinstance(x, Fraction):
        return mpfr(mpq(x.numerator, x.denominator))
    if isinstance(x, str):
        x = x.strip()
        if x.lower().lstrip("+-").startswith("0x"):
            return from_hex(x)
        if "/" in x:
            return value(Fraction(x))
        return mpfr(x)
    return mpfr(x)


def exact(x: Number) -> mpq:
    """Exact rational equal to ``x`` (Values are dyadic, so this never rounds)."""
    if isinstance(x, type(mpq(0))):
        return x
    if isinstance(x, Value):
        if not gmpy2.is_finite(x):
            raise ValueError("non-finite value has no exact form")
        return mpq(*x.as_integer_ratio())
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    if isinstance(x, float):
        return mpq(*x.as_integer_ratio())
    if isinstance(x, str):
        return exact(value(x)) if x.strip().lower().lstrip("+-").startswith("0x") else mpq(Fraction(x))
    return mpq(x)


def to_hex(x: mpfr) -> str:
    """Hexadecimal float literal, bit-exact at the value's own precision."""
    return format(x, "a")


def from_hex(s: str) -> mpfr:
    v = mpfr(s.strip(), get_precision(), 16)
    return v


def unit_roundoff() -> mpfr:
    return mpfr(2) ** (1 - get_precision()) / 2


def pow2(e: Union[int, Fraction]) -> mpfr:
    """2**e; exact for integer e, correctly rounded otherwise."""
    e = as_rational(e)
    if e.denominator == 1:
        return gmpy2.mul_2exp(mpfr(1), int(e))
    return mpfr(2) ** value(e)


def half_pow2(e: int) -> mpfr:
    """2**(e/2) rounded once."""
    base = gmpy2.mul_2exp(mpfr(1), e // 2)
    if e % 2:
        return base * gmpy2.sqrt(mpfr(2))
    return base


def abs_log_bound(x) -> float:
    """Cheap upper bound for |ln x| of a positive Value or rational."""
    if x == 0:
        return 0.0
    if isinstance(x, type(mpq(0))):
        e = int(x.numerator).bit_length() - int(x.denominator).bit_length()
        return (abs(e) + 1) * math.log(2)
    return (abs(gmpy2.get_exp(mpfr(x))) + 1) * math.log(2)


class Tracked(NamedTuple):
    """A nonnegative Value with an a-priori bound on its relative error."""
    value: mpfr
    rel: float


def tracked(x, rel: float = 0.0) -> Tracked:
    """Round an exact quantity once and account for that rounding."""
    v = mpfr(x)
    if isinstance(x, Value) or exact(v) == exact(x):
        return Tracked(v, rel)
    return Tracked(v, rel + float(unit_roundoff()))


def tpow(x: Tracked, e: Fraction) -> Tracked:
    """x**e for rational e > 0, propagating the relative error bound."""
    e = as_rational(e)
    u = float(unit_roundoff())
    if x.value == 0:
        return Tracked(mpfr(0), 0.0)
    if e == 1:
        return x
    if e.denominator == 1:
        v = x.value ** int(e)
        rel = float(e) * x.rel + float(e) * u
    else:
        v = x.value ** value(e)
        # exponent rounding contributes |ln x|*|e|*u
        rel = float(e) * x.rel + u * (1 + float(e) * abs_log_bound(x.value))
    return Tracked(v, rel * (1 + 1e-9) + u)


def tmul(x: Tracked, y: Tracked) -> Tracked:
    u = float(unit_roundoff())
    return Tracked(x.value * y.value, x.rel + y.rel + u)


def tadd(x: Tracked, y: Tracked) -> Tracked:
    """Sum of two nonnegative tracked values."""
    u = float(unit_roundoff())
    return Tracked(x.value + y.value, max(x.rel, y.rel) + u)


def budget_of(t: Tracked) -> mpfr:
    """Absolute error budget; the factor 2 absorbs second-order terms."""
    return mpfr(2 * t.rel) * abs(t.value)
