"""Besov parameter triples and their regime classification."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .values import as_rational

__all__ = ["BesovParams", "REGIMES"]

REGIMES = (
    "PR1", "PR2", "PR3", "PR4", "degenerate", "trivial_dual",
    "limiting_a", "limiting_b", "atomic_limiting_a", "atomic_limiting_b",
)


@dataclass(frozen=True)
class BesovParams:
    """A validated triple (p, q, s) with 0 < p <= 1, q > 0, s > 0.

    All three are stored as exact fractions; strings such as ``"2/3"`` are
    accepted.
    """

    p: Fraction
    q: Fraction
    s: Fraction

    def __init__(self, p, q, s):
        p, q, s = as_rational(p), as_rational(q), as_rational(s)
        if not 0 < p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {p}")
        if q <= 0:
            raise ValueError(f"q must be positive, got {q}")
        if s <= 0:
            raise ValueError(f"s must be positive, got {s}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "s", s)

    @property
    def gamma(self) -> Fraction:
        return min(self.p, self.q)

    def critical(self, d: int) -> Fraction:
        """The limiting smoothness d(1/p - 1)."""
        return d * (1 / self.p - 1)

    def regimes(self, d: int) -> frozenset:
        """All regime tags that apply in dimension ``d``."""
        p, q, s = self.p, self.q, self.s
        crit = self.critical(d)
        lo_diff = Fraction(d - 1, d)
        lo_atom = Fraction(d, d + 1)
        tags = set()
        if lo_atom < p <= 1 and crit < s < 1:
            tags.add("PR1")
        if crit < s < 1 / p and lo_diff < p <= 1:
            tags.add("PR2")
        if s == crit and lo_diff < p < 1 and q <= p:
            tags.add("PR3")
        if s == crit and lo_atom < p < 1 and q <= p:
            tags.add("PR4")
        if s >= 1 / p:
            tags.add("degenerate")
        if s < min(crit, 1 / p):
            tags.add("trivial_dual")
        if s == crit and lo_diff < p < 1:
            if q > 1:
                tags.add("limiting_a")
            elif p < q:
                tags.add("limiting_b")
        if s == crit and lo_atom <= p < 1:
            if q > 1:
                tags.add("atomic_limiting_a")
            elif p < q:
                tags.add("atomic_limiting_b")
        return frozenset(tags)

    def haar_basis(self, d: int) -> bool:
        """Whether the Haar system is a Schauder basis for the difference scale."""
        return bool(self.regimes(d) & {"PR2", "PR3"})

    def require(self, d: int, *tags: str) -> None:
        """Raise ``ValueError`` unless at least one of ``tags`` applies."""
        have = self.regimes(d)
        if not have.intersection(tags):
            raise ValueError(
                f"parameters {self} (d={d}) are in regimes {sorted(have)}, need one of {list(tags)}")

    def __str__(self) -> str:
        return f"(p={self.p}, q={self.q}, s={self.s})"
