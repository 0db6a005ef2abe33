"""Real roots of cubic polynomials.

The one-real-root case uses Cardano's radicals in the cancellation-free
arrangement; the three-real-root case (casus irreducibilis) uses the
trigonometric form so that no complex intermediates appear. Every root is
polished with Newton steps on the original coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateCubicError

ONE_REAL = "one-real"
THREE_REAL = "three-real"


@dataclass(frozen=True)
class CubicPoly:
    """``c3 x^3 + c2 x^2 + c1 x + c0``."""

    c3: float
    c2: float
    c1: float
    c0: float

    def __call__(self, x: float) -> float:
        return ((self.c3 * x + self.c2) * x + self.c1) * x + self.c0

    def deriv(self, x: float) -> float:
        return (3.0 * self.c3 * x + 2.0 * self.c2) * x + self.c1

    @property
    def coeffs(self) -> tuple[float, float, float, float]:
        return (self.c3, self.c2, self.c1, self.c0)

    def norm(self) -> float:
        return math.sqrt(sum(c * c for c in self.coeffs))

    def term_scale(self, x: float) -> float:
        """Sum of absolute term magnitudes at ``x``; the natural size of rounding error."""
        ax = abs(x)
        return ((abs(self.c3) * ax + abs(self.c2)) * ax + abs(self.c1)) * ax + abs(self.c0)


@dataclass(frozen=True)
class RootSet:
    roots: tuple[float, ...]
    discriminant: float
    branch: str

    def __iter__(self):
        return iter(self.roots)

    def __len__(self):
        return len(self.roots)


def _polish(poly: CubicPoly, x: float, steps: int = 3) -> float:
    for _ in range(steps):
        fx = poly(x)
        if fx == 0.0:
            break
        d = poly.deriv(x)
        if d == 0.0 or not math.isfinite(d):
            break
        nx = x - fx / d
        if not math.isfinite(nx) or abs(poly(nx)) >= abs(fx):
            break
        x = nx
    return x


def cardano_intermediates(poly: CubicPoly) -> tuple[float, float, float, float]:
    """Shift ``p``, ``q``, ``r`` and discriminant ``q^2 + (r - p^2)^3``.

    The roots are ``p + cbrt(q + sqrt(D)) + cbrt(q - sqrt(D))`` whenever the
    discriminant ``D`` is non-negative.
    """
    a, b, c, d = poly.coeffs
    if a == 0.0:
        raise DegenerateCubicError("leading coefficient is zero")
    p = -b / (3.0 * a)
    q = p ** 3 + (b * c - 3.0 * a * d) / (6.0 * a * a)
    r = c / (3.0 * a)
    disc = q * q + (r - p * p) ** 3
    return p, q, r, disc


def solve_cubic_real(poly: CubicPoly) -> RootSet:
    """All real roots of a cubic, in ascending order.

    Raises
    ------
    DegenerateCubicError
        If ``c3 == 0``.
    """
    p, q, r, disc = cardano_intermediates(poly)
    m = r - p * p
    if disc >= 0.0:
        # one real root: pick the radical that avoids cancellation
        sq = math.sqrt(disc)
        big = q + math.copysign(sq, q)
        A = math.copysign(abs(big) ** (1.0 / 3.0), big)
        B = -m / A if A != 0.0 else 0.0
        roots = (_polish(poly, p + A + B),)
        branch = ONE_REAL
    else:
        # m < 0 here
        P = -m
        sP = math.sqrt(P)
        cos_arg = max(-1.0, min(1.0, q / (P * sP)))
        theta = math.acos(cos_arg)
        roots = tuple(
            sorted(_polish(poly, p + 2.0 * sP * math.cos((theta + 2.0 * math.pi * k) / 3.0)) for k in range(3))
        )
        branch = THREE_REAL
    return RootSet(roots=roots, discriminant=disc, branch=branch)
