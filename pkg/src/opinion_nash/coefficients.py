"""Closed-form time-varying coefficients and the exponential test function ``h``.

All cosh ratios are evaluated in exponent-difference form so that large
``sqrt(lambda) * t`` does not overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DegenerateMultiplierError, DomainError, SaturationError

_EXP_MAX = 709.0


@dataclass(frozen=True)
class CoefficientParams:
    """Regime constants used by the ``cosh`` coefficient family.

    ``k`` and ``w`` are the common stubbornness and weight of the complete
    network; for a follower ``k`` plays the role of ``k_i``.
    """

    k: float = 1.0
    w: float = 0.5
    n: int = 2
    t: float = 1.0
    w_bar: float = 0.0
    k_1: float = 1.0
    w_i1: float = 0.0

    @property
    def lambda_1(self) -> float:
        return self.k + self.n * self.w

    @property
    def lambda_hat_1(self) -> float:
        return self.k_1 + self.n * self.w_bar

    @property
    def lambda_tilde(self) -> float:
        return self.k + self.w_i1

    def check(self) -> None:
        if not self.t > 0:
            raise DomainError(f"horizon t must be positive (got {self.t})")
        for name in ("k", "w", "w_bar", "k_1", "w_i1"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be finite and >= 0 (got {v})")


@dataclass(frozen=True)
class HParams:
    """Slope ``b`` and offset ``d`` of ``h(s, x) = exp(s*b*x + d)``."""

    b: float = 0.5
    d: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.b) and self.b > 0):
            raise DomainError(f"b must be finite and > 0 (got {self.b})")
        if not (math.isfinite(self.d) and self.d > 0):
            raise DomainError(f"d must be finite and > 0 (got {self.d})")

    @property
    def e(self) -> float:
        return 1.0 + self.d


def _check_time(s, t):
    s_arr = np.asarray(s, dtype=float)
    slack = 1e-12 * max(1.0, t)
    if np.any(s_arr < -slack) or np.any(s_arr > t + slack):
        raise DomainError(f"time {s} outside [0, {t}]")
    return np.clip(s_arr, 0.0, t)


def cosh_ratio(a, c):
    """``cosh(a) / cosh(c)`` for ``a, c >= 0`` without overflow."""
    a = np.asarray(a, dtype=float)
    return np.exp(a - c) * (1.0 + np.exp(-2.0 * a)) / (1.0 + np.exp(-2.0 * c))


def sinh_cosh_ratio(a, c):
    """``sinh(a) / cosh(c)`` for ``a, c >= 0`` without overflow."""
    a = np.asarray(a, dtype=float)
    return np.exp(a - c) * (1.0 - np.exp(-2.0 * a)) / (1.0 + np.exp(-2.0 * c))


def _unwrap(x):
    return float(x) if np.ndim(x) == 0 else x


def _cosh_family(s, base, amp, lam, t):
    """``base/lam + (amp/lam) * cosh(sqrt(lam)(t-s)) / cosh(sqrt(lam) t)`` and its s-derivative."""
    if not lam > 0:
        raise DomainError(f"rate constant must be positive (got {lam})")
    s = _check_time(s, t)
    r = math.sqrt(lam)
    val = base / lam + (amp / lam) * cosh_ratio(r * (t - s), r * t)
    der = -(amp / lam) * r * sinh_cosh_ratio(r * (t - s), r * t)
    return _unwrap(val), _unwrap(der)


def gamma(s, p: CoefficientParams):
    """Mean-reversion weight of the complete-information consensus drift."""
    return _cosh_family(s, p.k, p.n * p.w, p.lambda_1, p.t)[0]


def gamma_ds(s, p: CoefficientParams):
    return _cosh_family(s, p.k, p.n * p.w, p.lambda_1, p.t)[1]


def gamma_hat(s, p: CoefficientParams):
    """Leader analogue of :func:`gamma` built from ``k_1`` and ``n * w_bar``."""
    return _cosh_family(s, p.k_1, p.n * p.w_bar, p.lambda_hat_1, p.t)[0]


def gamma_hat_ds(s, p: CoefficientParams):
    return _cosh_family(s, p.k_1, p.n * p.w_bar, p.lambda_hat_1, p.t)[1]


def xi_hat(s, p: CoefficientParams):
    """Follower attraction towards the leader's fixed opinion."""
    return _cosh_family(s, 0.0, p.w_i1, p.lambda_tilde, p.t)[0]


def xi_hat_ds(s, p: CoefficientParams):
    return _cosh_family(s, 0.0, p.w_i1, p.lambda_tilde, p.t)[1]


def h_exact(s, x, hp: HParams):
    arg = np.asarray(s, dtype=float) * hp.b * np.asarray(x, dtype=float) + hp.d
    if np.any(arg > _EXP_MAX):
        raise SaturationError(f"h overflow: exponent s*b*x+d = {np.max(arg):.6g} exceeds {_EXP_MAX}")
    return _unwrap(np.exp(arg))


def h_approx(s, x, hp: HParams):
    """First-order expansion ``e + s*b*x`` with ``e = 1 + d``."""
    return _unwrap(hp.e + np.asarray(s, dtype=float) * hp.b * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class MultiplierModel:
    """Polynomial Lagrange multiplier ``lambda(s) = sum_k c_k s^k`` (degree <= 4).

    The default is the constant trajectory ``lambda = 1``.
    """

    coeffs: tuple[float, ...] = (1.0,)
    t: float = 1.0
    _d1: np.ndarray = field(init=False, repr=False, compare=False)
    _d2: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if not 1 <= len(c) <= 5:
            raise DomainError(f"multiplier polynomial must have 1..5 coefficients (got {len(c)})")
        if not all(math.isfinite(v) for v in c):
            raise DomainError("multiplier coefficients must be finite")
        object.__setattr__(self, "coeffs", c)
        arr = np.asarray(c)
        object.__setattr__(self, "_d1", P.polyder(arr, 1))
        object.__setattr__(self, "_d2", P.polyder(arr, 2))

    @classmethod
    def constant(cls, value: float = 1.0, t: float = 1.0) -> "MultiplierModel":
        return cls((value,), t)


def multiplier_eval(m: MultiplierModel, s, *, check_domain: bool = True):
    """Return ``(lambda, lambda', lambda'')`` at time ``s``.

    Raises
    ------
    DegenerateMultiplierError
        If ``|lambda(s)| < 1e-12``.
    """
    s = _check_time(s, m.t) if check_domain else np.asarray(s, dtype=float)
    lam = P.polyval(s, np.asarray(m.coeffs))
    if np.any(np.abs(lam) < 1e-12):
        raise DegenerateMultiplierError(f"multiplier vanishes at s={s}")
    return _unwrap(lam), _unwrap(P.polyval(s, m._d1)), _unwrap(P.polyval(s, m._d2))
