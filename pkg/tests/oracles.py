"""Independent reference computations used by the tests.

The symbolic models are typed in from the regime definitions (drift written
in its original bracket form, not the ``alpha + beta x`` reduction used by
the package) and expanded by sympy.
"""
from __future__ import annotations

import functools

import numpy as np
import sympy as sp

x, u, s, b, d, e = sp.symbols("x u s b d e", real=True)
lam, dlam, ddlam = sp.symbols("lam dlam ddlam", real=True)
W, K, xj, x0, sig = sp.symbols("W K xj x0 sig", real=True)
m, g, dg = sp.symbols("m g dg", real=True)
k, w, lt, xb, xi, dxi, sg = sp.symbols("k w lt xb xi dxi sg", real=True)

CONSENSUS_ARGS = (s, b, d, lam, dlam, W, K, xj, x0, sig, m, g)
FOLLOWER_ARGS = (s, b, d, lam, dlam, k, w, xj, x0, sig, xb, xi, sg)


def _f(drift, Wc, Kc):
    h = sp.exp(s * b * x + d)
    return (
        Wc / 2 * (x - xj) ** 2
        + Kc / 2 * (x - x0) ** 2
        + u ** 2 / 2
        + b * lam * x * h
        + dlam * h
        + s * b * lam * h * drift
        + s ** 2 * b ** 2 * sig * lam * h
    )


def consensus_f():
    return _f(m + g * (x - m) - u, W, K)


def follower_f():
    lt_ = k + w
    return _f((k * x + sg * w * xb) / lt_ + xi * (x - xb) - u, w, k)


def _control_poly(f):
    fu, fx = sp.diff(f, u), sp.diff(f, x)
    fxx, fxu = sp.diff(f, x, 2), sp.diff(fx, u)
    expr = sp.expand(fu * fxx ** 2 - 2 * fx * fxu)
    return sp.Poly(expr, u).all_coeffs()


@functools.lru_cache(maxsize=None)
def control_coeff_fn(kind):
    """Numeric ``(c3, c2, c1, c0)`` of the stationarity condition as a polynomial in ``u``."""
    if kind == "consensus":
        coeffs, args = _control_poly(consensus_f()), CONSENSUS_ARGS + (x,)
    else:
        coeffs, args = _control_poly(follower_f()), FOLLOWER_ARGS + (x,)
    assert len(coeffs) == 4
    return sp.lambdify(args, coeffs, "math")


@functools.lru_cache(maxsize=None)
def f_fn(kind):
    f = consensus_f() if kind == "consensus" else follower_f()
    args = (CONSENSUS_ARGS if kind == "consensus" else FOLLOWER_ARGS) + (x, u)
    derivs = [f, sp.diff(f, x), sp.diff(f, x, 2), sp.diff(f, u), sp.diff(f, x, u)]
    return sp.lambdify(args, derivs, "math")


def consensus_opinion_lhs():
    """Mean-field opinion condition with ``h`` linearised, brace typed term by term.

    ``(b e + s b^2 x) {...} - x (W + K) + A3``.
    """
    mean_drift = m + g * (x - m) - u
    brace = (
        2 * lam * x
        + s * b ** 2 * lam * x ** 2
        + s * ddlam
        + (1 + s * b * x) * dlam
        + (1 + s ** 2 * b + b + s * b) * dlam * mean_drift
        + g * (s * dlam + lam * (1 + s * x))
        + s * lam * (1 + s * b * (x - m)) * dg
        + sig * s ** 2 * b ** 2 * (lam * (3 + s * b * x) + dlam)
        - (s * b * lam * x * (1 + s * g) + lam + s * dlam + s ** 2 * b * lam * ((1 - g) * m - u)
           + s * lam * (g + s ** 2 * b * sig))
    )
    return (b * e + s * b ** 2 * x) * brace - x * (W + K) + (W * xj + K * x0)


def follower_opinion_lhs():
    """Follower opinion condition with ``h -> e + s b x`` (drift sign ``sg`` threaded through)."""
    B = xi + k / lt
    A4 = lam + s * dlam + s ** 2 * b * lam * (sg * w / lt * xb - xi * xb - u) + s * lam * (B + s ** 2 * b ** 3 * sig)
    h = e + s * b * x
    brace1 = (
        2 * b * lam
        + s * b ** 2 * dlam
        + s * (1 + s * b ** 2 * dlam + b * lam * (1 + b + s * b)) * B
        + s ** 2 * b ** 2 * dxi
        + s ** 3 * b ** 4 * sig * lam
        - s * b ** 2 * lam * (1 + s * B)
    )
    brace2 = (
        s * b * ddlam
        + b * dlam
        - s * b * (s * b * dlam + lam * (1 + b + s * b)) * ((xi - sg * w / lt) * xb + u)
        + B * b * (lam + dlam)
        + s * b * lam * (1 - s * b * xb) * dxi
        + s ** 2 * b ** 3 * sig * lam * (1 + 2 * s + s * dlam)
        - b * A4
    )
    return s * b ** 3 * lam * h * x ** 2 + h * brace1 * x - (k + w) * x + h * brace2 + (w * xj + k * x0)


OPINION_CONSENSUS_ARGS = (s, b, e, lam, dlam, ddlam, W, K, xj, x0, sig, m, g, dg, u)
OPINION_FOLLOWER_ARGS = (s, b, e, lam, dlam, ddlam, k, w, lt, xj, x0, sig, xb, xi, dxi, sg, u)


@functools.lru_cache(maxsize=None)
def opinion_coeff_fn(kind):
    if kind == "consensus":
        expr, args = consensus_opinion_lhs(), OPINION_CONSENSUS_ARGS
    else:
        expr, args = follower_opinion_lhs(), OPINION_FOLLOWER_ARGS
    coeffs = sp.Poly(sp.expand(expr), x).all_coeffs()
    assert len(coeffs) == 4
    return sp.lambdify(args, coeffs, "math")


def companion_real_roots(c, imag_tol=1e-7):
    """Real eigenvalues of the companion matrix of ``c3 x^3 + c2 x^2 + c1 x + c0``."""
    c3, c2, c1, c0 = c
    C = np.array([[-c2 / c3, -c1 / c3, -c0 / c3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    ev = np.linalg.eigvals(C)
    return np.sort(ev[np.abs(ev.imag) <= imag_tol * max(1.0, np.max(np.abs(ev)))].real)


def rk4(fun, y0, t0, t1, steps):
    """Classical Runge-Kutta for a scalar ODE; returns the final value."""
    h = (t1 - t0) / steps
    y = y0
    t = t0
    for _ in range(steps):
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (_ + 1) * h
    return y


def grid_min_residual(resid, lo=-10.0, hi=10.0, n=20001):
    """Dense grid over ``[lo, hi]`` then bounded refinement around every local minimum."""
    from scipy.optimize import minimize_scalar

    us = np.linspace(lo, hi, n)
    r = resid(us)
    best = float(r.min())
    idx = np.where((r[1:-1] <= r[:-2]) & (r[1:-1] <= r[2:]))[0] + 1
    step = us[1] - us[0]
    for i in idx:
        res = minimize_scalar(lambda v: float(resid(np.array([v]))[0]), bounds=(us[i] - step, us[i] + step),
                              method="bounded", options={"xatol": 1e-14})
        best = min(best, float(res.fun))
    return best
