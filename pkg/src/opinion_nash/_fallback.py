"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation; the compiled module is
preferred when it imports.
"""
from __future__ import annotations

import numpy as np

TIE_TOL = 1e-9
EXP_MAX = 709.0


def _polish(c3, c2, c1, c0, x):
    for _ in range(3):
        fx = ((c3 * x + c2) * x + c1) * x + c0
        d = (3.0 * c3 * x + 2.0 * c2) * x + c1
        with np.errstate(divide="ignore", invalid="ignore"):
            nx = x - fx / d
        fn = ((c3 * nx + c2) * nx + c1) * nx + c0
        ok = (fx != 0.0) & (d != 0.0) & np.isfinite(nx) & (np.abs(fn) < np.abs(fx))
        x = np.where(ok, nx, x)
    return x


def cubic_roots_batch(c3, c2, c1, c0):
    """Real roots of many cubics at once.

    Returns
    -------
    roots : (N, 3) ndarray
        Ascending real roots, padded with NaN.
    count : (N,) ndarray of int
        1 or 3 (0 where ``c3 == 0``).
    """
    c3, c2, c1, c0 = (np.asarray(v, dtype=float).ravel() for v in (c3, c2, c1, c0))
    N = c3.size
    roots = np.full((N, 3), np.nan)
    count = np.zeros(N, dtype=np.int64)
    good = c3 != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        p = -c2 / (3.0 * c3)
        q = p ** 3 + (c2 * c1 - 3.0 * c3 * c0) / (6.0 * c3 * c3)
        r = c1 / (3.0 * c3)
        m = r - p * p
        disc = q * q + m ** 3

        one = good & (disc >= 0.0)
        sq = np.sqrt(np.where(one, disc, 0.0))
        big = q + np.copysign(sq, q)
        A = np.cbrt(big)
        B = np.where(A != 0.0, -m / A, 0.0)
        x1 = _polish(c3, c2, c1, c0, p + A + B)
        roots[one, 0] = x1[one]
        count[one] = 1

        three = good & (disc < 0.0)
        P = np.where(three, -m, 1.0)
        sP = np.sqrt(P)
        arg = np.clip(q / (P * sP), -1.0, 1.0)
        theta = np.arccos(arg)
        cand = np.stack(
            [_polish(c3, c2, c1, c0, p + 2.0 * sP * np.cos((theta + 2.0 * np.pi * k) / 3.0)) for k in range(3)],
            axis=1,
        )
        cand.sort(axis=1)
        roots[three] = cand[three]
        count[three] = 3
    return roots, count


def select_control(c3, c2, c1, c0):
    """Pick the equilibrium control among the real roots of each control cubic.

    Roots stationary to rounding (backward error below ``TIE_TOL``) are tied
    and the smallest magnitude wins, which is the cheapest running cost.
    Rows with ``c3 == 0`` get ``u = 0``.
    """
    roots, count = cubic_roots_batch(c3, c2, c1, c0)
    c3, c2, c1, c0 = (np.asarray(v, dtype=float).ravel()[:, None] for v in (c3, c2, c1, c0))
    res = np.abs(((c3 * roots + c2) * roots + c1) * roots + c0)
    ar = np.abs(roots)
    scale = ((np.abs(c3) * ar + np.abs(c2)) * ar + np.abs(c1)) * ar + np.abs(c0)
    valid = ~np.isnan(roots)
    res = np.where(valid, res, np.inf)
    best = res.min(axis=1, keepdims=True)
    tied = valid & ((res / np.maximum(1.0, scale) <= TIE_TOL) | (res == best))
    key = np.where(tied, ar, np.inf)
    rows = np.arange(key.shape[0])
    idx = np.argmin(key, axis=1)
    # equal |u| (u and -u both roots): lower residual wins, as in the scalar path
    dup = (key == key[rows, idx][:, None]) & tied
    if np.any(dup.sum(axis=1) > 1):
        idx = np.argmin(np.where(dup, res, np.inf), axis=1)
    u = roots[rows, idx]
    return np.where(count.reshape(-1) > 0, u, 0.0)


def control_coefficients(s, x, alpha, beta, lam, dlam, W, K, xref, x0, sig, b, d):
    """Control-cubic coefficients for arrays of states (broadcasting)."""
    sb = s * b
    arg = sb * x + d
    h = np.exp(np.minimum(arg, EXP_MAX))
    D0 = alpha + beta * x
    C1 = sb * lam * h
    C2 = sb ** 3 * lam * h
    C3 = sb ** 2 * lam * h
    inner0 = lam * (1.0 + sb * x + s * sb * D0 + s * beta + sig * s ** 3 * b * b) + s * dlam
    A1 = W * (x - xref) + K * (x - x0) + b * h * inner0
    A2 = W + K + s * b * b * h * inner0 + s * b * b * lam * (1.0 + s * beta) * h
    return (
        C2 * C2,
        -C2 * (2.0 * A2 + C1 * C2),
        A2 * A2 + 2.0 * A2 * C1 * C2 - 2.0 * C3 * C3,
        2.0 * A1 * C3 - C1 * A2 * A2,
        arg,
    )


def closed_loop_em(s_grid, alpha, beta, lam, dlam, W, K, xref, x0, sig, diff, b, d, dB, feedback):
    """Euler-Maruyama for ``dx = (alpha + beta x - u) ds + diff dB`` under the feedback control.

    Shapes: ``s_grid`` (S+1,), ``alpha, beta, lam, dlam`` (S+1, n), per-agent
    vectors (n,), ``dB`` (R, S, n). Returns ``x, u`` of shape (R, S+1, n), the
    step at which integration stopped (-1 if it completed) and the reason
    (0 none, 1 ``h`` overflow in the control, 2 non-finite state).
    """
    s_grid, alpha, beta, lam, dlam, W, K, xref, x0, sig, diff, dB = (
        np.asarray(v, dtype=float) for v in (s_grid, alpha, beta, lam, dlam, W, K, xref, x0, sig, diff, dB)
    )
    R, S, n = dB.shape
    x = np.empty((R, S + 1, n))
    u = np.zeros((R, S + 1, n))
    x[:, 0, :] = x0
    fail, reason = -1, 0
    for k in range(S + 1):
        xk = x[:, k, :]
        s = s_grid[k]
        if feedback and s != 0.0:
            # overflow is reported through ``arg`` below
            with np.errstate(over="ignore", invalid="ignore"):
                c3, c2, c1, c0, arg = control_coefficients(
                    s, xk, alpha[k], beta[k], lam[k], dlam[k], W, K, xref, x0, sig, b, d
                )
            if np.any(arg > EXP_MAX):
                fail, reason = k, 1
                break
            u[:, k, :] = select_control(c3, c2, c1, c0).reshape(R, n)
        if k == S:
            break
        ds = s_grid[k + 1] - s
        x[:, k + 1, :] = xk + (alpha[k] + beta[k] * xk - u[:, k, :]) * ds + diff * dB[:, k, :]
        if not np.all(np.isfinite(x[:, k + 1, :])):
            fail, reason = k + 1, 2
            break
    return x, u, fail, reason
