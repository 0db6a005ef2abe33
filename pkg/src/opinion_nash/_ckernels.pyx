# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: batched cubic roots and the closed-loop Euler-Maruyama sweep.

Same arithmetic as ``_fallback.py``; see there for the contracts.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cbrt, cos, acos, exp, fabs, copysign, isfinite, INFINITY, NAN, M_PI

cnp.import_array()

cdef double TIE_TOL = 1e-9
cdef double EXP_MAX = 709.0


cdef inline double _peval(double c3, double c2, double c1, double c0, double x) noexcept nogil:
    return ((c3 * x + c2) * x + c1) * x + c0


cdef inline double _polish(double c3, double c2, double c1, double c0, double x) noexcept nogil:
    cdef int it
    cdef double fx, d, nx
    for it in range(3):
        fx = _peval(c3, c2, c1, c0, x)
        d = (3.0 * c3 * x + 2.0 * c2) * x + c1
        if fx == 0.0 or d == 0.0:
            break
        nx = x - fx / d
        if not isfinite(nx) or fabs(_peval(c3, c2, c1, c0, nx)) >= fabs(fx):
            break
        x = nx
    return x


cdef inline int _roots(double c3, double c2, double c1, double c0, double* out) noexcept nogil:
    cdef double p, q, r, m, disc, sq, big, A, B, P, sP, arg, theta, tmp
    cdef int k
    if c3 == 0.0:
        return 0
    p = -c2 / (3.0 * c3)
    q = p * p * p + (c2 * c1 - 3.0 * c3 * c0) / (6.0 * c3 * c3)
    r = c1 / (3.0 * c3)
    m = r - p * p
    disc = q * q + m * m * m
    if disc >= 0.0:
        sq = sqrt(disc)
        big = q + copysign(sq, q)
        A = cbrt(big)
        B = -m / A if A != 0.0 else 0.0
        out[0] = _polish(c3, c2, c1, c0, p + A + B)
        return 1
    P = -m
    sP = sqrt(P)
    arg = q / (P * sP)
    if arg > 1.0:
        arg = 1.0
    elif arg < -1.0:
        arg = -1.0
    theta = acos(arg)
    for k in range(3):
        out[k] = _polish(c3, c2, c1, c0, p + 2.0 * sP * cos((theta + 2.0 * M_PI * k) / 3.0))
    # sort three values
    if out[0] > out[1]:
        tmp = out[0]; out[0] = out[1]; out[1] = tmp
    if out[1] > out[2]:
        tmp = out[1]; out[1] = out[2]; out[2] = tmp
    if out[0] > out[1]:
        tmp = out[0]; out[0] = out[1]; out[1] = tmp
    return 3


cdef inline double _select(double c3, double c2, double c1, double c0) noexcept nogil:
    cdef double roots[3]
    cdef double res[3]
    cdef double best, ar, scale, bu, br
    cdef int cnt, k, pick
    cnt = _roots(c3, c2, c1, c0, roots)
    if cnt == 0:
        return 0.0
    best = INFINITY
    for k in range(cnt):
        res[k] = fabs(_peval(c3, c2, c1, c0, roots[k]))
        if res[k] < best:
            best = res[k]
    pick = -1
    bu = INFINITY
    br = INFINITY
    for k in range(cnt):
        ar = fabs(roots[k])
        scale = ((fabs(c3) * ar + fabs(c2)) * ar + fabs(c1)) * ar + fabs(c0)
        if not (res[k] / (scale if scale > 1.0 else 1.0) <= TIE_TOL or res[k] == best):
            continue
        if ar < bu or (ar == bu and res[k] < br):
            bu = ar
            br = res[k]
            pick = k
    return roots[pick]


def cubic_roots_batch(c3, c2, c1, c0):
    cdef const double[::1] a3 = np.ascontiguousarray(c3, dtype=np.float64).ravel()
    cdef const double[::1] a2 = np.ascontiguousarray(c2, dtype=np.float64).ravel()
    cdef const double[::1] a1 = np.ascontiguousarray(c1, dtype=np.float64).ravel()
    cdef const double[::1] a0 = np.ascontiguousarray(c0, dtype=np.float64).ravel()
    cdef Py_ssize_t N = a3.shape[0], i
    roots_np = np.full((N, 3), np.nan)
    count_np = np.zeros(N, dtype=np.int64)
    cdef double[:, ::1] roots = roots_np
    cdef cnp.int64_t[::1] count = count_np
    cdef double buf[3]
    cdef int c, k
    with nogil:
        for i in range(N):
            c = _roots(a3[i], a2[i], a1[i], a0[i], buf)
            count[i] = c
            for k in range(c):
                roots[i, k] = buf[k]
    return roots_np, count_np


def select_control(c3, c2, c1, c0):
    cdef const double[::1] a3 = np.ascontiguousarray(c3, dtype=np.float64).ravel()
    cdef const double[::1] a2 = np.ascontiguousarray(c2, dtype=np.float64).ravel()
    cdef const double[::1] a1 = np.ascontiguousarray(c1, dtype=np.float64).ravel()
    cdef const double[::1] a0 = np.ascontiguousarray(c0, dtype=np.float64).ravel()
    cdef Py_ssize_t N = a3.shape[0], i
    out_np = np.empty(N)
    cdef double[::1] out = out_np
    with nogil:
        for i in range(N):
            out[i] = _select(a3[i], a2[i], a1[i], a0[i])
    return out_np


def closed_loop_em(s_grid, alpha, beta, lam, dlam, W, K, xref, x0, sig, diff, double b, double d, dB, bint feedback):
    cdef const double[::1] sg = np.ascontiguousarray(s_grid, dtype=np.float64)
    cdef const double[:, ::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[:, ::1] be = np.ascontiguousarray(beta, dtype=np.float64)
    cdef const double[:, ::1] la = np.ascontiguousarray(lam, dtype=np.float64)
    cdef const double[:, ::1] dla = np.ascontiguousarray(dlam, dtype=np.float64)
    cdef const double[::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef const double[::1] xr = np.ascontiguousarray(xref, dtype=np.float64)
    cdef const double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(sig, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(diff, dtype=np.float64)
    cdef const double[:, :, ::1] db = np.ascontiguousarray(dB, dtype=np.float64)
    cdef Py_ssize_t R = db.shape[0], S = db.shape[1], n = db.shape[2]
    x_np = np.empty((R, S + 1, n))
    u_np = np.zeros((R, S + 1, n))
    cdef double[:, :, ::1] x = x_np
    cdef double[:, :, ::1] u = u_np
    cdef Py_ssize_t r, k, a
    cdef double s, sb, xk, arg, h, D0, C1, C2, C3, inner0, A1, A2, ds, xn, uk
    cdef Py_ssize_t fail = -1
    cdef int reason = 0
    cdef Py_ssize_t stop
    with nogil:
        for r in range(R):
            for a in range(n):
                x[r, 0, a] = x0v[a]
            stop = S
            for k in range(S + 1):
                s = sg[k]
                sb = s * b
                for a in range(n):
                    xk = x[r, k, a]
                    uk = 0.0
                    if feedback and s != 0.0:
                        arg = sb * xk + d
                        if arg > EXP_MAX:
                            fail = k
                            reason = 1
                            stop = -1
                            break
                        h = exp(arg)
                        D0 = al[k, a] + be[k, a] * xk
                        C1 = sb * la[k, a] * h
                        C2 = sb * sb * sb * la[k, a] * h
                        C3 = sb * sb * la[k, a] * h
                        inner0 = la[k, a] * (1.0 + sb * xk + s * sb * D0 + s * be[k, a] + sv[a] * s * s * s * b * b) + s * dla[k, a]
                        A1 = Wv[a] * (xk - xr[a]) + Kv[a] * (xk - x0v[a]) + b * h * inner0
                        A2 = Wv[a] + Kv[a] + s * b * b * h * inner0 + s * b * b * la[k, a] * (1.0 + s * be[k, a]) * h
                        uk = _select(C2 * C2, -C2 * (2.0 * A2 + C1 * C2),
                                     A2 * A2 + 2.0 * A2 * C1 * C2 - 2.0 * C3 * C3,
                                     2.0 * A1 * C3 - C1 * A2 * A2)
                    u[r, k, a] = uk
                    if k < S:
                        ds = sg[k + 1] - s
                        xn = xk + (al[k, a] + be[k, a] * xk - uk) * ds + dv[a] * db[r, k, a]
                        if not isfinite(xn):
                            fail = k + 1
                            reason = 2
                            stop = -1
                            break
                        x[r, k + 1, a] = xn
                if stop < 0:
                    break
            if fail >= 0:
                break
    return x_np, u_np, int(fail), reason
