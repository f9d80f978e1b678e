"""Optional numba-fused kernels for the large-hierarchy integrator.

Everything here has a vectorised numpy equivalent in :mod:`spinboson.heom`;
these fused loops just cut the memory traffic of the mode-by-mode coupling
pass.  Import failures fall back silently to the numpy path.
"""

from __future__ import annotations

import numba as nb
import numpy as np

__all__ = ["coupling_pass", "diag_pass", "prop_pass"]


@nb.njit(fastmath=True, cache=True)
def coupling_pass(y, out, shal, deep, upc, dac, dbc, q):
    q00, q01, q10, q11 = q[0, 0], q[0, 1], q[1, 0], q[1, 1]
    for i in range(shal.size):
        s = shal[i]
        d = deep[i]
        y0, y1, y2, y3 = y[d, 0], y[d, 1], y[d, 2], y[d, 3]
        a0 = q00 * y0 + q01 * y2
        a1 = q00 * y1 + q01 * y3
        a2 = q10 * y0 + q11 * y2
        a3 = q10 * y1 + q11 * y3
        b0 = y0 * q00 + y1 * q10
        b1 = y0 * q01 + y1 * q11
        b2 = y2 * q00 + y3 * q10
        b3 = y2 * q01 + y3 * q11
        u = upc[i]
        out[s, 0] += u * (a0 - b0)
        out[s, 1] += u * (a1 - b1)
        out[s, 2] += u * (a2 - b2)
        out[s, 3] += u * (a3 - b3)
        x0, x1, x2, x3 = y[s, 0], y[s, 1], y[s, 2], y[s, 3]
        c0 = q00 * x0 + q01 * x2
        c1 = q00 * x1 + q01 * x3
        c2 = q10 * x0 + q11 * x2
        c3 = q10 * x1 + q11 * x3
        e0 = x0 * q00 + x1 * q10
        e1 = x0 * q01 + x1 * q11
        e2 = x2 * q00 + x3 * q10
        e3 = x2 * q01 + x3 * q11
        da = dac[i]
        db = dbc[i]
        out[d, 0] += da * c0 + db * e0
        out[d, 1] += da * c1 + db * e1
        out[d, 2] += da * c2 + db * e2
        out[d, 3] += da * c3 + db * e3


@nb.njit(parallel=True, fastmath=True, cache=True)
def diag_pass(y, out, damping, free_t):
    for i in nb.prange(y.shape[0]):
        g = damping[i]
        for j in range(4):
            acc = -g * y[i, j]
            for l in range(4):
                acc += y[i, l] * free_t[l, j]
            out[i, j] = acc


@nb.njit(parallel=True, fastmath=True, cache=True)
def prop_pass(y, out, dampfac, p_t):
    for i in nb.prange(y.shape[0]):
        f = dampfac[i]
        for j in range(4):
            acc = y[i, 0] * p_t[0, j]
            for l in range(1, 4):
                acc += y[i, l] * p_t[l, j]
            out[i, j] = f * acc


@nb.njit(parallel=True, fastmath=True, cache=True)
def prop_axpy_pass(y, m, alpha, out, dampfac, p_t):
    """out = damp * ((y + alpha m) @ p_t): one fused stage argument."""
    for i in nb.prange(y.shape[0]):
        f = dampfac[i]
        for j in range(4):
            acc = (y[i, 0] + alpha * m[i, 0]) * p_t[0, j]
            for l in range(1, 4):
                acc += (y[i, l] + alpha * m[i, l]) * p_t[l, j]
            out[i, j] = f * acc


@nb.njit(parallel=True, fastmath=True, cache=True)
def axpy_pass(a, b, alpha, out):
    for i in nb.prange(a.shape[0]):
        for j in range(4):
            out[i, j] = a[i, j] + alpha * b[i, j]


@nb.njit(parallel=True, fastmath=True, cache=True)
def prop_plus_scaled_pass(y, m, alpha, out, dampfac, p_t):
    """out = damp * (y @ p_t) + alpha * m."""
    for i in nb.prange(y.shape[0]):
        f = dampfac[i]
        for j in range(4):
            acc = y[i, 0] * p_t[0, j]
            for l in range(1, 4):
                acc += y[i, l] * p_t[l, j]
            out[i, j] = f * acc + alpha * m[i, j]


@nb.njit(parallel=True, fastmath=True, cache=True)
def double_prop_pass(y, m, alpha, out, d_full, p_full, d_half, p_half):
    """out = damp_full * (y @ p_full) + alpha * damp_half * (m @ p_half)."""
    for i in nb.prange(y.shape[0]):
        ff = d_full[i]
        fh = d_half[i]
        for j in range(4):
            a1 = y[i, 0] * p_full[0, j]
            a2 = m[i, 0] * p_half[0, j]
            for l in range(1, 4):
                a1 += y[i, l] * p_full[l, j]
                a2 += m[i, l] * p_half[l, j]
            out[i, j] = ff * a1 + alpha * fh * a2


@nb.njit(parallel=True, fastmath=True, cache=True)
def final_combine_pass(y, m1, m2, m3, m4, s, out, d_full, p_full, d_half, p_half):
    """y' = prop(y + (s/6) m1, full) + (s/6)(2 prop(m2 + m3, half) + m4)."""
    c = s / 6.0
    for i in nb.prange(y.shape[0]):
        ff = d_full[i]
        fh = d_half[i]
        for j in range(4):
            a1 = (y[i, 0] + c * m1[i, 0]) * p_full[0, j]
            a2 = (m2[i, 0] + m3[i, 0]) * p_half[0, j]
            for l in range(1, 4):
                a1 += (y[i, l] + c * m1[i, l]) * p_full[l, j]
                a2 += (m2[i, l] + m3[i, l]) * p_half[l, j]
            out[i, j] = ff * a1 + c * (2.0 * fh * a2 + m4[i, j])
