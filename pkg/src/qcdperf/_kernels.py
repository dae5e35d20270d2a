"""Compiled fast kernels (numba). Scalar/numpy paths elsewhere are the oracles.

No fastmath anywhere: IEEE evaluation order is fixed, so results are bitwise
reproducible and independent of the input arrays' strides (site-major vs
field-major views compile to the same arithmetic sequence).
"""

from __future__ import annotations

import numpy as np
from numba import njit

_C0 = np.complex64(0)
_HALF = np.float32(0.5)


@njit(cache=True)
def dslash_sites(links, chi, out, out_base, bwd_lin, fwd_pos, bwd_pos, eta):
    # links: (V,4,3,3) any strides; chi/out: (Vh,3); tables: (4,Vh) int32;
    # eta: (4,Vh) float32 signs at the output sites.
    nout = out.shape[0]
    for v in range(nout):
        a0 = _C0
        a1 = _C0
        a2 = _C0
        rf = out_base + v
        for mu in range(4):
            fp = fwd_pos[mu, v]
            t0 = links[rf, mu, 0, 0] * chi[fp, 0] + links[rf, mu, 0, 1] * chi[fp, 1] + links[rf, mu, 0, 2] * chi[fp, 2]
            t1 = links[rf, mu, 1, 0] * chi[fp, 0] + links[rf, mu, 1, 1] * chi[fp, 1] + links[rf, mu, 1, 2] * chi[fp, 2]
            t2 = links[rf, mu, 2, 0] * chi[fp, 0] + links[rf, mu, 2, 1] * chi[fp, 1] + links[rf, mu, 2, 2] * chi[fp, 2]
            rb = bwd_lin[mu, v]
            bp = bwd_pos[mu, v]
            s0 = np.conj(links[rb, mu, 0, 0]) * chi[bp, 0] + np.conj(links[rb, mu, 1, 0]) * chi[bp, 1] + np.conj(links[rb, mu, 2, 0]) * chi[bp, 2]
            s1 = np.conj(links[rb, mu, 0, 1]) * chi[bp, 0] + np.conj(links[rb, mu, 1, 1]) * chi[bp, 1] + np.conj(links[rb, mu, 2, 1]) * chi[bp, 2]
            s2 = np.conj(links[rb, mu, 0, 2]) * chi[bp, 0] + np.conj(links[rb, mu, 1, 2]) * chi[bp, 1] + np.conj(links[rb, mu, 2, 2]) * chi[bp, 2]
            e = eta[mu, v]
            a0 += e * (t0 - s0)
            a1 += e * (t1 - s1)
            a2 += e * (t2 - s2)
        out[v, 0] = _HALF * a0
        out[v, 1] = _HALF * a1
        out[v, 2] = _HALF * a2


@njit(cache=True)
def normal_combine(x, ddx, msq4, out):
    # out = 4m^2 * x - D(D(x)), elementwise on (Vh,3) complex64
    n = x.shape[0]
    for v in range(n):
        out[v, 0] = msq4 * x[v, 0] - ddx[v, 0]
        out[v, 1] = msq4 * x[v, 1] - ddx[v, 1]
        out[v, 2] = msq4 * x[v, 2] - ddx[v, 2]


@njit(cache=True)
def dot_re(a, b):
    # Re <a,b> accumulated in float64, fixed order
    acc = 0.0
    n = a.shape[0]
    for v in range(n):
        for c in range(3):
            acc += np.float64(a[v, c].real) * np.float64(b[v, c].real)
            acc += np.float64(a[v, c].imag) * np.float64(b[v, c].imag)
    return acc


@njit(cache=True)
def axpy(alpha, x, y):
    # y += alpha * x, real float32 alpha on complex64 fields
    n = x.shape[0]
    for v in range(n):
        for c in range(3):
            y[v, c] += alpha * x[v, c]


@njit(cache=True)
def xpay(x, beta, y):
    # y = x + beta * y
    n = x.shape[0]
    for v in range(n):
        for c in range(3):
            y[v, c] = x[v, c] + beta * y[v, c]


@njit(cache=True)
def matvec_stream(m, v, out, idx):
    for k in range(idx.shape[0]):
        s = idx[k]
        out[s, 0] = m[s, 0, 0] * v[s, 0] + m[s, 0, 1] * v[s, 1] + m[s, 0, 2] * v[s, 2]
        out[s, 1] = m[s, 1, 0] * v[s, 0] + m[s, 1, 1] * v[s, 1] + m[s, 1, 2] * v[s, 2]
        out[s, 2] = m[s, 2, 0] * v[s, 0] + m[s, 2, 1] * v[s, 1] + m[s, 2, 2] * v[s, 2]


@njit(cache=True)
def matmat_stream(a, b, out, idx):
    for k in range(idx.shape[0]):
        s = idx[k]
        for i in range(3):
            for j in range(3):
                out[s, i, j] = a[s, i, 0] * b[s, 0, j] + a[s, i, 1] * b[s, 1, j] + a[s, i, 2] * b[s, 2, j]
