# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot tensor operations.

Mirrors pykernels.py; loops are written for the small matrices this
package actually produces (sequence lengths of tens, model dims of
tens to hundreds), where per-call overhead matters more than BLAS.
"""

import numpy as np

from libc.math cimport exp, sqrt

NAME = "compiled"


cdef void _mm2d(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double acc, aval
    for i in range(m):
        for j in range(n):
            out[i, j] = 0.0
        for l in range(k):
            aval = a[i, l]
            if aval == 0.0:
                continue
            for j in range(n):
                out[i, j] += aval * b[l, j]


def matmul(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul kernel expects 2-D inputs")
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.float64)
    _mm2d(a, b, out)
    return out


def bmm(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0]:
        raise ValueError("bmm kernel expects matching 3-D inputs")
    cdef double[:, :, ::1] av = a
    cdef double[:, :, ::1] bv = b
    out = np.empty((a.shape[0], a.shape[1], b.shape[2]), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t batch = av.shape[0], i
    with nogil:
        for i in range(batch):
            _mm2d(av[i], bv[i], ov[i])
    return out


def softmax_lastaxis(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[x.ndim - 1]
    flat = x.reshape(-1, n)
    out = np.empty_like(flat)
    cdef double[:, ::1] xv = flat
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t rows = xv.shape[0], i, j
    cdef double mx, total
    with nogil:
        for i in range(rows):
            mx = xv[i, 0]
            for j in range(1, n):
                if xv[i, j] > mx:
                    mx = xv[i, j]
            total = 0.0
            for j in range(n):
                ov[i, j] = exp(xv[i, j] - mx)
                total += ov[i, j]
            for j in range(n):
                ov[i, j] /= total
    return out.reshape(x.shape)


def softmax_lastaxis_grad(y, gy):
    y = np.ascontiguousarray(y, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[y.ndim - 1]
    yf = y.reshape(-1, n)
    gf = gy.reshape(-1, n)
    out = np.empty_like(yf)
    cdef double[:, ::1] yv = yf
    cdef double[:, ::1] gv = gf
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t rows = yv.shape[0], i, j
    cdef double dot
    with nogil:
        for i in range(rows):
            dot = 0.0
            for j in range(n):
                dot += yv[i, j] * gv[i, j]
            for j in range(n):
                ov[i, j] = yv[i, j] * (gv[i, j] - dot)
    return out.reshape(y.shape)


def layernorm_lastaxis(x, eps):
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[x.ndim - 1]
    flat = x.reshape(-1, n)
    xhat = np.empty_like(flat)
    rstd = np.empty(flat.shape[0], dtype=np.float64)
    active = np.empty(flat.shape[0], dtype=np.float64)
    cdef double[:, ::1] xv = flat
    cdef double[:, ::1] hv = xhat
    cdef double[::1] rv = rstd
    cdef double[::1] av = active
    cdef Py_ssize_t rows = xv.shape[0], i, j
    cdef double mu, var, d, std, r, epsval = eps
    with nogil:
        for i in range(rows):
            mu = 0.0
            for j in range(n):
                mu += xv[i, j]
            mu /= n
            var = 0.0
            for j in range(n):
                d = xv[i, j] - mu
                var += d * d
            var /= n
            std = sqrt(var)
            if std > epsval:
                av[i] = 1.0
                r = 1.0 / std
            else:
                av[i] = 0.0
                r = 1.0 / epsval
            rv[i] = r
            for j in range(n):
                hv[i, j] = (xv[i, j] - mu) * r
    tail = x.shape[:-1] + (1,)
    return xhat.reshape(x.shape), rstd.reshape(tail), active.reshape(tail)


def layernorm_lastaxis_grad(xhat, rstd, active, gy):
    xhat = np.ascontiguousarray(xhat, dtype=np.float64)
    gy = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t n = xhat.shape[xhat.ndim - 1]
    hf = xhat.reshape(-1, n)
    gf = gy.reshape(-1, n)
    rf = np.ascontiguousarray(rstd, dtype=np.float64).reshape(-1)
    af = np.ascontiguousarray(active, dtype=np.float64).reshape(-1)
    out = np.empty_like(hf)
    cdef double[:, ::1] hv = hf
    cdef double[:, ::1] gv = gf
    cdef double[::1] rv = rf
    cdef double[::1] av = af
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t rows = hv.shape[0], i, j
    cdef double gmean, proj
    with nogil:
        for i in range(rows):
            gmean = 0.0
            proj = 0.0
            for j in range(n):
                gmean += gv[i, j]
                proj += gv[i, j] * hv[i, j]
            gmean /= n
            proj = proj * av[i] / n
            for j in range(n):
                ov[i, j] = rv[i] * (gv[i, j] - gmean - hv[i, j] * proj)
    return out.reshape(xhat.shape)
