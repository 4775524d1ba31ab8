# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Must stay numerically identical to ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def discrete_frechet(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], dim = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double d, acc, best
    cdef double[::1] prev = np.empty(m, dtype=np.float64)
    cdef double[::1] cur = np.empty(m, dtype=np.float64)
    cdef double[::1] swap

    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(dim):
                d = a[i, k] - b[j, k]
                acc += d * d
            d = sqrt(acc)
            if i == 0 and j == 0:
                cur[j] = d
                continue
            if i == 0:
                best = cur[j - 1]
            elif j == 0:
                best = prev[j]
            else:
                best = prev[j - 1]
                if prev[j] < best:
                    best = prev[j]
                if cur[j - 1] < best:
                    best = cur[j - 1]
            cur[j] = best if best > d else d
        swap = prev
        prev = cur
        cur = swap
    return prev[m - 1]


def nearest_code(const double[:, ::1] z, const double[:, ::1] codebook):
    cdef Py_ssize_t n = z.shape[0], K = codebook.shape[0], dim = z.shape[1]
    cdef Py_ssize_t i, j, k, arg
    cdef double d, acc, best
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = out

    for i in range(n):
        best = 0.0
        arg = -1
        for j in range(K):
            acc = 0.0
            for k in range(dim):
                d = z[i, k] - codebook[j, k]
                acc += d * d
            # strict < keeps the lowest index on ties
            if arg < 0 or acc < best:
                best = acc
                arg = j
        idx[i] = arg
    return out


def causal_smooth(const double[:, ::1] x, const double[::1] weights):
    cdef Py_ssize_t T = x.shape[0], C = x.shape[1], w = weights.shape[0]
    cdef Py_ssize_t t, k, c, src
    out = np.zeros((T, C), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double wk

    for t in range(T):
        for k in range(w):
            src = t - w + 1 + k
            if src < 0:
                src = 0
            wk = weights[k]
            for c in range(C):
                o[t, c] += wk * x[src, c]
    return out
