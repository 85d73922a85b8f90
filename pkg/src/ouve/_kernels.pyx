# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Mirrors ``ouve._kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t

cnp.import_array()


def extract_patches(const double[:, :, ::1] planes, Py_ssize_t k):
    """Zero-padded k x k neighbourhoods of every (f, t) cell, one row per cell."""
    cdef Py_ssize_t C = planes.shape[0], F = planes.shape[1], T = planes.shape[2]
    cdef Py_ssize_t r = k // 2, kk = k * k
    cdef Py_ssize_t c, f, t, i, j, ff, tt, row, col
    out = np.zeros((F * T, C * kk), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for f in range(F):
            for t in range(T):
                row = f * T + t
                for c in range(C):
                    for i in range(k):
                        ff = f + i - r
                        if ff < 0 or ff >= F:
                            continue
                        col = c * kk + i * k
                        for j in range(k):
                            tt = t + j - r
                            if tt < 0 or tt >= T:
                                continue
                            o[row, col + j] = planes[c, ff, tt]
    return out


def overlap_add(const double[:, ::1] frames, Py_ssize_t hop):
    cdef Py_ssize_t n = frames.shape[0], win = frames.shape[1]
    cdef Py_ssize_t m, i, start
    out = np.zeros((n - 1) * hop + win if n > 0 else 0, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for m in range(n):
            start = m * hop
            for i in range(win):
                o[start + i] += frames[m, i]
    return out


def fnv1a64(const unsigned char[::1] data):
    cdef uint64_t h = 0xcbf29ce484222325ULL
    cdef uint64_t prime = 0x100000001b3ULL
    cdef Py_ssize_t i, n = data.shape[0]
    with nogil:
        for i in range(n):
            h ^= data[i]
            h *= prime
    return int(h)


def resonator(const double[::1] x, const double[::1] b0, const double[::1] a1,
              const double[::1] a2):
    """Time-varying two-pole filter ``y[n] = b0 x[n] - a1 y[n-1] - a2 y[n-2]``."""
    cdef Py_ssize_t n = x.shape[0], i
    cdef double y1 = 0.0, y2 = 0.0, yn
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            yn = b0[i] * x[i] - a1[i] * y1 - a2[i] * y2
            o[i] = yn
            y2 = y1
            y1 = yn
    return out
