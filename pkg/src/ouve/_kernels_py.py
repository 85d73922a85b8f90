"""Pure numpy/Python versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def extract_patches(planes, k):
    """Zero-padded k x k neighbourhoods of every (f, t) cell, one row per cell."""
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    C, F, T = planes.shape
    r = k // 2
    padded = np.pad(planes, ((0, 0), (r, r), (r, r)))
    win = sliding_window_view(padded, (k, k), axis=(1, 2))  # C, F, T, k, k
    return np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4).reshape(F * T, C * k * k))


def overlap_add(frames, hop):
    frames = np.asarray(frames, dtype=np.float64)
    n, win = frames.shape
    out = np.zeros((n - 1) * hop + win if n > 0 else 0)
    for m in range(n):
        out[m * hop:m * hop + win] += frames[m]
    return out


def fnv1a64(data):
    h = _FNV_OFFSET
    for byte in bytes(data):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def resonator(x, b0, a1, a2):
    """Time-varying two-pole filter ``y[n] = b0 x[n] - a1 y[n-1] - a2 y[n-2]``."""
    out = np.empty(len(x))
    y1 = y2 = 0.0
    for i, (xi, g, c1, c2) in enumerate(zip(x.tolist(), b0.tolist(), a1.tolist(), a2.tolist())):
        yn = g * xi - c1 * y1 - c2 * y2
        out[i] = yn
        y2, y1 = y1, yn
    return out
