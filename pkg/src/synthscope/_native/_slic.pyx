# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled SLIC inner-loop kernels.

Arithmetic mirrors ``slic_py.py`` term by term (and the build disables FP
contraction) so compiled and fallback backends return bit-identical labels,
distances and accumulator sums.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

BACKEND = "cython"


def assign_labels(double[:, ::1] l, double[:, ::1] a, double[:, ::1] b,
                  long long[:, ::1] labels, double[:, ::1] centers,
                  Py_ssize_t half_window, double ratio):
    """One SLIC assignment sweep; see slic_py.assign_labels for semantics."""
    cdef Py_ssize_t h = l.shape[0]
    cdef Py_ssize_t w = l.shape[1]
    cdef Py_ssize_t n_clusters = centers.shape[0]
    cdef Py_ssize_t y, x, k, y0, y1, x0, x1, cyi, cxi
    cdef double dl, da, db, dx, dy, d, cx, cy

    out_arr = np.empty((h, w), dtype=np.int64)
    best_arr = np.empty((h, w), dtype=np.float64)
    cdef long long[:, ::1] out = out_arr
    cdef double[:, ::1] best = best_arr

    for y in range(h):
        for x in range(w):
            k = labels[y, x]
            dl = l[y, x] - centers[k, 0]
            da = a[y, x] - centers[k, 1]
            db = b[y, x] - centers[k, 2]
            dx = x - centers[k, 3]
            dy = y - centers[k, 4]
            best[y, x] = (dl * dl + da * da + db * db) + (dx * dx + dy * dy) * ratio
            out[y, x] = k

    for k in range(n_clusters):
        cx = centers[k, 3]
        cy = centers[k, 4]
        cyi = <Py_ssize_t>floor(cy + 0.5)
        cxi = <Py_ssize_t>floor(cx + 0.5)
        y0 = cyi - half_window
        if y0 < 0:
            y0 = 0
        y1 = cyi + half_window + 1
        if y1 > h:
            y1 = h
        x0 = cxi - half_window
        if x0 < 0:
            x0 = 0
        x1 = cxi + half_window + 1
        if x1 > w:
            x1 = w
        if y0 >= y1 or x0 >= x1:
            continue
        for y in range(y0, y1):
            for x in range(x0, x1):
                dl = l[y, x] - centers[k, 0]
                da = a[y, x] - centers[k, 1]
                db = b[y, x] - centers[k, 2]
                dx = x - cx
                dy = y - cy
                d = (dl * dl + da * da + db * db) + (dx * dx + dy * dy) * ratio
                if d < best[y, x]:
                    best[y, x] = d
                    out[y, x] = k

    return out_arr, best_arr


def accumulate(double[:, ::1] l, double[:, ::1] a, double[:, ::1] b,
               long long[:, ::1] labels, Py_ssize_t n_clusters):
    """Per-cluster (L, a, b, x, y) sums and counts, row-major accumulation."""
    cdef Py_ssize_t h = l.shape[0]
    cdef Py_ssize_t w = l.shape[1]
    cdef Py_ssize_t y, x, k

    sums_arr = np.zeros((n_clusters, 5), dtype=np.float64)
    counts_arr = np.zeros(n_clusters, dtype=np.int64)
    cdef double[:, ::1] sums = sums_arr
    cdef long long[::1] counts = counts_arr

    for y in range(h):
        for x in range(w):
            k = labels[y, x]
            sums[k, 0] += l[y, x]
            sums[k, 1] += a[y, x]
            sums[k, 2] += b[y, x]
            sums[k, 3] += x
            sums[k, 4] += y
            counts[k] += 1

    return sums_arr, counts_arr
