# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; ``_fallback.py`` holds the numpy equivalents."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def knn_interpolate(queries, points, values, int k, double sigma):
    cdef double[:, ::1] q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t nq = q.shape[0], n = p.shape[0], nc = v.shape[1]
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    out_arr = np.zeros((nq, nc))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] best_d = np.empty(k)
    cdef Py_ssize_t[::1] best_i = np.empty(k, dtype=np.intp)
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef Py_ssize_t a, j, c, pos, cnt
    cdef double dx, dy, dz, d2, w, wsum
    for a in range(nq):
        cnt = 0
        for j in range(n):
            dx = q[a, 0] - p[j, 0]
            dy = q[a, 1] - p[j, 1]
            dz = q[a, 2] - p[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if cnt == k and d2 >= best_d[k - 1]:
                continue
            # stable insertion: equal distances keep the earlier index first
            pos = cnt if cnt < k else k - 1
            while pos > 0 and best_d[pos - 1] > d2:
                best_d[pos] = best_d[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d2
            best_i[pos] = j
            if cnt < k:
                cnt += 1
        wsum = 0.0
        for j in range(k):
            wsum += exp(-(best_d[j] - best_d[0]) * inv)
        for j in range(k):
            w = exp(-(best_d[j] - best_d[0]) * inv) / wsum
            for c in range(nc):
                out[a, c] += w * v[best_i[j], c]
    return out_arr


def filter_valid(image, kernel):
    cdef double[:, ::1] img = np.ascontiguousarray(image, dtype=np.float64)
    cdef double[::1] ker = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], kw = ker.shape[0]
    cdef Py_ssize_t oh = h - kw + 1, ow = w - kw + 1
    if oh < 1 or ow < 1:
        raise ValueError("image smaller than the filter window")
    rows_arr = np.empty((h, ow))
    out_arr = np.empty((oh, ow))
    cdef double[:, ::1] rows = rows_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(h):
        for j in range(ow):
            acc = 0.0
            for t in range(kw):
                acc += img[i, j + t] * ker[t]
            rows[i, j] = acc
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for t in range(kw):
                acc += rows[i + t, j] * ker[t]
            out[i, j] = acc
    return out_arr
