"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Neighbour ties are broken by sample index (stable order), exactly as the
compiled scan does, so both backends pick the same neighbour sets.
"""
import numpy as np

_CHUNK = 256


def _k_smallest(d2, k):
    """Per-row indices of the ``k`` smallest entries, ties to the lower index."""
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1:k]
    # every entry tied with the k-th distance stays a candidate
    rows, cols = np.nonzero(d2 <= kth)
    vals = d2[rows, cols]
    order = np.lexsort((cols, vals, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    starts = np.searchsorted(rows, np.arange(d2.shape[0]))
    take = (starts[:, None] + np.arange(k)).ravel()
    return cols[take].reshape(-1, k), vals[take].reshape(-1, k)


def knn_interpolate(queries, points, values, k, sigma):
    """Gaussian-weighted mean of the ``k`` nearest samples for each query.

    ``queries`` and ``points`` are unit vectors ``(Q, 3)`` and ``(N, 3)``;
    ``values`` is ``(N, C)``.  Returns ``(Q, C)``.
    """
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    inv = 1.0 / (2.0 * sigma * sigma)
    out = np.empty((queries.shape[0], values.shape[1]))
    for s in range(0, queries.shape[0], _CHUNK):
        q = queries[s:s + _CHUNK]
        dx = q[:, 0:1] - points[:, 0]
        dy = q[:, 1:2] - points[:, 1]
        dz = q[:, 2:3] - points[:, 2]
        d2 = dx * dx + dy * dy + dz * dz
        idx, dk = _k_smallest(d2, k)
        # shifting by the nearest distance leaves the normalised weights unchanged
        w = np.exp(-(dk - dk[:, :1]) * inv)
        w /= w.sum(axis=1, keepdims=True)
        out[s:s + _CHUNK] = np.einsum("qk,qkc->qc", w, values[idx])
    return out


def filter_valid(image, kernel):
    """Separable 2-D correlation with ``kernel`` keeping only full windows."""
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    kw = kernel.shape[0]
    rows = np.lib.stride_tricks.sliding_window_view(image, kw, axis=1) @ kernel
    return np.lib.stride_tricks.sliding_window_view(rows, kw, axis=0) @ kernel
