"""The same kernels compiled with numba.

Semantics match :mod:`logq._kernels.numpy_impl`; only loop order and
compilation differ.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _mix64_scalar(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def mix64(x):
    out = np.empty(x.shape[0], dtype=np.uint64)
    for i in range(x.shape[0]):
        out[i] = _mix64_scalar(np.uint64(x[i]))
    return out


@njit(cache=True)
def _cms_buckets(items, seeds, width):
    out = np.empty((seeds.shape[0], items.shape[0]), dtype=np.int64)
    w = np.uint64(width)
    for r in range(seeds.shape[0]):
        s = np.uint64(seeds[r])
        for i in range(items.shape[0]):
            out[r, i] = np.int64(_mix64_scalar(np.uint64(items[i]) ^ s) % w)
    return out


def cms_buckets(items, seeds, width):
    return _cms_buckets(np.asarray(items, dtype=np.int64),
                        np.asarray(seeds, dtype=np.uint64), int(width))


@njit(cache=True)
def cms_accumulate(table, buckets, deltas):
    for r in range(table.shape[0]):
        for i in range(buckets.shape[1]):
            table[r, buckets[r, i]] += deltas[i]


@njit(cache=True)
def cms_min_query(table, buckets):
    out = np.empty(buckets.shape[1], dtype=table.dtype)
    for i in range(buckets.shape[1]):
        best = table[0, buckets[0, i]]
        for r in range(1, table.shape[0]):
            v = table[r, buckets[r, i]]
            if v < best:
                best = v
        out[i] = best
    return out


@njit(cache=True)
def _scatter_rows(out, rows, vals):
    for i in range(rows.shape[0]):
        for j in range(out.shape[1]):
            out[rows[i], j] += vals[i, j]


def scatter_rows(out, rows, vals):
    _scatter_rows(out, np.asarray(rows, dtype=np.int64), vals)


@njit(cache=True)
def _dense_scatter(n_rows, n_cols, row_idx, col_idx, weights):
    out = np.zeros((n_rows, n_cols))
    for i in range(row_idx.shape[0]):
        out[row_idx[i], col_idx[i]] += weights[i]
    return out


def dense_scatter(n_rows, n_cols, row_idx, col_idx, weights):
    return _dense_scatter(
        n_rows,
        n_cols,
        np.ascontiguousarray(row_idx, dtype=np.int64).ravel(),
        np.ascontiguousarray(col_idx, dtype=np.int64).ravel(),
        np.ascontiguousarray(weights, dtype=np.float64).ravel(),
    )


@njit(cache=True)
def _row_softmax(logits):
    n, k = logits.shape
    lse = np.empty(n)
    probs = np.empty((n, k))
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > m:
                m = logits[i, j]
        z = 0.0
        for j in range(k):
            e = np.exp(logits[i, j] - m)
            probs[i, j] = e
            z += e
        for j in range(k):
            probs[i, j] /= z
        lse[i] = m + np.log(z)
    return lse, probs


def row_softmax(logits):
    return _row_softmax(np.ascontiguousarray(logits, dtype=np.float64))
