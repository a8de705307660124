"""Reference kernels written with plain numpy vector operations."""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(x):
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def cms_buckets(items, seeds, width):
    items = np.asarray(items, dtype=np.int64).astype(np.uint64)
    out = np.empty((len(seeds), len(items)), dtype=np.int64)
    for r, s in enumerate(seeds):
        out[r] = (mix64(items ^ np.uint64(s)) % np.uint64(width)).astype(np.int64)
    return out


def cms_accumulate(table, buckets, deltas):
    for r in range(table.shape[0]):
        np.add.at(table[r], buckets[r], deltas)


def cms_min_query(table, buckets):
    rows = np.arange(table.shape[0])[:, None]
    return table[rows, buckets].min(axis=0)


def scatter_rows(out, rows, vals):
    """out[rows[i]] += vals[i], sequentially in index order."""
    np.add.at(out, rows, vals)


def dense_scatter(n_rows, n_cols, row_idx, col_idx, weights):
    flat = row_idx.astype(np.int64) * n_cols + col_idx
    acc = np.bincount(flat.ravel(), weights=np.ravel(weights), minlength=n_rows * n_cols)
    return acc.reshape(n_rows, n_cols)


def row_softmax(logits):
    """Row-wise (logsumexp, softmax) of a 2-D array, max-shifted."""
    m = logits.max(axis=1)
    e = np.exp(logits - m[:, None])
    z = e.sum(axis=1)
    return m + np.log(z), e / z[:, None]
