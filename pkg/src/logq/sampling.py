"""Negative samplers that never return the positive.

Every sampler realizes the positive-excluded proposal Q': the uniform
sampler redraws any draw equal to the example's positive, the in-batch
sampler draws directly from the equivalent conditional distribution. Draws are with replacement. The batched functions take one positive
per row and return ``(items, log_q)`` arrays of shape ``B x n``; the
scalar wrappers return lists of :class:`SampledNegative`.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .data import CatalogStats

MNS_LOGQ_MODES = ("unigram-for-all", "per-source")


class SamplingError(ValueError):
    pass


class SampledNegative(NamedTuple):
    item: int
    log_q: float


def log_q_prime_exact(stats: CatalogStats, d, p) -> np.ndarray | float:
    """``log(#d / (N - #p))``; vectorized over ``d`` and ``p``."""
    d = np.asarray(d, dtype=np.int64)
    p = np.asarray(p, dtype=np.int64)
    if np.any(d == p):
        raise SamplingError("negative coincides with the positive")
    cd = stats.counts[d]
    if np.any(cd <= 0):
        raise SamplingError("zero-count item has no proposal mass")
    rest = stats.total - stats.counts[p]
    if np.any(rest <= 0):
        raise SamplingError("positive holds all the mass; Q' is empty")
    out = np.log(cd) - np.log(rest)
    return float(out) if out.ndim == 0 else out


def log_q_unigram(stats: CatalogStats, d) -> np.ndarray:
    """``log(#d / N)`` (the positive-included unigram mass)."""
    return np.log(stats.counts[np.asarray(d, dtype=np.int64)]) - np.log(stats.total)


def dedup_pool(batch_items) -> np.ndarray:
    return np.unique(np.asarray(batch_items, dtype=np.int64))


def _reject_positive(draw, positives, n):
    """Draw ``B x n`` via ``draw(size)`` and redraw cells equal to the row's positive."""
    out = draw(len(positives) * n).reshape(len(positives), n)
    bad = out == positives[:, None]
    while bad.any():
        out[bad] = draw(int(bad.sum()))
        bad = out == positives[:, None]
    return out


def sample_uniform_batch(catalog_size: int, positives, n: int, rng):
    """Uniform negatives over the catalog; ``log_q = -log(|D|-1)``."""
    if catalog_size < 2:
        raise SamplingError("catalog of one item has no negatives")
    if n < 1:
        raise SamplingError("n must be at least 1")
    positives = np.asarray(positives, dtype=np.int64)
    items = _reject_positive(lambda k: rng.integers(0, catalog_size, size=k), positives, n)
    log_q = np.full(items.shape, -np.log(catalog_size - 1.0))
    return items, log_q


def sample_in_batch_batch(pool, stats: CatalogStats, positives, n: int, rng):
    """Count-weighted draws from the deduplicated pool minus each positive.

    ``pool`` must be sorted and unique (see :func:`dedup_pool`). Each
    negative carries the exact positive-excluded unigram log mass.
    """
    pool = np.asarray(pool, dtype=np.int64)
    positives = np.asarray(positives, dtype=np.int64)
    if n < 1:
        raise SamplingError("n must be at least 1")
    if len(pool) > 1 and np.any(np.diff(pool) <= 0):
        raise SamplingError("pool must be sorted and deduplicated")
    weights = stats.counts[pool].astype(np.float64)
    if np.any(weights <= 0):
        raise SamplingError("pool contains a zero-count item")
    if len(pool) == 0 or (len(pool) == 1 and np.any(positives == pool[0])):
        raise SamplingError("in-batch pool has no item other than the positive")
    items = _draw_excluding(pool, weights, positives, n, rng)
    return items, log_q_prime_exact(stats, items, positives[:, None])


def _alias_table(weights):
    """Vose alias table: ``(prob, alias)`` for O(1) weighted draws."""
    k = len(weights)
    scaled = weights * (k / weights.sum())
    prob = np.ones(k)
    alias = np.arange(k)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s, g = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] -= 1.0 - scaled[s]
        (small if scaled[g] < 1.0 else large).append(g)
    return prob, alias


def _draw_excluding(pool, weights, positives, n, rng):
    """Weighted draws from ``pool``, redrawing any that hit the row's positive."""
    prob, alias = _alias_table(weights)
    k = len(pool)

    def draw(size):
        idx = rng.integers(0, k, size=size)
        return pool[np.where(rng.random(size) < prob[idx], idx, alias[idx])]

    return _reject_positive(draw, positives, n)


def _unigram_log_q_floored(stats, items, positives):
    # zero-count items (reachable only through uniform draws) get a count of 1
    counts = np.maximum(stats.counts[items], 1)
    return np.log(counts) - np.log(stats.total - stats.counts[positives][:, None])


def sample_mixed_batch(
    pool,
    stats: CatalogStats,
    catalog_size: int,
    positives,
    n_uniform: int,
    n_batch: int,
    rng,
    mns_logq_mode: str = "unigram-for-all",
):
    """Uniform negatives followed by in-batch negatives.

    In ``unigram-for-all`` mode every negative carries its unigram log Q'
    (uniform draws included); ``per-source`` keeps each sampler's own
    value.
    """
    if mns_logq_mode not in MNS_LOGQ_MODES:
        raise SamplingError(f"unknown mns_logq_mode {mns_logq_mode!r}")
    positives = np.asarray(positives, dtype=np.int64)
    parts_items, parts_logq = [], []
    if n_uniform > 0:
        items, log_q = sample_uniform_batch(catalog_size, positives, n_uniform, rng)
        if mns_logq_mode == "unigram-for-all":
            log_q = _unigram_log_q_floored(stats, items, positives)
        parts_items.append(items)
        parts_logq.append(log_q)
    if n_batch > 0:
        items, log_q = sample_in_batch_batch(pool, stats, positives, n_batch, rng)
        parts_items.append(items)
        parts_logq.append(log_q)
    if not parts_items:
        raise SamplingError("mixed sampler needs n_uniform + n_batch >= 1")
    return np.concatenate(parts_items, axis=1), np.concatenate(parts_logq, axis=1)


def _as_list(items, log_q):
    return [SampledNegative(int(i), float(q)) for i, q in zip(items[0], log_q[0])]


def sample_uniform(catalog_size: int, p: int, n: int, rng) -> list[SampledNegative]:
    return _as_list(*sample_uniform_batch(catalog_size, [p], n, rng))


def sample_in_batch(pool, stats: CatalogStats, p: int, n: int, rng) -> list[SampledNegative]:
    return _as_list(*sample_in_batch_batch(pool, stats, [p], n, rng))


def sample_mixed(
    pool, stats, catalog_size, p, n_uniform, n_batch, rng, mns_logq_mode="unigram-for-all"
) -> list[SampledNegative]:
    return _as_list(
        *sample_mixed_batch(pool, stats, catalog_size, [p], n_uniform, n_batch, rng, mns_logq_mode)
    )
