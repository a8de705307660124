"""Synthetic interaction logs with Zipf item popularity.

Each user belongs to one preference cluster. An event is drawn from the
global popularity distribution with the user's popularity weight and
from the user's cluster (popularity restricted to the cluster's items)
otherwise. This reproduces the popular-item over-penalization that
in-batch negatives cause, at a size that trains in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionLog


@dataclass
class SynthConfig:
    num_users: int = 10_000
    num_items: int = 2_000
    zipf_exponent: float = 1.0
    num_clusters: int = 50
    popularity_weight: float = 0.5
    mean_events: float = 20.0
    min_events: int = 5
    seed: int = 0


def synth_interactions(cfg: SynthConfig) -> InteractionLog:
    if cfg.num_users < 1 or cfg.num_items < 2 or cfg.num_clusters < 1:
        raise ValueError("need at least one user, two items and one cluster")
    if not 0.0 <= cfg.popularity_weight <= 1.0:
        raise ValueError("popularity_weight must lie in [0, 1]")
    seq = np.random.SeedSequence(cfg.seed)
    item_rng, user_rng, event_rng, time_rng = (np.random.default_rng(s) for s in seq.spawn(4))

    ranks = item_rng.permutation(cfg.num_items) + 1
    pop = 1.0 / ranks.astype(np.float64) ** cfg.zipf_exponent
    pop /= pop.sum()
    cluster_of_item = item_rng.integers(0, cfg.num_clusters, size=cfg.num_items)
    cluster_cdfs = []
    for c in range(cfg.num_clusters):
        members = np.flatnonzero(cluster_of_item == c)
        if len(members) == 0:
            members = np.array([item_rng.integers(cfg.num_items)])
        w = np.cumsum(pop[members])
        cluster_cdfs.append((members, w / w[-1]))
    global_cdf = np.cumsum(pop)
    global_cdf /= global_cdf[-1]

    user_cluster = user_rng.integers(0, cfg.num_clusters, size=cfg.num_users)
    extra = max(cfg.mean_events - cfg.min_events, 0.0)
    sizes = cfg.min_events + user_rng.poisson(extra, size=cfg.num_users)
    # per-user popularity weight, Beta with mean popularity_weight
    a = max(cfg.popularity_weight, 1e-3) * 4.0
    b = max(1.0 - cfg.popularity_weight, 1e-3) * 4.0
    alpha = user_rng.beta(a, b, size=cfg.num_users)

    users = np.repeat(np.arange(cfg.num_users), sizes)
    from_pop = event_rng.random(len(users)) < alpha[users]
    items = np.empty(len(users), dtype=np.int64)
    g = np.flatnonzero(from_pop)
    items[g] = np.minimum(np.searchsorted(global_cdf, event_rng.random(len(g)), side="right"),
                          cfg.num_items - 1)
    local = np.flatnonzero(~from_pop)
    clusters = user_cluster[users[local]]
    u = event_rng.random(len(local))
    for c in range(cfg.num_clusters):
        sel = clusters == c
        members, cdf = cluster_cdfs[c]
        k = np.minimum(np.searchsorted(cdf, u[sel], side="right"), len(members) - 1)
        items[local[sel]] = members[k]

    start = time_rng.integers(0, 10**8, size=cfg.num_users)
    gaps = time_rng.integers(1, 10**5, size=len(users))
    first = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    cum = np.cumsum(gaps)
    cum -= np.repeat(cum[first] - gaps[first], sizes)
    stamps = start[users] + cum

    order = np.lexsort((np.arange(len(users)), stamps))
    return InteractionLog(
        users[order],
        items[order],
        stamps[order],
        tuple(f"u{k}" for k in range(cfg.num_users)),
        tuple(f"i{k}" for k in range(cfg.num_items)),
    )
