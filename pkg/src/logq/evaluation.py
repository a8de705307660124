"""Full-catalog ranking metrics (Recall@K, NDCG@K)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset, user_histories
from .model import TwoTowerModel, UserContext, user_embedding

DEFAULT_KS = (20,)
_USER_BLOCK = 1024


@dataclass
class MetricsReport:
    metrics: dict = field(default_factory=dict)
    num_eval_points: int = 0

    def __getitem__(self, key):
        return self.metrics[key]

    def to_json(self) -> str:
        return json.dumps({"metrics": self.metrics, "num_eval_points": self.num_eval_points},
                          indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        keys = sorted(self.metrics)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys + ["num_eval_points"])
        w.writerow([repr(self.metrics[k]) for k in keys] + [self.num_eval_points])
        return buf.getvalue()


def rank_of_positive(model: TwoTowerModel, ctx: UserContext, p: int, candidates) -> int:
    """1-based rank of ``p`` among ``candidates``; ties count against ``p``."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if not np.any(candidates == p):
        raise ValueError(f"positive {p} is not among the candidates")
    g, _ = user_embedding(model, ctx)
    scores = model.item_table[candidates] @ g
    s_p = float(model.item_table[p] @ g)
    others = candidates != p
    return 1 + int(np.count_nonzero(scores[others] >= s_p))


def recall_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def _history_matrix(histories, users, max_history):
    width = max(1, min(max_history, max((len(histories[u]) for u in users), default=1)))
    mat = np.full((len(users), width), -1, dtype=np.int64)
    for r, u in enumerate(users):
        h = histories[u][-max_history:]
        if len(h):
            mat[r, : len(h)] = h
    return mat


def user_vectors(model: TwoTowerModel, users, histories=None, max_history: int = 50) -> np.ndarray:
    """Batched user embeddings (history-mean needs ``histories``)."""
    users = np.asarray(users, dtype=np.int64)
    if model.tower_mode == "id":
        return model.user_table[users]
    hist = _history_matrix(histories, users, max_history)
    mask = hist >= 0
    emb = model.item_table[np.where(mask, hist, 0)] * mask[..., None]
    n = mask.sum(axis=1, keepdims=True)
    return emb.sum(axis=1) / np.maximum(n, 1)


def ranks_for_events(model, users, positives, seen=None, histories=None, max_history=50):
    """Pessimistic full-catalog rank of each (user, positive) event.

    ``seen[u]`` lists items masked out of user ``u``'s candidates; the
    positive itself is never masked.
    """
    users = np.asarray(users, dtype=np.int64)
    positives = np.asarray(positives, dtype=np.int64)
    ranks = np.empty(len(users), dtype=np.int64)
    for start in range(0, len(users), _USER_BLOCK):
        sl = slice(start, start + _USER_BLOCK)
        u, p = users[sl], positives[sl]
        g = user_vectors(model, u, histories, max_history)
        scores = g @ model.item_table.T
        s_p = scores[np.arange(len(u)), p]
        beats = scores >= s_p[:, None]
        beats[np.arange(len(u)), p] = False
        if seen is not None:
            rows = np.concatenate([np.full(len(seen[x]), r) for r, x in enumerate(u)] or [[]])
            cols = np.concatenate([seen[x] for x in u] or [[]])
            if len(rows):
                beats[rows.astype(np.int64), cols.astype(np.int64)] = False
        ranks[sl] = 1 + beats.sum(axis=1)
    return ranks


def metrics_from_ranks(ranks, ks=DEFAULT_KS) -> MetricsReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        raise ValueError("no evaluation points")
    out = {}
    for k in ks:
        hit = ranks <= k
        out[f"recall@{k}"] = float(hit.mean())
        out[f"ndcg@{k}"] = float(np.where(hit, 1.0 / np.log2(ranks + 1), 0.0).mean())
    return MetricsReport(out, len(ranks))


def evaluate(model: TwoTowerModel, split: SplitDataset, ks=DEFAULT_KS, part: str = "test",
             mask_seen: bool = True, max_history: int = 50) -> MetricsReport:
    """Average Recall/NDCG over the events of ``split.<part>``.

    Candidates are the whole catalog minus items the user interacted
    with in earlier parts (train for validation; train and validation
    for test) when ``mask_seen`` is set. History-mean users are built
    from those same earlier parts.
    """
    target = getattr(split, part)
    if len(target) == 0:
        raise ValueError(f"empty {part} set")
    earlier = [split.train] if part == "validation" else [split.train, split.validation]
    histories = user_histories(earlier, split.num_users)
    seen = [np.unique(h) for h in histories] if mask_seen else None
    ranks = ranks_for_events(model, target.users, target.items, seen, histories, max_history)
    return metrics_from_ranks(ranks, ks)
