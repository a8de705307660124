"""Count-min sketch for streaming item frequencies.

Row ``r`` hashes an item with ``splitmix64(item ^ seed_r) mod width``.
Estimates are the minimum over rows and never undercount.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import _kernels

DEFAULT_WIDTH = 2048
DEFAULT_DEPTH = 5


class CountMinSketch:
    def __init__(self, width: int = DEFAULT_WIDTH, depth: int = DEFAULT_DEPTH, seed: int = 0,
                 hash_seeds=None):
        if width < 1 or depth < 1:
            raise ValueError("width and depth must be positive")
        self.width = int(width)
        self.depth = int(depth)
        if hash_seeds is None:
            rng = np.random.default_rng(seed)
            hash_seeds = rng.integers(0, 2**63, size=depth, dtype=np.int64)
        self.hash_seeds = np.asarray(hash_seeds, dtype=np.uint64)
        if len(self.hash_seeds) != depth:
            raise ValueError("need one hash seed per row")
        self.table = np.zeros((depth, width), dtype=np.int64)
        self.total = 0

    @property
    def epsilon(self) -> float:
        return math.e / self.width

    @property
    def delta(self) -> float:
        return math.exp(-self.depth)

    def buckets(self, items) -> np.ndarray:
        return _kernels.cms_buckets(np.atleast_1d(np.asarray(items, dtype=np.int64)),
                                    self.hash_seeds, self.width)

    def update(self, item: int, delta: int = 1) -> None:
        self.update_many([item], [delta])

    def update_many(self, items, deltas=None) -> None:
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        if deltas is None:
            deltas = np.ones(len(items), dtype=np.int64)
        deltas = np.atleast_1d(np.asarray(deltas, dtype=np.int64))
        if np.any(deltas < 1):
            raise ValueError("delta must be a positive count")
        _kernels.cms_accumulate(self.table, self.buckets(items), deltas)
        self.total += int(deltas.sum())

    def estimate(self, item: int) -> int:
        return int(self.estimate_many([item])[0])

    def estimate_many(self, items) -> np.ndarray:
        return _kernels.cms_min_query(self.table, self.buckets(items))

    def log_q(self, item: int) -> float:
        return float(self.log_q_many([item])[0])

    def log_q_many(self, items) -> np.ndarray:
        """``log(estimate / total)``, the streaming stand-in for log Q'."""
        if self.total <= 0:
            raise ValueError("empty sketch")
        est = self.estimate_many(items)
        if np.any(est <= 0):
            raise ValueError("item never seen by the sketch")
        return np.log(est) - np.log(self.total)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "depth": self.depth,
            "seeds": [int(s) for s in self.hash_seeds],
            "counters": self.table.tolist(),
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CountMinSketch":
        sk = cls(d["width"], d["depth"], hash_seeds=np.array(d["seeds"], dtype=np.uint64))
        sk.table = np.array(d["counters"], dtype=np.int64).reshape(sk.depth, sk.width)
        sk.total = int(d["total"])
        return sk

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CountMinSketch":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# functional aliases
def cms_update(sketch: CountMinSketch, item: int, delta: int = 1) -> None:
    sketch.update(item, delta)


def cms_estimate(sketch: CountMinSketch, item: int) -> int:
    return sketch.estimate(item)


def cms_log_q(sketch: CountMinSketch, item: int) -> float:
    return sketch.log_q(item)


def audit_sketch(stream, width, depth, seed):
    """Per-item (true, estimate) for one sketch built over ``stream``."""
    stream = np.asarray(stream, dtype=np.int64)
    sk = CountMinSketch(width, depth, seed=seed)
    sk.update_many(stream)
    true = np.bincount(stream)
    items = np.flatnonzero(true)
    return items, true[items], sk.estimate_many(items), sk.total
