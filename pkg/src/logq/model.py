"""Dot-product two-tower scorer with coefficient-driven gradients.

Every loss in :mod:`logq.losses` reports its gradient as coefficients on
item scores. Because ``score(u, d) = <g(u), h(d)>``, turning those
coefficients into parameter gradients only needs the two tables, which
is what :func:`accumulate_score_grads` does.
"""

from __future__ import annotations

import json
import os
import zipfile
from dataclasses import dataclass

import numpy as np

from . import _kernels

CHECKPOINT_FORMAT = "logq-two-tower"
CHECKPOINT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
TOWER_MODES = ("id", "history_mean")


@dataclass
class TwoTowerModel:
    user_table: np.ndarray
    item_table: np.ndarray
    tower_mode: str = "id"

    def __post_init__(self):
        if self.tower_mode not in TOWER_MODES:
            raise ValueError(f"unknown tower mode {self.tower_mode!r}")
        if self.user_table.ndim != 2 or self.item_table.ndim != 2:
            raise ValueError("embedding tables must be 2-D")
        if self.user_table.shape[1] != self.item_table.shape[1] or self.dim < 1:
            raise ValueError("user and item tables must share a positive dimension")

    @property
    def dim(self) -> int:
        return self.item_table.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_table.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_table.shape[0]

    @classmethod
    def init(cls, num_users, num_items, dim, rng, tower_mode="id"):
        """Gaussian init with std 1/sqrt(dim)."""
        scale = 1.0 / np.sqrt(dim)
        users = rng.normal(0.0, scale, size=(num_users, dim))
        items = rng.normal(0.0, scale, size=(num_items, dim))
        return cls(users, items, tower_mode)

    def copy(self) -> "TwoTowerModel":
        return TwoTowerModel(self.user_table.copy(), self.item_table.copy(), self.tower_mode)

    def table(self, name: str) -> np.ndarray:
        if name == "user":
            return self.user_table
        if name == "item":
            return self.item_table
        raise KeyError(name)


@dataclass(frozen=True)
class UserContext:
    user: int
    history: tuple = ()


class GradBuffer:
    """Sparse gradient accumulator keyed by (table, row).

    Rows are appended in blocks and summed lazily by :meth:`rows`, so the
    trainer can push a whole batch of contributions at once.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self._parts: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {"user": [], "item": []}

    def add_rows(self, table: str, rows, values) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).reshape(len(rows), self.dim)
        if not np.all(np.isfinite(values)):
            raise FloatingPointError(f"non-finite gradient for {table} table")
        self._parts[table].append((rows, values))

    def rows(self, table: str) -> tuple[np.ndarray, np.ndarray]:
        """Touched row indices (sorted, unique) and their summed gradients."""
        parts = self._parts[table]
        if not parts:
            return np.empty(0, dtype=np.int64), np.empty((0, self.dim))
        rows = np.concatenate([r for r, _ in parts])
        vals = np.concatenate([v for _, v in parts])
        uniq, inverse = np.unique(rows, return_inverse=True)
        out = np.zeros((len(uniq), self.dim))
        _kernels.scatter_rows(out, inverse, vals)
        return uniq, out

    def get(self, table: str, row: int) -> np.ndarray:
        uniq, vals = self.rows(table)
        k = np.searchsorted(uniq, row)
        if k < len(uniq) and uniq[k] == row:
            return vals[k]
        return np.zeros(self.dim)

    def is_empty(self) -> bool:
        return not any(self._parts.values())

    def clear(self) -> None:
        for parts in self._parts.values():
            parts.clear()


def user_embedding(model: TwoTowerModel, ctx: UserContext) -> tuple[np.ndarray, bool]:
    """Return ``(g(u), cold)``; ``cold`` is set for an empty history in
    history-mean mode, where the embedding is the zero vector."""
    if model.tower_mode == "id":
        return model.user_table[ctx.user], False
    if len(ctx.history) == 0:
        return np.zeros(model.dim), True
    return model.item_table[list(ctx.history)].mean(axis=0), False


def score(model: TwoTowerModel, ctx: UserContext, item: int) -> float:
    if not 0 <= item < model.num_items:
        raise IndexError(f"item {item} out of range [0, {model.num_items})")
    g, _ = user_embedding(model, ctx)
    return float(g @ model.item_table[item])


def score_items(model: TwoTowerModel, ctx: UserContext, items) -> np.ndarray:
    g, _ = user_embedding(model, ctx)
    return model.item_table[np.asarray(items, dtype=np.int64)] @ g


def accumulate_score_grads(model, ctx, items, coeffs, buf: GradBuffer) -> None:
    """buf += sum_i coeffs[i] * d score(ctx, items[i]) / d params."""
    items = np.asarray(items, dtype=np.int64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if items.shape != coeffs.shape:
        raise ValueError("items and coeffs must have the same length")
    if np.isnan(coeffs).any():
        raise FloatingPointError("NaN coefficient")
    if len(items) == 0 or not np.any(coeffs):
        return
    g, cold = user_embedding(model, ctx)
    buf.add_rows("item", items, coeffs[:, None] * g[None, :])
    user_grad = coeffs @ model.item_table[items]
    if model.tower_mode == "id":
        buf.add_rows("user", [ctx.user], user_grad[None, :])
    elif not cold:
        hist = np.asarray(ctx.history, dtype=np.int64)
        share = np.broadcast_to(user_grad / len(hist), (len(hist), model.dim))
        buf.add_rows("item", hist, share)


def save_checkpoint(model: TwoTowerModel, path: str | os.PathLike, extra: dict | None = None) -> None:
    """Write an ``.npz`` with the two tables and a JSON header.

    Header keys: ``format``, ``version``, ``dim``, ``tower_mode`` and an
    optional ``extra`` mapping.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "tower_mode": model.tower_mode,
        "extra": extra or {},
    }
    arrays = {
        "header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
        "user_table": model.user_table,
        "item_table": model.item_table,
    }
    # Fixed zip timestamps keep the file byte-identical across runs.
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)


def load_checkpoint(path: str | os.PathLike) -> tuple[TwoTowerModel, dict]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as z:
        header = json.loads(z["header"].tobytes().decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a two-tower checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        model = TwoTowerModel(z["user_table"].copy(), z["item_table"].copy(), header["tower_mode"])
    return model, header
