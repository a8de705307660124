"""Interaction logs, unigram statistics and train/validation/test splits."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

HEADER = ("user_id", "item_id", "timestamp")


class DataError(ValueError):
    """Raised for unreadable or inconsistent interaction data."""


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class Interaction(NamedTuple):
    user: int
    item: int
    timestamp: int


@dataclass(frozen=True)
class InteractionLog:
    """Dense-indexed interaction events in file order.

    ``user_ids[i]`` / ``item_ids[j]`` give the original identifier of
    user index ``i`` / item index ``j``. Sub-logs produced by the splits
    share the id maps (and therefore ``num_users``/``num_items``) of the
    log they came from.
    """

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    user_ids: tuple
    item_ids: tuple

    def __post_init__(self):
        n = len(self.users)
        if len(self.items) != n or len(self.timestamps) != n:
            raise DataError("users, items and timestamps must have equal length")
        if n:
            if self.users.min() < 0 or self.users.max() >= len(self.user_ids):
                raise DataError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= len(self.item_ids):
                raise DataError("item index out of range")
            if self.timestamps.min() < 0:
                raise DataError("negative timestamp")

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[Interaction]:
        for u, i, t in zip(self.users.tolist(), self.items.tolist(), self.timestamps.tolist()):
            yield Interaction(u, i, t)

    def __getitem__(self, k: int) -> Interaction:
        return Interaction(int(self.users[k]), int(self.items[k]), int(self.timestamps[k]))

    def take(self, positions) -> "InteractionLog":
        positions = np.asarray(positions, dtype=np.int64)
        return InteractionLog(
            self.users[positions],
            self.items[positions],
            self.timestamps[positions],
            self.user_ids,
            self.item_ids,
        )

    @classmethod
    def from_arrays(cls, users, items, timestamps, num_users=None, num_items=None):
        """Build a log whose ids are the decimal string of each index."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        timestamps = np.asarray(timestamps, dtype=np.int64)
        if num_users is None:
            num_users = int(users.max()) + 1 if len(users) else 0
        if num_items is None:
            num_items = int(items.max()) + 1 if len(items) else 0
        return cls(
            users,
            items,
            timestamps,
            tuple(str(u) for u in range(num_users)),
            tuple(str(i) for i in range(num_items)),
        )


@dataclass(frozen=True)
class CatalogStats:
    counts: np.ndarray
    total: int

    @property
    def catalog_size(self) -> int:
        return len(self.counts)

    def q(self) -> np.ndarray:
        return self.counts / self.total


@dataclass(frozen=True)
class SplitDataset:
    train: InteractionLog
    validation: InteractionLog
    test: InteractionLog
    scheme: str
    fraction: float | None = None

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def counts(self) -> dict:
        return {
            "train": len(self.train),
            "validation": len(self.validation),
            "test": len(self.test),
        }


def load_interactions(path: str | os.PathLike) -> InteractionLog:
    """Read a ``user_id,item_id,timestamp`` CSV.

    The header row is optional. Dense indices are assigned in order of
    first appearance. Errors report the 1-based line number in the file.
    """
    users: list[int] = []
    items: list[int] = []
    stamps: list[int] = []
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if line_no == 1 and tuple(c.strip() for c in row) == HEADER:
                continue
            if len(row) != 3:
                raise ParseError(line_no, f"expected 3 fields, got {len(row)}")
            user, item, ts = (c.strip() for c in row)
            if not user or not item:
                raise ParseError(line_no, "empty user or item identifier")
            try:
                t = int(ts)
            except ValueError:
                raise ParseError(line_no, f"timestamp {ts!r} is not an integer") from None
            if t < 0:
                raise ParseError(line_no, f"negative timestamp {t}")
            users.append(user_index.setdefault(user, len(user_index)))
            items.append(item_index.setdefault(item, len(item_index)))
            stamps.append(t)
    if not users:
        raise DataError("no interactions")
    return InteractionLog(
        np.array(users, dtype=np.int64),
        np.array(items, dtype=np.int64),
        np.array(stamps, dtype=np.int64),
        tuple(user_index),
        tuple(item_index),
    )


def write_interactions(log: InteractionLog, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        uid, iid = log.user_ids, log.item_ids
        for u, i, t in zip(log.users.tolist(), log.items.tolist(), log.timestamps.tolist()):
            w.writerow((uid[u], iid[i], t))


def unigram_stats(log: InteractionLog) -> CatalogStats:
    if len(log) == 0:
        raise DataError("no interactions")
    counts = np.bincount(log.items, minlength=log.num_items).astype(np.int64)
    return CatalogStats(counts=counts, total=int(len(log)))


def _time_order(log: InteractionLog) -> np.ndarray:
    # lexsort is stable on the last key; file position breaks ties
    return np.lexsort((np.arange(len(log)), log.timestamps))


def leave_one_out_split(log: InteractionLog) -> SplitDataset:
    """Per user: last event to test, second-to-last to validation.

    Users with fewer than three events keep everything in train. Each
    part preserves file order.
    """
    order = np.lexsort((np.arange(len(log)), log.timestamps, log.users))
    users_sorted = log.users[order]
    is_last = np.ones(len(log), dtype=bool)
    is_last[:-1] = users_sorted[1:] != users_sorted[:-1]
    sizes = np.bincount(log.users, minlength=log.num_users)
    eligible = sizes[users_sorted] >= 3

    test_mask = np.zeros(len(log), dtype=bool)
    valid_mask = np.zeros(len(log), dtype=bool)
    test_pos = order[is_last & eligible]
    second = np.flatnonzero(is_last & eligible) - 1
    test_mask[test_pos] = True
    valid_mask[order[second]] = True
    train_mask = ~(test_mask | valid_mask)
    return SplitDataset(
        train=log.take(np.flatnonzero(train_mask)),
        validation=log.take(np.flatnonzero(valid_mask)),
        test=log.take(np.flatnonzero(test_mask)),
        scheme="leave_one_out",
    )


def temporal_split(log: InteractionLog, fraction: float) -> SplitDataset:
    """Global time split: last ``ceil(fraction*N)`` events are test, the
    preceding block of the same size is validation."""
    if not (0.0 < fraction <= 0.5):
        raise DataError(f"fraction must lie in (0, 0.5], got {fraction}")
    n = len(log)
    k = math.ceil(fraction * n)
    if 2 * k > n:
        raise DataError(f"log of {n} events too small for fraction {fraction}")
    order = _time_order(log)
    # parts listed in time order
    return SplitDataset(
        train=log.take(order[: n - 2 * k]),
        validation=log.take(order[n - 2 * k : n - k]),
        test=log.take(order[n - k :]),
        scheme="temporal",
        fraction=float(fraction),
    )


def make_split(log: InteractionLog, scheme: str, fraction: float | None = None) -> SplitDataset:
    if scheme in ("leave_one_out", "loo"):
        return leave_one_out_split(log)
    if scheme == "temporal":
        if fraction is None:
            raise DataError("temporal split needs a fraction")
        return temporal_split(log, fraction)
    raise DataError(f"unknown split scheme {scheme!r}")


def save_split(split: SplitDataset, directory: str | os.PathLike) -> list[str]:
    """Write train/validation/test CSVs, id maps and a JSON sidecar.

    Returns the written file names (relative to ``directory``).
    """
    os.makedirs(directory, exist_ok=True)
    names = []
    for part in ("train", "validation", "test"):
        name = f"{part}.csv"
        write_interactions(getattr(split, part), os.path.join(directory, name))
        names.append(name)
    ids = {"user_ids": list(split.train.user_ids), "item_ids": list(split.train.item_ids)}
    with open(os.path.join(directory, "ids.json"), "w") as fh:
        json.dump(ids, fh)
        fh.write("\n")
    side = {"scheme": split.scheme, "fraction": split.fraction, "counts": split.counts()}
    with open(os.path.join(directory, "split.json"), "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return names + ["ids.json", "split.json"]


def _read_with_ids(path, user_index, item_index, user_ids, item_ids) -> InteractionLog:
    users, items, stamps = [], [], []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or (line_no == 1 and tuple(row) == HEADER):
                continue
            try:
                users.append(user_index[row[0]])
                items.append(item_index[row[1]])
                stamps.append(int(row[2]))
            except (KeyError, ValueError, IndexError) as exc:
                raise ParseError(line_no, f"bad split row {row!r}: {exc}") from None
    return InteractionLog(
        np.array(users, dtype=np.int64),
        np.array(items, dtype=np.int64),
        np.array(stamps, dtype=np.int64),
        user_ids,
        item_ids,
    )


def load_split(directory: str | os.PathLike) -> SplitDataset:
    with open(os.path.join(directory, "ids.json")) as fh:
        ids = json.load(fh)
    with open(os.path.join(directory, "split.json")) as fh:
        side = json.load(fh)
    user_ids, item_ids = tuple(ids["user_ids"]), tuple(ids["item_ids"])
    uidx = {u: k for k, u in enumerate(user_ids)}
    iidx = {i: k for k, i in enumerate(item_ids)}
    parts = {
        part: _read_with_ids(os.path.join(directory, f"{part}.csv"), uidx, iidx, user_ids, item_ids)
        for part in ("train", "validation", "test")
    }
    return SplitDataset(scheme=side["scheme"], fraction=side.get("fraction"), **parts)


def user_histories(logs: Sequence[InteractionLog], num_users: int) -> list[np.ndarray]:
    """Per-user item sequences from the given logs, ordered by time."""
    users = np.concatenate([lg.users for lg in logs])
    items = np.concatenate([lg.items for lg in logs])
    stamps = np.concatenate([lg.timestamps for lg in logs])
    order = np.lexsort((np.arange(len(users)), stamps, users))
    bounds = np.searchsorted(users[order], np.arange(num_users + 1))
    items_sorted = items[order]
    return [items_sorted[bounds[u] : bounds[u + 1]] for u in range(num_users)]
