"""Mini-batch trainer: sampler -> loss coefficients -> sparse optimizer.

A batch step scores every example against the union of its positives
and sampled negatives, so scores and gradients reduce to two small
matrix products per batch. Gradients are summed over the examples of a
batch, not averaged.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import SplitDataset, unigram_stats
from .evaluation import DEFAULT_KS, evaluate
from .losses import CorrectionMode, batch_loss
from .model import TOWER_MODES, GradBuffer, TwoTowerModel
from .sampling import (
    MNS_LOGQ_MODES,
    log_q_unigram,
    sample_in_batch_batch,
    sample_mixed_batch,
    sample_uniform_batch,
)
from .sketch import CountMinSketch

log = logging.getLogger(__name__)

SAMPLERS = ("uniform", "in_batch", "mixed")
OPTIMIZERS = ("sgd", "adam")
Q_SOURCES = ("exact", "sketch")


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    loss_mode: str = "improved"
    sampler: str = "in_batch"
    n_negatives: int = 256
    n_uniform: int = 128
    n_batch: int = 128
    mns_logq_mode: str = "unigram-for-all"
    batch_size: int = 128
    epochs: int = 20
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    q_source: str = "exact"
    sketch_width: int = 2048
    sketch_depth: int = 5
    dim: int = 32
    tower_mode: str = "id"
    max_history: int = 50
    patience: int = 5
    eval_ks: tuple = DEFAULT_KS
    mask_seen: bool = True

    def __post_init__(self):
        self.eval_ks = tuple(int(k) for k in self.eval_ks)
        try:
            CorrectionMode.parse(self.loss_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        checks = [
            (self.sampler in SAMPLERS, f"sampler must be one of {SAMPLERS}"),
            (self.optimizer in OPTIMIZERS, f"optimizer must be one of {OPTIMIZERS}"),
            (self.q_source in Q_SOURCES, f"q_source must be one of {Q_SOURCES}"),
            (self.tower_mode in TOWER_MODES, f"tower_mode must be one of {TOWER_MODES}"),
            (self.mns_logq_mode in MNS_LOGQ_MODES, f"mns_logq_mode must be one of {MNS_LOGQ_MODES}"),
            (self.n_negatives >= 1, "n_negatives must be >= 1"),
            (self.n_uniform >= 0 and self.n_batch >= 0, "n_uniform and n_batch must be >= 0"),
            (self.sampler != "mixed" or self.n_uniform + self.n_batch >= 1,
             "mixed sampler needs n_uniform + n_batch >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.dim >= 1, "dim must be >= 1"),
            (self.max_history >= 1, "max_history must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.sketch_width >= 1 and self.sketch_depth >= 1, "sketch dimensions must be >= 1"),
            (len(self.eval_ks) >= 1 and min(self.eval_ks) >= 1, "eval_ks must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def negatives_per_example(self) -> int:
        return self.n_uniform + self.n_batch if self.sampler == "mixed" else self.n_negatives

    @property
    def select_metric(self) -> str:
        return f"recall@{20 if 20 in self.eval_ks else self.eval_ks[0]}"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eval_ks"] = list(self.eval_ks)
        return d


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    mean_w_up: float | None
    valid_metrics: dict = field(default_factory=dict)
    skipped_examples: int = 0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


class OptimizerState:
    """Per-table moments and per-row step counts for sparse updates."""

    def __init__(self, model: TwoTowerModel, kind: str = "adam", beta1=0.9, beta2=0.999, eps=1e-8):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.shapes = {"user": model.user_table.shape, "item": model.item_table.shape}
        self.m, self.v, self.steps = {}, {}, {}
        if kind == "adam":
            for name, shape in self.shapes.items():
                self.m[name] = np.zeros(shape)
                self.v[name] = np.zeros(shape)
                self.steps[name] = np.zeros(shape[0], dtype=np.int64)


def step_optimizer(model: TwoTowerModel, state: OptimizerState, grads: GradBuffer, lr: float) -> None:
    """Update only the rows present in ``grads``.

    Adam keeps a step count per row, so bias correction reflects how
    often that row has been touched.
    """
    for name in ("user", "item"):
        table = model.table(name)
        if table.shape != state.shapes[name] or grads.dim != table.shape[1]:
            raise ValueError(f"optimizer state does not match the {name} table")
        rows, g = grads.rows(name)
        if len(rows) == 0:
            continue
        if state.kind == "sgd":
            table[rows] -= lr * g
            continue
        b1, b2 = state.beta1, state.beta2
        m, v, steps = state.m[name], state.v[name], state.steps[name]
        steps[rows] += 1
        t = steps[rows][:, None].astype(np.float64)
        m[rows] = b1 * m[rows] + (1 - b1) * g
        v[rows] = b2 * v[rows] + (1 - b2) * g * g
        m_hat = m[rows] / (1 - b1**t)
        v_hat = v[rows] / (1 - b2**t)
        table[rows] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _train_histories(train, max_history):
    """Padded (-1) matrix of each train event's preceding train items."""
    n = len(train)
    order = np.lexsort((np.arange(n), train.timestamps, train.users))
    users_sorted = train.users[order]
    first = np.searchsorted(users_sorted, users_sorted, side="left")
    pos = np.arange(n)
    offs = np.arange(-max_history, 0)
    src = pos[:, None] + offs[None, :]
    valid = src >= first[:, None]
    hist_sorted = np.where(valid, train.items[order][np.maximum(src, 0)], -1)
    hist = np.empty_like(hist_sorted)
    hist[order] = hist_sorted
    return hist


class _LogQ:
    """Log proposal masses, exact or from a count-min sketch."""

    def __init__(self, config, stats, sketch_rng):
        self.config = config
        self.stats = stats
        self.sketch = None
        if config.q_source == "sketch":
            seed = int(sketch_rng.integers(0, 2**31))
            self.sketch = CountMinSketch(config.sketch_width, config.sketch_depth, seed=seed)

    def observe(self, items):
        if self.sketch is not None:
            self.sketch.update_many(items)

    def sketch_log_q(self, items):
        est = np.maximum(self.sketch.estimate_many(np.ravel(items)), 1)
        return (np.log(est) - np.log(self.sketch.total)).reshape(np.shape(items))

    def positive(self, positives, catalog_size):
        if self.config.sampler == "uniform":
            return np.full(len(positives), -np.log(catalog_size))
        if self.sketch is not None:
            return self.sketch_log_q(positives)
        return log_q_unigram(self.stats, positives)

    def sample(self, pool, positives, catalog_size, rng):
        c = self.config
        if c.sampler == "uniform":
            return sample_uniform_batch(catalog_size, positives, c.n_negatives, rng)
        if c.sampler == "in_batch":
            items, log_q = sample_in_batch_batch(pool, self.stats, positives, c.n_negatives, rng)
            if self.sketch is not None:
                log_q = self.sketch_log_q(items)
            return items, log_q
        items, log_q = sample_mixed_batch(pool, self.stats, catalog_size, positives,
                                          c.n_uniform, c.n_batch, rng, c.mns_logq_mode)
        if self.sketch is not None:
            # per-source keeps the exact uniform mass on the uniform block
            lo = c.n_uniform if c.mns_logq_mode == "per-source" else 0
            log_q[:, lo:] = self.sketch_log_q(items[:, lo:])
        return items, log_q


def batch_step(model, users, positives, neg_items, neg_log_q, pos_log_q, mode, buf, histories=None):
    """Loss and gradients for one batch; gradients go into ``buf``.

    Returns the :class:`~logq.losses.BatchLoss`.
    """
    num_items = model.num_items
    present = np.zeros(num_items, dtype=bool)
    present[positives] = True
    present[neg_items] = True
    cand = np.flatnonzero(present)
    lookup = np.empty(num_items, dtype=np.int64)
    lookup[cand] = np.arange(len(cand))
    loc_pos, loc_neg = lookup[positives], lookup[neg_items]
    b = len(positives)

    if model.tower_mode == "id":
        g_u = model.user_table[users]
    else:
        mask = histories >= 0
        cnt = mask.sum(axis=1)
        emb = model.item_table[np.where(mask, histories, 0)] * mask[..., None]
        g_u = emb.sum(axis=1) / np.maximum(cnt, 1)[:, None]
    h_c = model.item_table[cand]
    scores = g_u @ h_c.T
    rows = np.arange(b)
    out = batch_loss(mode, scores[rows, loc_pos], scores[rows[:, None], loc_neg], neg_log_q, pos_log_q)
    if not (np.all(np.isfinite(out.values)) and np.all(np.isfinite(out.coeff_negs))):
        raise TrainingDiverged("non-finite loss")

    coeff = _kernels.dense_scatter(b, len(cand), np.broadcast_to(rows[:, None], loc_neg.shape),
                                   loc_neg, out.coeff_negs)
    coeff[rows, loc_pos] += out.coeff_pos
    buf.add_rows("item", cand, coeff.T @ g_u)
    user_grad = coeff @ h_c
    if model.tower_mode == "id":
        buf.add_rows("user", users, user_grad)
    else:
        r, c = np.nonzero(mask)
        share = user_grad[r] / cnt[r][:, None]
        buf.add_rows("item", histories[r, c], share)
    return out


def train(split: SplitDataset, config: TrainConfig, on_epoch=None):
    """Train a two-tower model; returns ``(best_model, reports)``.

    The returned model is the one with the best validation
    ``recall@20`` (or the final model without a validation set).
    Training stops early after ``patience`` epochs without improvement.
    """
    if len(split.train) == 0:
        raise ValueError("empty training set")
    mode = CorrectionMode.parse(config.loss_mode)
    seq = np.random.SeedSequence(config.seed)
    init_rng, shuffle_rng, sample_rng, sketch_rng = (np.random.default_rng(s) for s in seq.spawn(4))

    model = TwoTowerModel.init(split.num_users, split.num_items, config.dim, init_rng, config.tower_mode)
    reports: list[EpochReport] = []
    if config.epochs == 0:
        return model, reports

    train_log = split.train
    stats = unigram_stats(train_log)
    logq = _LogQ(config, stats, sketch_rng)
    logq.observe(train_log.items)
    hist_all = _train_histories(train_log, config.max_history) if config.tower_mode != "id" else None
    opt = OptimizerState(model, config.optimizer, config.beta1, config.beta2, config.adam_eps)
    buf = GradBuffer(config.dim)
    catalog = split.num_items
    needs_pool = config.sampler == "in_batch" or (config.sampler == "mixed" and config.n_batch > 0)

    best_model, best_score, stale = model.copy(), -np.inf, 0
    n_events = len(train_log)
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n_events)
        loss_sum, w_sum, w_n, seen, skipped = 0.0, 0.0, 0, 0, 0
        for bi, start in enumerate(range(0, n_events, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            users, positives = train_log.users[idx], train_log.items[idx]
            pool = np.unique(positives)
            if needs_pool and len(pool) == 1:
                skipped += len(idx)
                continue
            try:
                neg_items, neg_log_q = logq.sample(pool, positives, catalog, sample_rng)
                out = batch_step(
                    model, users, positives, neg_items, neg_log_q,
                    logq.positive(positives, catalog), mode, buf,
                    hist_all[idx] if hist_all is not None else None,
                )
            except (TrainingDiverged, FloatingPointError) as exc:
                raise TrainingDiverged(
                    f"{exc} at epoch {epoch} batch {bi} (seed {config.seed})"
                ) from None
            step_optimizer(model, opt, buf, config.learning_rate)
            buf.clear()
            loss_sum += float(out.values.sum())
            seen += len(idx)
            if out.w_up is not None:
                w_sum += float(out.w_up.sum())
                w_n += len(idx)

        valid = {}
        if len(split.validation):
            valid = evaluate(model, split, config.eval_ks, part="validation",
                             mask_seen=config.mask_seen, max_history=config.max_history).metrics
        rep = EpochReport(
            epoch=epoch,
            mean_loss=loss_sum / max(seen, 1),
            mean_w_up=(w_sum / w_n) if w_n else None,
            valid_metrics=valid,
            skipped_examples=skipped,
        )
        reports.append(rep)
        log.info("epoch %d loss %.4f valid %s", epoch, rep.mean_loss, valid)
        if on_epoch is not None:
            on_epoch(rep)

        if not valid:
            best_model = model
            continue
        score = valid[config.select_metric]
        if score > best_score:
            best_score, best_model, stale = score, model.copy(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best_model, reports
