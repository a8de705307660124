"""Sampled-softmax losses with and without logQ correction.

Each loss returns its value together with gradient coefficients
``(coeff_pos, coeff_negs)`` such that

    dL/dtheta = coeff_pos * df(u,p)/dtheta + sum_i coeff_negs[i] * df(u,d_i)/dtheta

All softmax-style sums are evaluated max-shifted in log space.

Two different normalizations appear and must not be conflated:

* the loss denominators of :func:`logq_original_loss` and
  :func:`logq_improved_loss` are plain sums over the negatives
  (self-normalized weights), while
* :func:`estimate_p_pos` averages the negatives (a ``1/n`` factor,
  ``-log n`` in log space) because it estimates a catalog-wide sum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

P_HAT_FLOOR = 1e-12


class CorrectionMode(str, enum.Enum):
    NONE = "none"
    STANDARD_LOGQ = "standard_logq"
    STANDARD_LOGQ_NO_POS_CORRECTION = "standard_logq_no_pos_correction"
    ORIGINAL_LOGQ = "original_logq"
    IMPROVED = "improved"

    @classmethod
    def parse(cls, value) -> "CorrectionMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown correction mode {value!r} (expected one of {names})") from None


@dataclass
class LossInput:
    score_pos: float
    neg_scores: np.ndarray
    neg_log_q: np.ndarray | None = None
    pos_log_q: float | None = None

    def __post_init__(self):
        self.score_pos = float(self.score_pos)
        self.neg_scores = np.asarray(self.neg_scores, dtype=np.float64).ravel()
        if self.neg_log_q is None:
            self.neg_log_q = np.zeros_like(self.neg_scores)
        self.neg_log_q = np.asarray(self.neg_log_q, dtype=np.float64).ravel()
        if self.neg_log_q.shape != self.neg_scores.shape:
            raise ValueError("neg_scores and neg_log_q differ in length")

    @property
    def n(self) -> int:
        return len(self.neg_scores)

    def check(self) -> None:
        if self.n == 0:
            raise ValueError("sampled loss needs at least one negative")
        if not (np.isfinite(self.score_pos) and np.all(np.isfinite(self.neg_scores))):
            raise FloatingPointError("non-finite score in loss input")
        if not np.all(np.isfinite(self.neg_log_q)):
            raise FloatingPointError("non-finite log_q in loss input")


@dataclass
class LossOutput:
    value: float
    coeff_pos: float
    coeff_negs: np.ndarray
    aux: dict = field(default_factory=dict)


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    return float(m + np.log(np.sum(np.exp(x - m))))


def _nll_vs_rest(pos_logit: float, rest: np.ndarray) -> float:
    # -log softmax of the positive, as log(1 + sum e^{rest - pos}); avoids
    # the cancellation in lse(all) - pos when the positive dominates
    if len(rest) == 0:
        return 0.0
    return float(np.logaddexp(0.0, _logsumexp(rest - pos_logit)))


def _softmax(x: np.ndarray) -> tuple[np.ndarray, float]:
    lse = _logsumexp(x)
    return np.exp(x - lse), lse


def full_softmax_loss(scores, p: int) -> LossOutput:
    """Exact softmax NLL over the whole catalog.

    ``coeff_negs`` lists ``P(d|u)`` for every ``d != p`` in index order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    probs, _ = _softmax(scores)
    others = np.delete(probs, p)
    return LossOutput(
        value=_nll_vs_rest(scores[p], np.delete(scores, p)),
        coeff_pos=-float(others.sum()),
        coeff_negs=others,
        aux={"p_pos": float(probs[p])},
    )


def sampled_softmax_loss(inp: LossInput) -> LossOutput:
    """Uncorrected sampled softmax; ``log_q`` values are ignored."""
    inp.check()
    logits = np.concatenate([[inp.score_pos], inp.neg_scores])
    probs, _ = _softmax(logits)
    return LossOutput(
        value=_nll_vs_rest(inp.score_pos, inp.neg_scores),
        coeff_pos=-float(probs[1:].sum()),
        coeff_negs=probs[1:],
    )


def logq_standard_loss(inp: LossInput, correct_positive: bool = True) -> LossOutput:
    """Standard logQ-corrected softmax with the positive in the denominator.

    With ``correct_positive`` the positive logit is shifted by its own
    ``-log Q(p)`` in numerator and denominator; without it the positive
    enters uncorrected.
    """
    inp.check()
    if correct_positive:
        if inp.pos_log_q is None or not np.isfinite(inp.pos_log_q):
            raise ValueError("positive log_q required when correcting the positive")
        pos_logit = inp.score_pos - inp.pos_log_q
    else:
        pos_logit = inp.score_pos
    logits = np.concatenate([[pos_logit], inp.neg_scores - inp.neg_log_q])
    probs, _ = _softmax(logits)
    return LossOutput(
        value=_nll_vs_rest(pos_logit, inp.neg_scores - inp.neg_log_q),
        coeff_pos=-float(probs[1:].sum()),
        coeff_negs=probs[1:],
        aux={"v_up": float(probs[0])},
    )


def logq_original_loss(inp: LossInput) -> LossOutput:
    inp.check()
    weights, lse = _softmax(inp.neg_scores - inp.neg_log_q)
    return LossOutput(value=lse - inp.score_pos, coeff_pos=-1.0, coeff_negs=weights)


def _log_p_hat(score_pos, corrected_lse, n):
    # log of e^{s_p} / (e^{s_p} + (1/n) sum e^{s_i - log q_i})
    return score_pos - np.logaddexp(score_pos, corrected_lse - np.log(n))


def estimate_p_pos(inp: LossInput) -> float:
    """Importance-sampling estimate of the positive's full-softmax mass.

    Negatives must come from a proposal that excludes the positive and
    carry that proposal's log mass. Clamped to ``[1e-12, 1]``.
    """
    inp.check()
    lse = _logsumexp(inp.neg_scores - inp.neg_log_q)
    p_hat = float(np.exp(_log_p_hat(inp.score_pos, lse, inp.n)))
    return min(max(p_hat, P_HAT_FLOOR), 1.0)


def logq_improved_loss(inp: LossInput) -> LossOutput:
    """Confidence-weighted loss without the positive in the denominator.

    The weight ``w = 1 - estimate_p_pos(inp)`` is a constant with respect
    to the scores (stop-gradient); the same negatives serve both the
    weight and the loss.
    """
    p_hat = estimate_p_pos(inp)
    w = 1.0 - p_hat
    base = logq_original_loss(inp)
    return LossOutput(
        value=w * base.value,
        coeff_pos=-w,
        coeff_negs=w * base.coeff_negs,
        aux={"w_up": w, "p_hat": p_hat},
    )


def compute_loss(mode, inp: LossInput) -> LossOutput:
    mode = CorrectionMode.parse(mode)
    if mode is CorrectionMode.NONE:
        return sampled_softmax_loss(inp)
    if mode is CorrectionMode.STANDARD_LOGQ:
        return logq_standard_loss(inp, correct_positive=True)
    if mode is CorrectionMode.STANDARD_LOGQ_NO_POS_CORRECTION:
        return logq_standard_loss(inp, correct_positive=False)
    if mode is CorrectionMode.ORIGINAL_LOGQ:
        return logq_original_loss(inp)
    return logq_improved_loss(inp)


@dataclass
class BatchLoss:
    values: np.ndarray
    coeff_pos: np.ndarray
    coeff_negs: np.ndarray
    v_up: np.ndarray | None = None
    w_up: np.ndarray | None = None


def batch_loss(mode, pos_scores, neg_scores, neg_log_q, pos_log_q=None) -> BatchLoss:
    """Row-wise version of :func:`compute_loss` for ``B`` examples with
    ``n`` negatives each (``neg_scores`` and ``neg_log_q`` are ``B x n``)."""
    mode = CorrectionMode.parse(mode)
    s_p = np.asarray(pos_scores, dtype=np.float64)
    s_n = np.asarray(neg_scores, dtype=np.float64)
    n = s_n.shape[1]
    if n == 0:
        raise ValueError("sampled loss needs at least one negative")
    corrected = s_n - np.asarray(neg_log_q, dtype=np.float64)

    if mode in (CorrectionMode.ORIGINAL_LOGQ, CorrectionMode.IMPROVED):
        lse, weights = _kernels.row_softmax(corrected)
        values = lse - s_p
        if mode is CorrectionMode.ORIGINAL_LOGQ:
            return BatchLoss(values, -np.ones_like(s_p), weights)
        p_hat = np.clip(np.exp(_log_p_hat(s_p, lse, n)), P_HAT_FLOOR, 1.0)
        w = 1.0 - p_hat
        return BatchLoss(w * values, -w, w[:, None] * weights, w_up=w)

    if mode is CorrectionMode.NONE:
        pos_logit = s_p
        tail = s_n
    elif mode is CorrectionMode.STANDARD_LOGQ:
        if pos_log_q is None:
            raise ValueError("positive log_q required when correcting the positive")
        pos_logit = s_p - np.asarray(pos_log_q, dtype=np.float64)
        tail = corrected
    else:
        pos_logit = s_p
        tail = corrected
    lse, probs = _kernels.row_softmax(np.concatenate([pos_logit[:, None], tail], axis=1))
    negs = probs[:, 1:]
    neg_mass = negs.sum(axis=1)
    p_pos = probs[:, 0]
    # when the positive dominates, lse - pos_logit cancels; log1p does not
    big = p_pos > 0.5
    values = lse - pos_logit
    values[big] = np.log1p(neg_mass[big] / p_pos[big])
    out = BatchLoss(values, -neg_mass, negs)
    if mode is not CorrectionMode.NONE:
        out.v_up = probs[:, 0]
    return out
