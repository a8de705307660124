"""Brute-force references and estimator audits on small catalogs.

Bias is measured on item-space coefficient vectors: for a dot-product
model the parameter gradient is a fixed linear image of these vectors,
so a coefficient-space bias of zero implies an unbiased gradient.

Which proposal each estimator samples from follows its derivation:
``none``, ``standard_logq``, ``standard_logq_no_pos_correction`` and
``original_logq`` draw negatives from the proposal Q as given (the
positive may be drawn) and use ``log Q``; ``improved`` draws from Q'
(Q with the positive removed and renormalized) and uses ``log Q'``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .losses import CorrectionMode, LossInput, batch_loss, compute_loss

ENUMERATION_LIMIT = 10**6
CHUNK = 20_000


@dataclass
class BiasReport:
    estimator: str
    n_negatives: int
    proposal: str
    bias_l2: float
    variance_trace: float
    num_resamples: int
    standard_error: float
    method: str = "monte_carlo"

    def as_row(self) -> dict:
        return asdict(self)


@dataclass
class FullSoftmaxCoeffs:
    coeffs: np.ndarray
    p_pos: float
    conditional: np.ndarray  # P(d | u, d != p), zero at p

    @property
    def scale(self) -> float:
        return 1.0 - self.p_pos


def full_softmax_coeffs_oracle(scores, p: int) -> FullSoftmaxCoeffs:
    """Exact gradient coefficients of the full softmax NLL, plus the
    factored form ``(1 - P(p|u), P(d|u, d != p))``."""
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.max()
    e = np.exp(scores - m)
    probs = e / e.sum()
    coeffs = probs.copy()
    coeffs[p] = -(probs.sum() - probs[p])
    e_rest = e.copy()
    e_rest[p] = 0.0
    rest_total = e_rest.sum()
    conditional = e_rest / rest_total if rest_total > 0 else e_rest
    return FullSoftmaxCoeffs(coeffs, float(probs[p]), conditional)


def zipf_proposal(catalog_size: int, exponent: float) -> np.ndarray:
    q = 1.0 / np.arange(1, catalog_size + 1, dtype=np.float64) ** exponent
    return q / q.sum()


def parse_proposal(name: str, catalog_size: int) -> np.ndarray:
    """``uniform`` or ``zipf:<exponent>`` (item 0 most popular)."""
    if name == "uniform":
        return np.full(catalog_size, 1.0 / catalog_size)
    kind, _, arg = name.partition(":")
    if kind == "zipf":
        return zipf_proposal(catalog_size, float(arg or 1.0))
    raise ValueError(f"unknown proposal {name!r}")


def popularity_aligned_scores(proposal, rng, noise: float = 0.5) -> np.ndarray:
    """Scores ``log Q(d) + N(0, noise^2)``: a model whose preferences
    track item popularity, as with in-batch negatives."""
    proposal = np.asarray(proposal, dtype=np.float64)
    return np.log(proposal) + rng.normal(0.0, noise, size=len(proposal))


def _mode_proposal(mode: CorrectionMode, proposal: np.ndarray, p: int) -> np.ndarray:
    if mode is CorrectionMode.IMPROVED:
        q = proposal.copy()
        q[p] = 0.0
        total = q.sum()
        if total <= 0:
            raise ValueError("proposal has no mass outside the positive")
        return q / total
    return proposal


def _estimates(mode, scores, p, proposal, log_proposal, idx):
    """Item-space coefficient vectors for each row of sampled indices."""
    rows = idx.shape[0]
    s_neg = scores[idx]
    s_pos = np.full(rows, scores[p])
    lq_pos = np.full(rows, log_proposal[p]) if proposal[p] > 0 else None
    out = batch_loss(mode, s_pos, s_neg, log_proposal[idx], lq_pos)
    d = len(scores)
    row_ids = np.broadcast_to(np.arange(rows)[:, None], idx.shape)
    g = _kernels.dense_scatter(rows, d, row_ids, idx, out.coeff_negs)
    g[:, p] += out.coeff_pos
    return g


def _enumerate_tuples(support, n, start, stop):
    codes = np.arange(start, stop, dtype=np.int64)
    digits = (codes[:, None] // (len(support) ** np.arange(n, dtype=np.int64))) % len(support)
    return support[digits]


def audit_estimator(scores, p, proposal, mode, n, resamples, rng, proposal_name="custom",
                    enumerate_limit=ENUMERATION_LIMIT) -> BiasReport:
    """Bias and variance of a sampled estimator's coefficient vector.

    Uses exact enumeration over ordered sample tuples when the mode's
    support size to the power ``n`` is at most ``enumerate_limit``, and
    ``resamples`` Monte-Carlo draws otherwise.
    """
    mode = CorrectionMode.parse(mode)
    scores = np.asarray(scores, dtype=np.float64)
    proposal = np.asarray(proposal, dtype=np.float64)
    if n < 1 or resamples < 1:
        raise ValueError("n and resamples must be positive")
    if proposal.shape != scores.shape or np.any(proposal < 0) or proposal.sum() <= 0:
        raise ValueError("proposal must be a non-negative vector with positive mass")
    proposal = proposal / proposal.sum()
    if mode is CorrectionMode.STANDARD_LOGQ and proposal[p] <= 0:
        raise ValueError("standard_logq needs proposal mass on the positive")
    q = _mode_proposal(mode, proposal, p)
    with np.errstate(divide="ignore"):
        log_q = np.log(q)
    target = full_softmax_coeffs_oracle(scores, p).coeffs
    d = len(scores)
    support = np.flatnonzero(q > 0)

    s1 = np.zeros(d)
    s2 = np.zeros((d, d))
    if len(support) ** n <= enumerate_limit:
        method = "exhaustive"
        total = len(support) ** n
        count = total
        for start in range(0, total, CHUNK):
            idx = _enumerate_tuples(support, n, start, min(start + CHUNK, total))
            prob = np.exp(log_q[idx].sum(axis=1))
            g = _estimates(mode, scores, p, q, log_q, idx)
            s1 += prob @ g
            s2 += (g * prob[:, None]).T @ g
        mean = s1
        cov = s2 - np.outer(mean, mean)
        weight_sum = 1.0
    else:
        method = "monte_carlo"
        count = resamples
        cdf = np.cumsum(q)
        cdf /= cdf[-1]
        for start in range(0, resamples, CHUNK):
            rows = min(CHUNK, resamples - start)
            idx = np.searchsorted(cdf, rng.random((rows, n)), side="right")
            idx = np.minimum(idx, d - 1)
            g = _estimates(mode, scores, p, q, log_q, idx)
            s1 += g.sum(axis=0)
            s2 += g.T @ g
        mean = s1 / count
        cov = (s2 - count * np.outer(mean, mean)) / max(count - 1, 1)
        weight_sum = float(count)

    bias = mean - target
    bias_l2 = float(np.linalg.norm(bias))
    var_trace = float(max(np.trace(cov), 0.0))
    if method == "exhaustive":
        se = 0.0
    elif bias_l2 > 0:
        # delta method: sd of the projection onto the bias direction
        se = math.sqrt(max(bias @ cov @ bias, 0.0) / weight_sum) / bias_l2
    else:
        se = math.sqrt(var_trace / weight_sum)
    return BiasReport(
        estimator=mode.value,
        n_negatives=int(n),
        proposal=proposal_name,
        bias_l2=bias_l2,
        variance_trace=var_trace,
        num_resamples=int(count),
        standard_error=float(se),
        method=method,
    )


def _row_lse(x):
    m = x.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=1, keepdims=True)))[:, 0]


def _values(mode, s_pos, s_neg, log_q, pos_log_q, weight):
    """Loss values for rows of perturbed scores, written directly from
    the loss definitions (no coefficient code involved)."""
    if mode is CorrectionMode.NONE:
        return np.logaddexp(0.0, _row_lse(s_neg - s_pos[:, None]))
    if mode is CorrectionMode.STANDARD_LOGQ:
        return np.logaddexp(0.0, _row_lse(s_neg - log_q - (s_pos - pos_log_q)[:, None]))
    if mode is CorrectionMode.STANDARD_LOGQ_NO_POS_CORRECTION:
        return np.logaddexp(0.0, _row_lse(s_neg - log_q - s_pos[:, None]))
    original = _row_lse(s_neg - log_q) - s_pos
    return original if mode is CorrectionMode.ORIGINAL_LOGQ else weight * original


def finite_diff_check(mode, inp: LossInput, eps: float = 1e-5) -> float:
    """Max error between central differences of the loss value and the
    returned coefficients, relative to the largest coefficient magnitude.

    The improved loss is differentiated with its weight frozen at the
    unperturbed value.
    """
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-8, 1e-4]")
    mode = CorrectionMode.parse(mode)
    out = compute_loss(mode, inp)
    analytic = np.concatenate([[out.coeff_pos], out.coeff_negs])
    k = len(analytic)
    # row j of `up`/`down` perturbs score j (0 = positive) by +-eps
    base = np.concatenate([[inp.score_pos], inp.neg_scores])
    step = np.eye(k) * eps
    up, down = base + step, base - step
    both = np.vstack([up, down])
    vals = _values(mode, both[:, 0], both[:, 1:], inp.neg_log_q,
                   inp.pos_log_q if inp.pos_log_q is not None else np.nan,
                   out.aux.get("w_up"))
    numeric = (vals[:k] - vals[k:]) / (2 * eps)
    if not np.all(np.isfinite(numeric)):
        raise FloatingPointError("non-finite finite-difference gradient")
    scale = max(np.max(np.abs(analytic)), np.finfo(float).tiny)
    return float(np.max(np.abs(numeric - analytic)) / scale)
