"""Ranking metrics (AUROC, average precision) and the Wilcoxon signed-rank test.

Tie policy is explicit everywhere: AUROC counts ties as one half, average
precision groups tied scores at a single threshold, and the signed-rank test
uses midranks with exact enumeration for small n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MetricUndefinedError(ValueError):
    """Raised when a metric's preconditions fail (e.g. single-class labels)."""


@dataclass
class MetricReport:
    auroc: float
    auprc: float
    n_pos: int
    n_neg: int
    per_type: dict[str, dict] = field(default_factory=dict)


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return scores, labels.astype(np.int64)


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,

    ties counted one half. Pairwise enumeration up to N=10^4, rank-sum
    with midranks beyond (the two are algebraically identical).
    """
    scores, labels = _check_binary(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricUndefinedError("auroc needs at least one positive and one negative")
    if len(scores) <= 10_000:
        total = 0.0
        # chunk the positives so the comparison matrix stays small
        for start in range(0, len(pos), 256):
            p = pos[start : start + 256, None]
            total += (p > neg[None, :]).sum() + 0.5 * (p == neg[None, :]).sum()
        return float(total / (len(pos) * len(neg)))
    order = np.argsort(scores, kind="mergesort")
    ranks = _midranks(scores[order])[np.argsort(order, kind="mergesort")]
    rank_sum = ranks[labels == 1].sum()
    n_pos = len(pos)
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * len(neg)))


def _midranks(sorted_vals: np.ndarray) -> np.ndarray:
    n = len(sorted_vals)
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[i : j + 1] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auprc(scores, labels) -> float:
    """Average precision with step-wise interpolation; tied scores are

    evaluated together at one threshold.
    """
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise MetricUndefinedError("auprc needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j + 1 < n and s[j + 1] == s[i]:
            j += 1
        group_tp = int(y[i : j + 1].sum())
        tp += group_tp
        seen = j + 1
        if group_tp:
            ap += (tp / seen) * (group_tp / n_pos)
        i = j + 1
    return float(ap)


def wilcoxon_signed_rank(a, b) -> tuple[float, float]:
    """Two-sided paired signed-rank test.

    Zero differences are dropped; absolute differences get midranks. Exact
    enumeration of all 2^n sign assignments for n <= 12, normal
    approximation with the tie-corrected variance sum(r_i^2)/4 beyond.
    Returns (statistic, p_value) with statistic = min(W+, W-).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired inputs must be equal-length 1-D arrays")
    d = a - b
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        raise MetricUndefinedError("all differences are zero")
    if n < 5:
        raise MetricUndefinedError(f"need at least 5 nonzero differences, got {n}")
    order = np.argsort(np.abs(d), kind="mergesort")
    ranks = _midranks(np.abs(d)[order])[np.argsort(order, kind="mergesort")]
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)

    if n <= 12:
        # midranks are multiples of 1/2: double them and count subset sums
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        total = int(doubled.sum())
        counts = np.zeros(total + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in doubled:
            counts[r:] += counts[: total + 1 - r].copy()
        w2 = 2.0 * w_plus
        le = counts[: int(math.floor(w2 + 1e-9)) + 1].sum()
        ge = counts[int(math.ceil(w2 - 1e-9)) :].sum()
        p = 2.0 * min(le, ge) / (2.0**n)
    else:
        mean = n * (n + 1) / 4.0
        sigma = math.sqrt(float((ranks**2).sum()) / 4.0)
        z = (w_plus - mean) / sigma
        p = math.erfc(abs(z) / math.sqrt(2.0))
    return stat, float(min(p, 1.0))


def evaluate(scores, labels) -> MetricReport:
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    return MetricReport(auroc(scores, labels), auprc(scores, labels), n_pos, n_neg)
