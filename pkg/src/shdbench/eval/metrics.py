"""Per-label discrimination and fixed-threshold metrics.

Undefined values (a single-class label vector) are returned as NaN; the
report layer turns them into explicit exclusions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def _pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length ({s.size} vs {y.size})")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return s, y.astype(bool)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with ties counted as one half; NaN for single-class labels."""
    s, y = _pair(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(s)  # midranks
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision over the descending-score ranking.

    Ties are broken by original position (stable sort), so the value is
    reproducible bit for bit. NaN when there are no positives.
    """
    s, y = _pair(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, y.size + 1)
    return float(np.sum(tp[hits] / ranks[hits]) / n_pos)


@dataclass(frozen=True)
class ThresholdMetrics:
    acc: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


def threshold_metrics(scores, labels, tau: float = 0.5) -> ThresholdMetrics:
    """Confusion counts with positive prediction at ``score >= tau``."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    s, y = _pair(scores, labels)
    pred = s >= tau
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    acc = (tp + tn) / y.size if y.size else math.nan
    return ThresholdMetrics(acc=float(acc), f1=float(f1), tp=tp, fp=fp, fn=fn, tn=tn)


def macro_auroc(probs, labels) -> float:
    """Mean AUROC over the labels where it is defined (NaN if none are)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    values = [auroc(probs[:, j], labels[:, j]) for j in range(labels.shape[1])]
    defined = [v for v in values if not math.isnan(v)]
    return float(np.mean(defined)) if defined else math.nan
