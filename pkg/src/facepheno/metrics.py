"""Ranking and threshold metrics shared by training and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def auroc(y_true, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic.

    Tied scores contribute half a concordance through average ranks.
    Returns NaN when the truth is single-class (undefined).
    """
    y = np.asarray(y_true, dtype=np.float64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise DataError("auroc inputs must align")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("auroc truth must be binary 0/1")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = float(ranks[y == 1.0].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_points(y_true, scores) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) arrays sweeping the decision threshold from high to low."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.array([0.0, 1.0]), np.array([0.0, 1.0]) * math.nan
    order = np.argsort(-s, kind="stable")
    ys = y[order]
    ss = s[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(1.0 - ys)
    # keep the last point of each tied-score run
    last = np.r_[ss[1:] != ss[:-1], True]
    fpr = np.r_[0.0, fp[last] / n_neg]
    tpr = np.r_[0.0, tp[last] / n_pos]
    return fpr, tpr


@dataclass(slots=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    degenerate: tuple[str, ...] = field(default_factory=tuple)


def classification_metrics(y_true, scores, threshold: float = 0.5) -> ClassificationMetrics:
    """Confusion metrics at a fixed probability threshold (>= is positive).

    Zero-denominator metrics are reported as 0.0 and listed in
    ``degenerate`` instead of raising.
    """
    y = np.asarray(y_true, dtype=np.float64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise DataError("metric inputs must align")
    pred = s >= threshold
    truth = y == 1.0
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    degenerate = []

    def _ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    precision = _ratio(tp, tp + fp, "precision")
    recall = _ratio(tp, tp + fn, "recall")
    f1 = _ratio(2 * precision * recall, precision + recall, "f1")
    accuracy = _ratio(tp + tn, tp + fp + fn + tn, "accuracy")
    return ClassificationMetrics(
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        tp=tp, fp=fp, fn=fn, tn=tn, degenerate=tuple(degenerate))


def mean_absolute_error(y_true, y_pred) -> float:
    y = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise DataError("metric inputs must align")
    if len(y) == 0:
        return math.nan
    return float(np.mean(np.abs(y - p)))
