"""Evaluation harness: thresholded precision/recall/F1, threshold-free
PR-AUC and ROC-AUC, and the moving-average-smoothing baseline scorer.

Predictions are always `score > threshold`. Zero-denominator precision
or recall is reported as 0, as is F1 when both are 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import LabeledSeries
from .ensemble import ScoreSeries
from .errors import DataError


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    pr_auc: float
    roc_auc: float
    threshold: float
    threshold_rule: str        # "best_f1" or "top_k"
    k_percent: float | None = None

    COLUMNS = ("precision", "recall", "f1", "pr_auc", "roc_auc")


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError(
            f"scores and labels must be equal-length vectors, got {scores.shape} vs {labels.shape}"
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def confusion_at(scores, labels, threshold: float) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) counts for the prediction `score > threshold`."""
    scores, labels = _validate(scores, labels)
    pred = scores > threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, fp, tn, fn


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def prf_at(scores, labels, threshold: float) -> tuple[float, float, float]:
    tp, fp, _, fn = confusion_at(scores, labels, threshold)
    return _prf(tp, fp, fn)


def best_f1(scores, labels) -> EvalReport:
    """Report at the threshold maximizing F1.

    One candidate cut per distinct score value (prediction = scores >= v,
    realized as a threshold strictly below v) plus the predict-nothing cut
    above the maximum. F1 ties break toward higher precision, then toward
    the higher threshold.
    """
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("best_f1 requires at least one positive label")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp_cum = np.cumsum(labels[order])

    distinct = np.unique(scores)[::-1]  # descending
    # index of the last element carrying each distinct value in sorted order
    last_idx = np.searchsorted(-sorted_scores, -distinct, side="right") - 1

    # (f1, precision, threshold) ranks candidates; start from predict-nothing
    best_key = (0.0, 0.0, float(distinct[0]) + 1.0)
    best_recall = 0.0
    for j, value in enumerate(distinct):
        tp = int(tp_cum[last_idx[j]])
        flagged = int(last_idx[j]) + 1
        precision, recall, f1 = _prf(tp, flagged - tp, n_pos - tp)
        if j + 1 < distinct.size:
            threshold = float(value + distinct[j + 1]) / 2.0  # strictly below value
        else:
            threshold = float(value) - 1.0  # below min: flag everything
        key = (f1, precision, threshold)
        if key > best_key:
            best_key = key
            best_recall = recall

    f1, precision, threshold = best_key
    return EvalReport(
        precision=precision, recall=best_recall, f1=f1,
        pr_auc=pr_auc(scores, labels),
        roc_auc=roc_auc(scores, labels) if 0 < n_pos < len(labels) else float("nan"),
        threshold=threshold, threshold_rule="best_f1",
    )


def topk_threshold(scores, k_percent: float) -> float:
    """Threshold such that the floor(k% * C) largest scores exceed it.

    Ties at the cut are resolved by the strict rank cut: with duplicated
    values spanning the boundary, fewer than k% may be flagged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 < k_percent <= 100.0:
        raise DataError(f"k_percent must be in (0, 100], got {k_percent}")
    c = scores.size
    m = int(math.floor(k_percent * c / 100.0 + 1e-12))
    if m <= 0:
        return float(scores.max())
    if m >= c:
        return float(scores.min()) - 1.0
    return float(np.sort(scores)[::-1][m])


def report_at(scores, labels, threshold: float, rule: str,
              k_percent: float | None = None) -> EvalReport:
    """Full report (P/R/F1 at the threshold, plus both AUCs)."""
    scores, labels = _validate(scores, labels)
    precision, recall, f1 = prf_at(scores, labels, threshold)
    n_pos = int(labels.sum())
    return EvalReport(
        precision=precision, recall=recall, f1=f1,
        pr_auc=pr_auc(scores, labels) if n_pos > 0 else float("nan"),
        roc_auc=roc_auc(scores, labels) if 0 < n_pos < len(labels) else float("nan"),
        threshold=float(threshold), threshold_rule=rule, k_percent=k_percent,
    )


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative
    (midrank tie handling); equals the trapezoidal ROC area."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_auc requires both classes present")
    ranks = rankdata(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall curve using step interpolation over
    recall increments at every distinct threshold."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("pr_auc requires at least one positive label")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp_cum = np.cumsum(sorted_labels)
    # evaluate at the last index of each distinct value (descending cuts)
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    idx = np.concatenate([boundary, [sorted_scores.size - 1]])
    tp = tp_cum[idx].astype(np.float64)
    flagged = (idx + 1).astype(np.float64)
    precision = tp / flagged
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def pr_curve(scores, labels) -> np.ndarray:
    """(recall, precision) points at every distinct threshold, recall ascending."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("pr_curve requires at least one positive label")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp_cum = np.cumsum(labels[order])
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    idx = np.concatenate([boundary, [sorted_scores.size - 1]])
    tp = tp_cum[idx].astype(np.float64)
    flagged = (idx + 1).astype(np.float64)
    return np.column_stack([tp / n_pos, tp / flagged])


def roc_curve(scores, labels) -> np.ndarray:
    """(false positive rate, true positive rate) points, FPR ascending."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_curve requires both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp_cum = np.cumsum(labels[order])
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    idx = np.concatenate([boundary, [sorted_scores.size - 1]])
    tp = tp_cum[idx].astype(np.float64)
    fp = (idx + 1).astype(np.float64) - tp
    points = np.column_stack([fp / n_neg, tp / n_pos])
    return np.vstack([[0.0, 0.0], points])


def mas_scores(series: LabeledSeries, window: int) -> ScoreSeries:
    """Moving-average-smoothing baseline: each observation is scored by its
    squared distance from the trailing mean of the preceding `window`
    observations (the running prefix mean during warm-up; 0 at t=0)."""
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    values = series.values
    c = values.shape[0]
    scores = np.zeros(c)
    cum = np.cumsum(values, axis=0)
    for t in range(1, c):
        if t <= window:
            mean = cum[t - 1] / t
        else:
            mean = (cum[t - 1] - cum[t - window - 1]) / window
        diff = values[t] - mean
        scores[t] = float(diff @ diff)
    return ScoreSeries(scores=scores)
