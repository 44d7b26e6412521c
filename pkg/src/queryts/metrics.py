"""Forecasting and classification metrics.

AUROC is the pairwise ranking probability (ties count one half); AUPRC is
average precision from the threshold-grouped precision-recall curve. Both are
implemented directly so they can be checked against exhaustive brute-force
oracles on small inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def forecast_errors(preds, targets, mask=None):
    """Per-observation mean squared and mean absolute error."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if mask is None:
        mask = np.ones_like(targets)
    total = mask.sum()
    if total == 0:
        raise ValidationError("empty target set")
    diff = (preds - targets) * mask
    mse = float((diff ** 2).sum() / total)
    mae = float(np.abs(diff).sum() / total)
    return mse, mae


def auroc(labels, scores):
    """Rank-statistic AUROC for binary labels (Mann-Whitney with midranks,
    so tied scores contribute 1/2)."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUROC undefined: test set contains a single class")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0   # midrank, 1-based
        i = j
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(labels, scores):
    """AUPRC via precision-recall step integration over score thresholds.

    Thresholds are the distinct scores in descending order; at each one the
    prediction rule is `score >= threshold`. Tied scores enter together.
    """
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = labels.sum()
    if n_pos == 0:
        raise ValidationError("AUPRC undefined: no positive labels")
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    scores = scores[order]
    ap = 0.0
    tp = 0.0
    prev_recall = 0.0
    k = 0
    n = len(labels)
    while k < n:
        j = k
        while j < n and scores[j] == scores[k]:
            tp += labels[j]
            j += 1
        precision = tp / j
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        k = j
    return float(ap)


def confusion_metrics(labels, predicted, num_classes):
    """Accuracy plus macro-averaged precision/recall/F1 at the argmax
    decisions. Classes with an empty denominator contribute zero."""
    labels = np.asarray(labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    acc = float((labels == predicted).mean())
    precisions, recalls, f1s = [], [], []
    for c in range(num_classes):
        tp = int(((predicted == c) & (labels == c)).sum())
        fp = int(((predicted == c) & (labels != c)).sum())
        fn = int(((predicted != c) & (labels == c)).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    return {
        "accuracy": acc,
        "precision": float(np.mean(precisions)),
        "recall": float(np.mean(recalls)),
        "f1": float(np.mean(f1s)),
    }


def seed_aggregate(values):
    """(mean, population std) over per-seed metric values."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
