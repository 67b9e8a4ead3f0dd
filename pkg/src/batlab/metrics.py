"""Evaluation metrics: tie-grouped average precision, F1, accuracy.

AP sweeps scores in descending order with equal scores processed as one
block; mAP averages over classes that have at least one positive, reporting
the excluded ones. All functions are pure numpy and invariant to sample
order.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def average_precision(scores, labels) -> float:
    """Area under precision(recall) via a descending-score sweep.

    labels are binary; requires at least one positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ParameterError("average_precision needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        block_tp = int(y[i:j].sum())
        tp += block_tp
        seen = j
        if block_tp:
            ap += (block_tp / n_pos) * (tp / seen)
        i = j
    return float(ap)


def mean_average_precision(scores, labels) -> tuple[float, dict, list]:
    """Unweighted mean AP over classes with positives.

    scores/labels: (S, C). Returns (mAP, per-class AP dict, excluded class
    indices).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    per_class = {}
    excluded = []
    for c in range(scores.shape[1]):
        if labels[:, c].sum() == 0:
            excluded.append(c)
            continue
        per_class[c] = average_precision(scores[:, c], labels[:, c])
    if not per_class:
        raise ParameterError("no class has a positive label")
    return float(np.mean(list(per_class.values()))), per_class, excluded


def f1(scores, labels, threshold: float = 0.5, averaging: str = "macro") -> float:
    """Thresholded multi-label F1; zero-division counts as 0 for that class."""
    if averaging not in ("macro", "micro"):
        raise ParameterError(f"averaging must be macro or micro, got {averaging!r}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pred = scores >= threshold
    tp = (pred & labels).sum(axis=0).astype(np.float64)
    fp = (pred & ~labels).sum(axis=0).astype(np.float64)
    fn = (~pred & labels).sum(axis=0).astype(np.float64)
    if averaging == "micro":
        denom = 2 * tp.sum() + fp.sum() + fn.sum()
        return float(2 * tp.sum() / denom) if denom > 0 else 0.0
    denom = 2 * tp + fp + fn
    per_class = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1.0), 0.0)
    return float(per_class.mean())


def accuracy(scores, labels) -> float:
    """Multi-class argmax accuracy; ties resolve to the lowest class index."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    return float((np.argmax(scores, axis=1) == labels).mean())


def spearman_rank(a, b) -> float:
    """Spearman correlation with average ranks for ties."""
    def ranks(x):
        x = np.asarray(x, dtype=np.float64)
        order = np.argsort(x, kind="stable")
        r = np.empty(len(x))
        r[order] = np.arange(1, len(x) + 1)
        for v in np.unique(x):
            same = x == v
            if same.sum() > 1:
                r[same] = r[same].mean()
        return r

    ra, rb = ranks(a), ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    return float((ra * rb).sum() / denom) if denom > 0 else 0.0
