"""Rank-based ranking metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney U statistic.

    Tied scores count one half.  Both classes must be present.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores but {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    return float(np.mean(pred == target))
