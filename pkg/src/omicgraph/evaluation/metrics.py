"""Ranking and threshold metrics for binary case/control scores."""
from __future__ import annotations

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from ..errors import DataError


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise DataError("scores and labels must have the same length")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0/1")
    return scores, labels.astype(np.int64)


def auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney rank statistic.

    Equals P(score_case > score_control) + 0.5 * P(tie). Midranks are
    multiples of 0.5, so the rank sum and U are exact in floating point.
    """
    scores, labels = _check_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1(scores, labels, threshold: float = 0.5) -> float:
    """F1 of the case class, predicting case when sigmoid(score) >= threshold.

    Undefined precision or recall counts as 0.
    """
    scores, labels = _check_binary(scores, labels)
    pred = expit(scores) >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)
