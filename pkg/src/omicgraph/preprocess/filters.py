"""Unsupervised feature filters: low variance, redundancy and confounding."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..data import FeatureMatrix
from ..errors import DataError

# |r| within this distance of 1 counts as perfectly correlated (rounding of corrcoef)
_R_SLACK = 1e-12


def abs_pearson(X: np.ndarray, v: np.ndarray) -> np.ndarray:
    """|Pearson r| between every column of X and vector v; 0 for constant columns."""
    Xc = X - X.mean(axis=0)
    vc = v - v.mean()
    denom = np.sqrt((Xc * Xc).sum(axis=0) * (vc @ vc))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (Xc.T @ vc) / denom
    return np.abs(np.nan_to_num(r, nan=0.0))


def abs_corr_matrix(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    norms = np.sqrt((Xc * Xc).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        Z = Xc / norms
    Z = np.nan_to_num(Z, nan=0.0)
    return np.abs(Z.T @ Z)


class LowVarianceFilter(SelectorMixin, BaseEstimator):
    """Drop features whose (population) variance is below ``threshold``."""

    def __init__(self, threshold: float = 1e-8):
        self.threshold = threshold

    def fit(self, X, y=None):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        X = check_array(X, dtype=np.float64)
        self.variances_ = X.var(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "variances_")
        return self.variances_ >= self.threshold


class CorrelationFilter(SelectorMixin, BaseEstimator):
    """Greedy redundancy filter.

    Scanning features in column order, feature j is dropped when its absolute
    Pearson correlation with any previously kept feature is >= ``max_abs_r``.
    """

    def __init__(self, max_abs_r: float = 0.95):
        self.max_abs_r = max_abs_r

    def fit(self, X, y=None):
        if not 0 < self.max_abs_r <= 1:
            raise ValueError("max_abs_r must lie in (0, 1]")
        X = check_array(X, dtype=np.float64)
        R = abs_corr_matrix(X)
        cut = self.max_abs_r - _R_SLACK
        keep = np.zeros(X.shape[1], dtype=bool)
        kept_idx: list[int] = []
        for j in range(X.shape[1]):
            if not kept_idx or R[j, kept_idx].max() < cut:
                keep[j] = True
                kept_idx.append(j)
        self.support_ = keep
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_


class ConfounderFilter(SelectorMixin, BaseEstimator):
    """Remove a confounder column, everything correlated with it, and a blocklist.

    Parameters
    ----------
    confounder : int
        Column index of the confounding feature (e.g. a drug metabolite).
    min_abs_r : float
        Features with |Pearson r| >= this against the confounder are removed.
    blocklist : sequence of int
        Extra column indices to remove unconditionally (e.g. pathway members).
    """

    def __init__(self, confounder: int = 0, min_abs_r: float = 0.2, blocklist=()):
        self.confounder = confounder
        self.min_abs_r = min_abs_r
        self.blocklist = blocklist

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        p = X.shape[1]
        if not 0 <= self.confounder < p:
            raise DataError(f"confounder column {self.confounder} out of range")
        self.abs_r_ = abs_pearson(X, X[:, self.confounder])
        keep = self.abs_r_ < self.min_abs_r - _R_SLACK
        keep[self.confounder] = False
        for j in self.blocklist:
            if 0 <= j < p:
                keep[j] = False
        self.support_ = keep
        self.n_features_in_ = p
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_


def _apply(selector, m: FeatureMatrix) -> FeatureMatrix:
    if m.n_features == 0:
        return m
    selector.fit(m.values)
    return m.columns(np.flatnonzero(selector.get_support()))


def low_variance_filter(m: FeatureMatrix, threshold: float = 1e-8) -> FeatureMatrix:
    return _apply(LowVarianceFilter(threshold), m)


def correlation_filter(m: FeatureMatrix, max_abs_r: float = 0.95) -> FeatureMatrix:
    return _apply(CorrelationFilter(max_abs_r), m)


def confounder_filter(m: FeatureMatrix, confounder_feature: str, min_abs_r: float = 0.2,
                      blocklist=()) -> FeatureMatrix:
    idx = m.feature_index(confounder_feature)
    block = [m.feature_ids.index(f) for f in blocklist if f in m.feature_ids]
    return _apply(ConfounderFilter(idx, min_abs_r, tuple(block)), m)
