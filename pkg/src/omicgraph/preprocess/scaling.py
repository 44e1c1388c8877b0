from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..data import FeatureMatrix
from ..errors import DataError

STD_FLOOR = 1e-12


class ZScoreScaler(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Per-feature z-score with population standard deviation.

    Features whose training std falls below 1e-12 keep scale 1, so constant
    columns map to 0.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std < STD_FLOOR, 1.0, std)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_


def fit_scaler(train: FeatureMatrix) -> ZScoreScaler:
    if train.n_samples == 0 or train.n_features == 0:
        raise DataError("cannot fit a scaler on an empty matrix")
    return ZScoreScaler().fit(train.values)


def apply_scaler(scaler: ZScoreScaler, m: FeatureMatrix) -> FeatureMatrix:
    return m.with_values(scaler.transform(m.values))
