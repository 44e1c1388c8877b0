"""Scaling, unsupervised filtering and LASSO feature selection.

Everything here is fitted on a training partition only and then applied.
"""
from .filters import (
    ConfounderFilter, CorrelationFilter, LowVarianceFilter, confounder_filter,
    correlation_filter, low_variance_filter,
)
from .lasso import (
    LassoFit, LassoSelector, default_lambda_grid, lambda_max, lasso_fit, lasso_objective,
    lasso_path, lasso_select,
)
from .scaling import ZScoreScaler, apply_scaler, fit_scaler

__all__ = [
    "ZScoreScaler", "fit_scaler", "apply_scaler",
    "LowVarianceFilter", "CorrelationFilter", "ConfounderFilter",
    "low_variance_filter", "correlation_filter", "confounder_filter",
    "LassoFit", "LassoSelector", "lasso_fit", "lasso_path", "lasso_select", "lambda_max",
    "lasso_objective", "default_lambda_grid",
]
