"""L1-penalized least squares by cyclic coordinate descent, and feature selection with it.

Objective: (1/2n) ||y - X b - c||^2 + lam * ||b||_1 with unpenalized intercept c.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_is_fitted, check_X_y

from ..data import FeatureMatrix
from ..errors import DataError
from ..evaluation.metrics import auc


@njit(cache=True)
def _sweep(X, r, beta, col_sq, lam, idx, n):
    max_change = 0.0
    for t in range(idx.size):
        j = idx[t]
        cs = col_sq[j]
        if cs == 0.0:
            continue
        old = beta[j]
        xj = X[:, j]
        rho = 0.0
        for i in range(n):
            rho += xj[i] * r[i]
        rho = rho / n + cs * old
        if rho > lam:
            new = (rho - lam) / cs
        elif rho < -lam:
            new = (rho + lam) / cs
        else:
            new = 0.0
        d = new - old
        if d != 0.0:
            for i in range(n):
                r[i] -= xj[i] * d
            beta[j] = new
            if abs(d) > max_change:
                max_change = abs(d)
    return max_change


@njit(cache=True)
def _coordinate_descent(X, y, beta, lam, max_iter, tol):
    n, p = X.shape
    col_sq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        col_sq[j] = s / n
    r = y - X @ beta
    all_idx = np.arange(p)
    n_iter = 0
    converged = False
    while n_iter < max_iter:
        change = _sweep(X, r, beta, col_sq, lam, all_idx, n)
        n_iter += 1
        if change < tol:
            converged = True
            break
        active = np.flatnonzero(beta != 0.0)
        # converge on the active set, then re-verify with a full sweep
        while n_iter < max_iter and active.size > 0:
            change = _sweep(X, r, beta, col_sq, lam, active, n)
            n_iter += 1
            if change < tol:
                break
    return beta, n_iter, converged


@dataclass
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    n_iter: int
    converged: bool

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.coef != 0.0)

    def predict(self, X) -> np.ndarray:
        return np.asarray(X) @ self.coef + self.intercept


def lambda_max(X, y) -> float:
    """Smallest penalty at which every coefficient is zero."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    return float(np.max(np.abs(Xc.T @ (y - y.mean()))) / X.shape[0]) if X.shape[1] else 0.0


def lasso_objective(X, y, coef, intercept, lam) -> float:
    r = np.asarray(y) - np.asarray(X) @ coef - intercept
    return float(r @ r / (2 * len(r)) + lam * np.abs(coef).sum())


def lasso_fit(X, y, lam: float, max_iter: int = 1000, tol: float = 1e-6,
              warm_start: np.ndarray | None = None) -> LassoFit:
    """Solve the LASSO at a single penalty.

    ``max_iter`` bounds the number of coordinate sweeps (full or active-set);
    convergence means a full sweep moved no coefficient by ``tol`` or more.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("LASSO input contains non-finite values")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = np.asfortranarray(X - x_mean)
    yc = y - y_mean
    if lam >= lambda_max(X, y):
        # subgradient condition holds at 0; skip the sweep so rounding cannot leave residue
        return LassoFit(np.zeros(X.shape[1]), float(y_mean), float(lam), 0, True)
    beta = np.zeros(X.shape[1]) if warm_start is None else np.array(warm_start, dtype=np.float64)
    beta, n_iter, converged = _coordinate_descent(Xc, yc, beta, float(lam), int(max_iter), float(tol))
    intercept = float(y_mean - x_mean @ beta)
    return LassoFit(beta, intercept, float(lam), int(n_iter), bool(converged))


def lasso_path(X, y, lambdas, max_iter: int = 1000, tol: float = 1e-6,
               max_dev_ratio: float | None = None) -> list[LassoFit]:
    """Warm-started fits along ``lambdas`` in the given order (use decreasing).

    With ``max_dev_ratio`` set, the path stops solving once the fraction of
    variance explained reaches it (glmnet's early termination) and the last
    solution is repeated for the remaining penalties.
    """
    fits: list[LassoFit] = []
    beta = None
    y = np.asarray(y, dtype=np.float64)
    tss = float(((y - y.mean()) ** 2).sum())
    for lam in lambdas:
        if max_dev_ratio is not None and fits and tss > 0:
            r = y - fits[-1].predict(X)
            if 1.0 - float(r @ r) / tss >= max_dev_ratio:
                last = fits[-1]
                fits.append(LassoFit(last.coef, last.intercept, float(lam), 0, last.converged))
                continue
        fit = lasso_fit(X, y, lam, max_iter=max_iter, tol=tol, warm_start=beta)
        beta = fit.coef
        fits.append(fit)
    return fits


def default_lambda_grid(X, y, n_lambdas: int = 30, min_ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced grid from lambda_max down to lambda_max * min_ratio."""
    lmax = lambda_max(X, y)
    if lmax == 0.0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * min_ratio, n_lambdas)


class LassoSelector(SelectorMixin, BaseEstimator):
    """Keep the features with nonzero LASSO coefficient at a CV-chosen penalty.

    The penalty is the grid value with the best mean inner-CV AUC of the
    LASSO's own linear predictor (ties go to the larger penalty). With
    ``selection_rule="one_se"`` it is instead the largest penalty whose mean
    AUC lies within one standard error of the best, which keeps selections
    small when the labels carry no signal. Paths stop
    early once ``max_dev_ratio`` of the variance is explained. If that fit
    selects nothing, the ``fallback_k`` largest coefficients at the smallest
    penalty are kept instead and ``fallback_`` is set.
    """

    def __init__(self, lambda_grid=None, n_lambdas: int = 30, lambda_min_ratio: float = 1e-3,
                 inner_folds: int = 5, max_iter: int = 1000, tol: float = 1e-5,
                 max_dev_ratio: float = 0.999, fallback_k: int = 64, selection_rule: str = "best",
                 random_state: int = 0):
        self.lambda_grid = lambda_grid
        self.n_lambdas = n_lambdas
        self.lambda_min_ratio = lambda_min_ratio
        self.inner_folds = inner_folds
        self.max_iter = max_iter
        self.tol = tol
        self.max_dev_ratio = max_dev_ratio
        self.fallback_k = fallback_k
        self.selection_rule = selection_rule
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.float64)
        if self.inner_folds < 2:
            raise ValueError("inner_folds must be >= 2")
        if self.selection_rule not in ("best", "one_se"):
            raise ValueError("selection_rule must be 'best' or 'one_se'")
        if self.lambda_grid is None:
            grid = default_lambda_grid(X, y, self.n_lambdas, self.lambda_min_ratio)
        else:
            grid = np.sort(np.asarray(self.lambda_grid, dtype=np.float64))[::-1]
            if grid.size == 0:
                raise ValueError("lambda grid must be nonempty")
        self.lambdas_ = grid

        if grid.size == 1:
            self.cv_auc_ = np.full(1, np.nan)
            best = 0
        else:
            scores = np.zeros((self.inner_folds, grid.size))
            skf = StratifiedKFold(self.inner_folds, shuffle=True, random_state=self.random_state)
            for f, (tr, va) in enumerate(skf.split(X, y)):
                fits = lasso_path(X[tr], y[tr], grid, self.max_iter, self.tol, self.max_dev_ratio)
                for i, fit in enumerate(fits):
                    pred = fit.predict(X[va])
                    scores[f, i] = auc(pred, y[va]) if np.ptp(pred) > 0 else 0.5
            self.cv_auc_ = scores.mean(axis=0)
            best = int(np.argmax(self.cv_auc_))
            if self.selection_rule == "one_se":
                se = scores[:, best].std(ddof=1) / np.sqrt(self.inner_folds)
                best = int(np.flatnonzero(self.cv_auc_ >= self.cv_auc_[best] - se)[0])
        self.alpha_ = float(grid[best])
        fit = lasso_path(X, y, grid[: best + 1], self.max_iter, self.tol, self.max_dev_ratio)[-1]
        self.coef_ = fit.coef
        self.intercept_ = fit.intercept
        self.converged_ = fit.converged
        support = fit.coef != 0.0
        self.fallback_ = not support.any()
        if self.fallback_:
            smallest = lasso_path(X, y, grid, self.max_iter, self.tol, self.max_dev_ratio)[-1].coef
            k = min(self.fallback_k, X.shape[1])
            order = np.argsort(-np.abs(smallest), kind="stable")[:k]
            support = np.zeros(X.shape[1], dtype=bool)
            support[order] = True
        self.support_ = support
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_


def lasso_select(train: FeatureMatrix, lambda_grid=None, inner_folds: int = 5,
                 random_state: int = 0) -> tuple[list[str], LassoSelector]:
    """Selected feature ids (and the fitted selector) on a training partition."""
    sel = LassoSelector(lambda_grid=lambda_grid, inner_folds=inner_folds,
                        random_state=random_state).fit(train.values, train.labels)
    ids = [train.feature_ids[j] for j in np.flatnonzero(sel.support_)]
    return ids, sel
