"""scikit-learn style classifiers wrapping the SSN and MIN pipelines."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_array, check_is_fitted
from scipy.special import expit

from .data import FeatureMatrix
from .errors import DataError
from .graphs import SimGraph, build_ssn
from .models.model import ModelSpec
from .preprocess import LassoSelector, ZScoreScaler
from .train import (SplitMask, TrainConfig, predict_graphs, predict_nodes, train_graph_model,
                    train_node_model)


def _spec(est, task: str) -> ModelSpec:
    kw = dict(depth=est.depth, hidden_dim=est.hidden_dim, task=task, dropout_p=est.dropout_p,
              seed=est.random_state)
    kind = est.layer_kind.upper()
    if kind == "CHEBY" and est.cheby_order is not None:
        kw["cheby_order"] = est.cheby_order
    if kind in ("GAT", "TRANSFORMER") and est.heads is not None:
        kw["heads"] = est.heads
    if kind == "GRAPH_UNET" and est.pool_ratio is not None:
        kw["pool_ratio"] = est.pool_ratio
    return ModelSpec.make(kind, **kw)


def _train_cfg(est) -> TrainConfig:
    return TrainConfig(est.learning_rate, est.weight_decay, est.max_epochs, est.patience,
                       est.random_state, getattr(est, "batch_size", 32))


def _split(labeled: np.ndarray, y: np.ndarray, val_fraction: float, seed: int):
    n_val = int(round(val_fraction * labeled.size))
    counts = np.bincount(y[labeled], minlength=2)
    if n_val >= 2 and counts.min() >= 2:
        return train_test_split(labeled, test_size=n_val, stratify=y[labeled], random_state=seed)
    return labeled, np.zeros(0, dtype=np.int64)


class _BaseGraphClassifier(ClassifierMixin, BaseEstimator):
    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0).astype(np.int64)


class SSNClassifier(_BaseGraphClassifier):
    """Node classification on a cosine sample-similarity network.

    ``fit(X, y)`` is transductive: rows labeled ``-1`` join the graph as
    unlabeled nodes and receive predictions in ``transduction_``.
    ``decision_function`` on new rows rebuilds the network over the fitted
    rows plus the new ones and scores the new nodes.
    """

    def __init__(self, layer_kind: str = "GCN", depth: int = 2, hidden_dim: int = 64,
                 heads: int | None = None, cheby_order: int | None = None,
                 pool_ratio: float | None = None, dropout_p: float = 0.5, threshold: float = 0.5,
                 use_lasso: bool = True, use_edge_weights: bool = True, learning_rate: float = 1e-3,
                 weight_decay: float = 5e-4, max_epochs: int = 500, patience: int = 50,
                 val_fraction: float = 0.1, random_state: int = 0):
        self.layer_kind = layer_kind
        self.depth = depth
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.cheby_order = cheby_order
        self.pool_ratio = pool_ratio
        self.dropout_p = dropout_p
        self.threshold = threshold
        self.use_lasso = use_lasso
        self.use_edge_weights = use_edge_weights
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _transform(self, X):
        return self.scaler_.transform(X)[:, self.support_]

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise DataError("X and y have different numbers of rows")
        if not np.isin(y, (-1, 0, 1)).all():
            raise DataError("labels must be 0, 1, or -1 for unlabeled")
        labeled = np.flatnonzero(y >= 0)
        if np.unique(y[labeled]).size < 2:
            raise DataError("need labeled samples of both classes")
        self.classes_ = np.array([0, 1])
        self.scaler_ = ZScoreScaler().fit(X[labeled])
        Z = self.scaler_.transform(X)
        self.support_ = np.arange(X.shape[1])
        if self.use_lasso:
            sel = LassoSelector(random_state=self.random_state).fit(Z[labeled], y[labeled])
            self.support_ = np.flatnonzero(sel.support_)
            self.lasso_ = sel
        Z = Z[:, self.support_]
        train, val = _split(labeled, y, self.val_fraction if self.patience else 0.0,
                            self.random_state)
        rest = np.setdiff1d(np.arange(X.shape[0]), np.concatenate([train, val]))
        mask = SplitMask(np.sort(train), np.sort(val), rest)
        labels = np.where(y >= 0, y, 0)
        m = FeatureMatrix(Z, [str(i) for i in range(Z.shape[0])],
                          [str(j) for j in self.support_], labels)
        self.graph_ = build_ssn(m, self.threshold)
        self.model_, self.history_ = train_node_model(_spec(self, "NODE_CLS"), self.graph_, m, mask,
                                                      _train_cfg(self), self.use_edge_weights)
        self.Z_ = Z
        logits = predict_nodes(self.model_, self.graph_, Z, self.use_edge_weights)
        self.transduction_ = (logits >= 0).astype(np.int64)
        self.transduction_logits_ = logits
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        Znew = self._transform(check_array(X, dtype=np.float64))
        Z = np.vstack([self.Z_, Znew])
        g = build_ssn(Z, self.threshold)
        return predict_nodes(self.model_, g, Z, self.use_edge_weights)[self.Z_.shape[0]:]


class MINClassifier(_BaseGraphClassifier):
    """Graph classification where every sample is a copy of one interaction network.

    ``X`` columns must follow ``graph`` node order (see ``load_min``).
    """

    def __init__(self, graph: SimGraph | None = None, layer_kind: str = "GCN", depth: int = 2,
                 hidden_dim: int = 64, heads: int | None = None, cheby_order: int | None = None,
                 pool_ratio: float | None = None, dropout_p: float = 0.5, positional: bool = False,
                 use_edge_weights: bool = True, learning_rate: float = 1e-3,
                 weight_decay: float = 5e-4, max_epochs: int = 500, patience: int = 50,
                 batch_size: int = 32, val_fraction: float = 0.1, random_state: int = 0):
        self.graph = graph
        self.layer_kind = layer_kind
        self.depth = depth
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.cheby_order = cheby_order
        self.pool_ratio = pool_ratio
        self.dropout_p = dropout_p
        self.positional = positional
        self.use_edge_weights = use_edge_weights
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.random_state = random_state

    def fit(self, X, y):
        if self.graph is None:
            raise DataError("MINClassifier needs a graph")
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if X.shape[1] != self.graph.n_nodes:
            raise DataError(f"X has {X.shape[1]} columns, graph has {self.graph.n_nodes} nodes")
        self.classes_ = np.array([0, 1])
        self.scaler_ = ZScoreScaler().fit(X)
        Z = self.scaler_.transform(X)
        train, val = _split(np.arange(X.shape[0]), y, self.val_fraction if self.patience else 0.0,
                            self.random_state)
        mask = SplitMask(np.sort(train), np.sort(val), np.zeros(0, dtype=np.int64))
        m = FeatureMatrix(Z, [str(i) for i in range(Z.shape[0])], list(self.graph.node_ids), y)
        self.model_, self.history_ = train_graph_model(
            _spec(self, "GRAPH_CLS"), self.graph, m, mask, _train_cfg(self), self.positional,
            self.use_edge_weights)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        Z = self.scaler_.transform(check_array(X, dtype=np.float64))
        return predict_graphs(self.model_, self.graph, Z, self.batch_size, self.positional,
                              self.use_edge_weights)
