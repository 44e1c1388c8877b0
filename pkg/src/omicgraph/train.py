"""Optimization loops for node classification on an SSN and graph classification on a MIN."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import FeatureMatrix
from .errors import ConfigError, DataError, NumericalError
from .evaluation.metrics import auc
from .graphs import SimGraph
from .models.model import Model, ModelSpec, assemble
from .models.structure import GraphStructure
from .numcore import ops
from .numcore.tensor import Tensor, backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitMask:
    """Disjoint train/validation/test index sets over samples."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        parts = [self.train, self.val, self.test]
        allidx = np.concatenate(parts)
        if np.unique(allidx).size != allidx.size:
            raise DataError("train/val/test splits overlap")

    @property
    def n(self) -> int:
        return self.train.size + self.val.size + self.test.size

    def validate(self, labels, n_samples: int | None = None) -> None:
        """Check coverage of all samples and that every nonempty split has both classes."""
        labels = np.asarray(labels)
        n = labels.size if n_samples is None else n_samples
        covered = np.sort(np.concatenate([self.train, self.val, self.test]))
        if covered.size != n or not np.array_equal(covered, np.arange(n)):
            raise DataError("splits must cover every sample exactly once")
        for name in ("train", "val", "test"):
            idx = getattr(self, name)
            if idx.size and np.unique(labels[idx]).size < 2:
                raise DataError(f"{name} split lacks one of the classes")

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("train", "val", "test")}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 50
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning_rate, max_epochs and batch_size must be positive")
        if self.weight_decay < 0 or self.patience < 0:
            raise ConfigError("weight_decay and patience must be nonnegative")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with bias correction and decoupled (AdamW-style) weight decay."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        for p, g in zip(self.params, grads):
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter of shape {p.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: Adam) -> Adam:
    """Functional wrapper: load ``grads`` into ``params`` and take one step of ``state``."""
    if len(params) != len(grads):
        raise ValueError("one gradient per parameter is required")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        p.grad = np.asarray(g, dtype=np.float64)
    state.step()
    return state


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def record(self, epoch: int, loss: float, val: float) -> None:
        self.epoch.append(epoch)
        self.train_loss.append(loss)
        self.val_auc.append(val)

    @property
    def best_val_auc(self) -> float:
        vals = [v for v in self.val_auc if not np.isnan(v)]
        return max(vals) if vals else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_auc"])
            for row in zip(self.epoch, self.train_loss, self.val_auc):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def _structure(g, use_edge_weights: bool) -> GraphStructure:
    if isinstance(g, GraphStructure):
        return g
    if isinstance(g, SimGraph):
        return g.structure(use_edge_weights)
    raise TypeError(f"expected SimGraph or GraphStructure, got {type(g).__name__}")


def _val_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    if labels.size == 0 or np.unique(labels).size < 2:
        return float("nan")
    return auc(scores, labels)


def _fit_loop(model: Model, cfg: TrainConfig, epoch_fn, val_fn) -> History:
    """Shared epoch loop with early stopping on validation AUC."""
    opt = Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    hist = History()
    best_auc, best_state, since = -np.inf, None, 0
    for epoch in range(cfg.max_epochs):
        loss = epoch_fn(opt)
        val = val_fn()
        hist.record(epoch, loss, val)
        if not np.isnan(val) and val > best_auc:
            best_auc, best_state, since = val, model.state_dict(), 0
            hist.best_epoch = epoch
        else:
            since += 1
        if cfg.patience and since >= cfg.patience:
            break
    if cfg.patience and best_state is not None:
        model.load_state_dict(best_state)
    return hist


def predict_nodes(model: Model, g, X, use_edge_weights: bool = True) -> np.ndarray:
    """Evaluation-mode logits for every node."""
    S = _structure(g, use_edge_weights)
    return model.forward(S, Tensor(np.asarray(X, dtype=np.float64))).data.copy()


def train_node_model(spec: ModelSpec, g, m: FeatureMatrix, mask: SplitMask, cfg: TrainConfig,
                     use_edge_weights: bool = True) -> tuple[Model, History]:
    """Transductive node classification: all nodes propagate, only train labels enter the loss.

    Early stopping (``cfg.patience > 0``) restores the parameters with the best
    validation AUC; ``patience == 0`` runs exactly ``max_epochs`` and keeps the
    final parameters.
    """
    if spec.task != "NODE_CLS":
        raise ConfigError("train_node_model needs a NODE_CLS spec")
    S = _structure(g, use_edge_weights)
    if S.n != m.n_samples:
        raise DataError(f"graph has {S.n} nodes but the feature matrix has {m.n_samples} samples")
    if mask.train.size == 0:
        raise DataError("empty training split")
    X = Tensor(m.values)
    y_train = m.labels[mask.train].astype(np.float64)
    y_val = m.labels[mask.val]
    model = assemble(spec, m.n_features)
    rng = np.random.default_rng(cfg.seed)

    def epoch_fn(opt):
        opt.zero_grad()
        logits = model.forward(S, X, training=True, rng=rng)
        loss = ops.bce_with_logits(logits, y_train, mask.train)
        backward(loss)
        opt.step()
        return loss.item()

    def val_fn():
        if mask.val.size == 0:
            return float("nan")
        return _val_auc(model.forward(S, X).data[mask.val], y_val)

    hist = _fit_loop(model, cfg, epoch_fn, val_fn)
    return model, hist


def graph_inputs(values: np.ndarray, positional: bool = False) -> np.ndarray:
    """Stack per-sample node features: (n_samples * n_nodes, 1), or with a one-hot node id."""
    values = np.asarray(values, dtype=np.float64)
    n_samples, n_nodes = values.shape
    x = values.reshape(-1, 1)
    if positional:
        x = np.hstack([x, np.tile(np.eye(n_nodes), (n_samples, 1))])
    return x


def predict_graphs(model: Model, g, values: np.ndarray, batch_size: int = 32,
                   positional: bool = False, use_edge_weights: bool = True) -> np.ndarray:
    """Evaluation-mode logit per sample for a shared-topology graph classifier."""
    S = _structure(g, use_edge_weights)
    values = np.asarray(values, dtype=np.float64)
    out = []
    for lo in range(0, values.shape[0], batch_size):
        chunk = values[lo:lo + batch_size]
        SB = S.union(chunk.shape[0])
        out.append(model.forward(SB, Tensor(graph_inputs(chunk, positional))).data)
    return np.concatenate(out) if out else np.zeros(0)


def train_graph_model(spec: ModelSpec, g, m: FeatureMatrix, mask: SplitMask, cfg: TrainConfig,
                      positional: bool = False, use_edge_weights: bool = True
                      ) -> tuple[Model, History]:
    """Graph classification: each sample is a copy of ``g`` carrying its own values.

    Node features are the sample's measurement per molecule (dimension 1), or
    that value plus a one-hot node identifier when ``positional`` is set.
    Training shuffles samples every epoch and processes mini-batches of
    ``cfg.batch_size``; each batch is sorted so a full batch is order-free.
    """
    if spec.task != "GRAPH_CLS":
        raise ConfigError("train_graph_model needs a GRAPH_CLS spec")
    S = _structure(g, use_edge_weights)
    if S.n != m.n_features:
        raise DataError(f"graph has {S.n} nodes but the feature matrix has {m.n_features} features")
    if mask.train.size == 0:
        raise DataError("empty training split")
    in_dim = 1 + (S.n if positional else 0)
    model = assemble(spec, in_dim)
    rng = np.random.default_rng(cfg.seed)
    labels = m.labels.astype(np.float64)

    def epoch_fn(opt):
        order = rng.permutation(mask.train)
        total = 0.0
        for lo in range(0, order.size, cfg.batch_size):
            batch = np.sort(order[lo:lo + cfg.batch_size])
            SB = S.union(batch.size)
            opt.zero_grad()
            x = Tensor(graph_inputs(m.values[batch], positional))
            logits = model.forward(SB, x, training=True, rng=rng)
            loss = ops.bce_with_logits(logits, labels[batch], np.arange(batch.size))
            backward(loss)
            opt.step()
            total += loss.item() * batch.size
        return total / order.size

    def val_fn():
        if mask.val.size == 0:
            return float("nan")
        scores = predict_graphs(model, S, m.values[mask.val], cfg.batch_size, positional)
        return _val_auc(scores, m.labels[mask.val])

    hist = _fit_loop(model, cfg, epoch_fn, val_fn)
    return model, hist
