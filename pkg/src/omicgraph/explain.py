"""Post-hoc explanations by learning soft edge and feature masks.

For one target (a node of an SSN, or a sample scored on a MIN) the masks
sigma(M_e), sigma(M_f) are optimized so the masked model still reproduces
its own unmasked hard prediction while the masks stay small and decisive:

    BCE(z_masked, y_hat) + a * (mean sigma(M_e) + mean sigma(M_f))
                         + b * (mean H(sigma(M_e)) + mean H(sigma(M_f)))

with H the binary entropy. The model is used read-only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FeatureMatrix
from .errors import DataError, NumericalError
from .graphs import SimGraph
from .models.model import Model
from .numcore import ops
from .numcore.tensor import Tensor, backward
from .train import Adam, graph_inputs


@dataclass
class Explanation:
    target: str
    edge_mask: np.ndarray
    feature_mask: np.ndarray
    edges: list[tuple[str, str]]
    feature_ids: list[str]
    final_masked_prediction: float
    objective: list[float] = field(default_factory=list)

    def ranked(self, top_k: int | None = None):
        return rank_explanations(self, top_k if top_k is not None else max(len(self.edges),
                                                                            len(self.feature_ids), 1))

    def to_dict(self, top_k: int | None = None) -> dict:
        edges, feats = self.ranked(top_k)
        return {"target": self.target,
                "final_masked_prediction": self.final_masked_prediction,
                "edges": [[a, b, m] for a, b, m in edges],
                "features": [[f, m] for f, m in feats]}

    def to_json(self, path, top_k: int | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(top_k), indent=2) + "\n")


def _entropy(p: Tensor) -> Tensor:
    q = ops.sub(1.0, p)
    return ops.neg(ops.add(ops.mul(p, ops.log(p)), ops.mul(q, ops.log(q))))


def _target_index(target, ids: list[str]) -> int:
    if isinstance(target, (int, np.integer)):
        if not 0 <= target < len(ids):
            raise DataError(f"target index {target} out of range")
        return int(target)
    try:
        return ids.index(str(target))
    except ValueError:
        raise DataError(f"unknown target {target!r}") from None


class _Problem:
    """Masked forward pass for one target."""

    def __init__(self, model: Model, g: SimGraph, m: FeatureMatrix, target, use_edge_weights: bool):
        if not all(np.isfinite(p.data).all() for p in model.parameters()):
            raise NumericalError("model parameters are not finite")
        self.model = model.frozen()
        self.S = g.structure(use_edge_weights)
        self.graph_task = model.spec.task == "GRAPH_CLS"
        if self.graph_task:
            if g.n_nodes != m.n_features:
                raise DataError("MIN explanations need one graph node per feature")
            self.t = _target_index(target, m.sample_ids)
            self.target = m.sample_ids[self.t]
            values = m.values[self.t:self.t + 1]
            self.positional = model.in_dim == 1 + g.n_nodes
            self.x = graph_inputs(values, self.positional)
            self.n_feature_mask = g.n_nodes
        else:
            if g.n_nodes != m.n_samples:
                raise DataError("SSN explanations need one graph node per sample")
            self.t = _target_index(target, m.sample_ids)
            self.target = m.sample_ids[self.t]
            self.x = m.values
            self.n_feature_mask = m.n_features
        self.n_edges = self.S.n_mask_edges

    def masked_inputs(self, fmask: Tensor) -> Tensor:
        x = Tensor(self.x)
        if self.graph_task:
            # mask the measured value of each molecule, never the positional code
            cols = [ops.mul(Tensor(self.x[:, :1]), ops.reshape(fmask, (-1, 1)))]
            if self.positional:
                cols.append(Tensor(self.x[:, 1:]))
            return cols[0] if len(cols) == 1 else ops.concat(cols, axis=1)
        return ops.mul(x, ops.reshape(fmask, (1, -1)))

    def logit(self, emask: Tensor | None = None, fmask: Tensor | None = None) -> Tensor:
        x = Tensor(self.x) if fmask is None else self.masked_inputs(fmask)
        out = self.model.forward(self.S, x, edge_mask=emask)
        idx = 0 if self.graph_task else self.t
        return ops.gather_rows(out, np.array([idx]))


def masked_prediction(model: Model, g: SimGraph, m: FeatureMatrix, target, edge_mask, feature_mask,
                      use_edge_weights: bool = True) -> float:
    """Target logit with fixed mask values (in [0, 1]) applied."""
    prob = _Problem(model, g, m, target, use_edge_weights)
    return prob.logit(Tensor(np.asarray(edge_mask, dtype=np.float64)),
                      Tensor(np.asarray(feature_mask, dtype=np.float64))).item()


def explain(model: Model, g: SimGraph, m: FeatureMatrix, target, iters: int = 300,
            sparsity_weight: float = 0.005, entropy_weight: float = 0.1, lr: float = 0.01,
            use_edge_weights: bool = True) -> Explanation:
    """Learn edge and feature masks for ``target`` (sample id or row index).

    Mask logits start at 0 (mask 0.5) and are optimized with Adam at step
    ``lr``. Node classification masks feature columns; graph classification
    masks each molecule's value and shares one edge mask over the network.
    """
    if iters < 0:
        raise ValueError("iters must be nonnegative")
    prob = _Problem(model, g, m, target, use_edge_weights)
    z0 = prob.logit().item()
    if not np.isfinite(z0):
        raise NumericalError("model prediction is not finite")
    y_hat = np.array([1.0 if z0 >= 0 else 0.0])
    me = Tensor(np.zeros(prob.n_edges), requires_grad=True)
    mf = Tensor(np.zeros(prob.n_feature_mask), requires_grad=True)
    opt = Adam([me, mf], lr=lr)

    def objective():
        pe, pf = ops.sigmoid(me), ops.sigmoid(mf)
        z = prob.logit(pe, pf)
        loss = ops.bce_with_logits(z, y_hat)
        masks = [p for p in (pe, pf) if p.size]
        for p in masks:
            loss = ops.add(loss, ops.mul(sparsity_weight, ops.mean(p)))
            loss = ops.add(loss, ops.mul(entropy_weight, ops.mean(_entropy(p))))
        return loss, z

    trace = []
    for _ in range(iters):
        opt.zero_grad()
        loss, _ = objective()
        trace.append(loss.item())
        backward(loss)
        opt.step()
    loss, z = objective()
    trace.append(loss.item())
    u, v, _ = g.edges()
    ids = g.node_ids
    return Explanation(
        target=prob.target,
        edge_mask=ops.sigmoid(me).data.copy(),
        feature_mask=ops.sigmoid(mf).data.copy(),
        edges=[(ids[a], ids[b]) for a, b in zip(u, v)],
        feature_ids=list(g.node_ids) if prob.graph_task else list(m.feature_ids),
        final_masked_prediction=z.item(),
        objective=trace,
    )


def _order(values: np.ndarray) -> np.ndarray:
    return np.argsort(-np.asarray(values), kind="stable")


def rank_explanations(e: Explanation, top_k: int):
    """Top edges and features by descending mask value; ties go to the lower index."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    eo = _order(e.edge_mask)[:top_k]
    fo = _order(e.feature_mask)[:top_k]
    edges = [(e.edges[i][0], e.edges[i][1], float(e.edge_mask[i])) for i in eo]
    feats = [(e.feature_ids[i], float(e.feature_mask[i])) for i in fo]
    return edges, feats


def mean_explanation(explanations: list[Explanation], target: str = "mean") -> Explanation:
    """Average masks over several targets explained on the same graph."""
    if not explanations:
        raise DataError("nothing to aggregate")
    first = explanations[0]
    for e in explanations[1:]:
        if e.edges != first.edges or e.feature_ids != first.feature_ids:
            raise DataError("explanations refer to different graphs or features")
    return Explanation(
        target=target,
        edge_mask=np.mean([e.edge_mask for e in explanations], axis=0),
        feature_mask=np.mean([e.feature_mask for e in explanations], axis=0),
        edges=list(first.edges), feature_ids=list(first.feature_ids),
        final_masked_prediction=float(np.mean([e.final_masked_prediction for e in explanations])),
    )


def edge_ranks(mask: np.ndarray) -> np.ndarray:
    """0-based rank of every entry under descending order (ties by index)."""
    ranks = np.empty(mask.size, dtype=np.int64)
    ranks[_order(mask)] = np.arange(mask.size)
    return ranks
