"""Graph layers as pure functions of (features, structure, parameters).

``edge_mask`` (optional, one value per undirected edge) scales each edge's
message after normalization/attention; self-loops are never masked.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError
from ..numcore import ops
from ..numcore.tensor import Tensor
from .structure import GraphStructure


def _check_rows(h: Tensor, S: GraphStructure) -> None:
    if h.ndim != 2 or h.shape[0] != S.n:
        raise DimensionError(f"features have {h.shape[0]} rows, graph has {S.n} nodes")


def linear(h: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ops.matmul(h, w)
    return out if b is None else ops.add(out, b)


def gcn_layer(h: Tensor, S: GraphStructure, w: Tensor, b: Tensor | None = None,
              edge_mask: Tensor | None = None) -> Tensor:
    """D^-1/2 (A + I) D^-1/2 h w (+ b)."""
    _check_rows(h, S)
    out = S.propagate("gcn", ops.matmul(h, w), edge_mask)
    return out if b is None else ops.add(out, b)


def cheby_layer(h: Tensor, S: GraphStructure, weights: list[Tensor], b: Tensor | None = None,
                edge_mask: Tensor | None = None) -> Tensor:
    """sum_k T_k(L~) h w_k with the Chebyshev recurrence applied to h."""
    _check_rows(h, S)
    K = len(weights)
    if K < 1:
        raise ValueError("Chebyshev order K must be >= 1")
    tx_prev = h
    out = ops.matmul(h, weights[0])
    if K > 1:
        tx = S.propagate("cheby", h, edge_mask)
        out = ops.add(out, ops.matmul(tx, weights[1]))
        for k in range(2, K):
            tx_next = ops.sub(ops.mul(2.0, S.propagate("cheby", tx, edge_mask)), tx_prev)
            out = ops.add(out, ops.matmul(tx_next, weights[k]))
            tx_prev, tx = tx, tx_next
    return out if b is None else ops.add(out, b)


def attention_weights(scores: Tensor, S: GraphStructure, edge_mask: Tensor | None) -> Tensor:
    """Softmax of per-entry scores over each node's neighborhood (incl. self)."""
    alpha = ops.segment_softmax(scores, S.offsets)
    if edge_mask is not None:
        alpha = ops.mul(alpha, ops.reshape(S.entry_mask(edge_mask), (-1, 1)))
    return alpha


def gat_head(h: Tensor, S: GraphStructure, w: Tensor, a: Tensor, slope: float = 0.2,
             edge_mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """One attention head; ``a`` has shape (2*d, 1) acting on [W h_i || W h_j].

    Returns (output, per-entry attention column).
    """
    wh = ops.matmul(h, w)
    d = w.shape[1]
    if a.shape != (2 * d, 1):
        raise DimensionError(f"attention vector must have shape ({2 * d}, 1), got {a.shape}")
    a_dst = ops.gather_rows(a, np.arange(d))
    a_src = ops.gather_rows(a, np.arange(d, 2 * d))
    f_dst = ops.matmul(wh, a_dst)
    f_src = ops.matmul(wh, a_src)
    e = ops.leaky_relu(ops.add(ops.gather_rows(f_dst, S.rows), ops.gather_rows(f_src, S.cols)), slope)
    alpha = attention_weights(e, S, edge_mask)
    out = ops.spmm(S.pattern, wh, values=ops.reshape(alpha, (-1,)))
    return out, alpha


def gat_layer(h: Tensor, S: GraphStructure, heads: list[tuple[Tensor, Tensor]],
              b: Tensor | None = None, concat: bool = True, slope: float = 0.2,
              edge_mask: Tensor | None = None) -> Tensor:
    """Multi-head graph attention; heads are concatenated or averaged."""
    _check_rows(h, S)
    if len(heads) < 1:
        raise ValueError("GAT needs at least one head")
    outs = [gat_head(h, S, w, a, slope, edge_mask)[0] for w, a in heads]
    if concat:
        out = outs[0] if len(outs) == 1 else ops.concat(outs, axis=1)
    else:
        out = outs[0]
        for o in outs[1:]:
            out = ops.add(out, o)
        out = ops.mul(out, 1.0 / len(outs))
    return out if b is None else ops.add(out, b)


def transformer_layer(h: Tensor, S: GraphStructure, params: dict, edge_mask: Tensor | None = None
                      ) -> Tensor:
    """Neighborhood-masked multi-head attention with an edge-weight logit bias.

    Per head: logits (q_i . k_j) / sqrt(d) + w_e * weight(i, j), softmax over
    N(i) plus self, messages are values. Heads are concatenated, added to the
    (projected) input and layer-normalized.

    ``params`` keys: ``heads`` (list of dicts with ``q``, ``k``, ``v``,
    ``edge``), optional ``residual``, ``gamma``, ``beta``.
    """
    _check_rows(h, S)
    attr = Tensor(S.attr_values.reshape(-1, 1))
    outs = []
    for hp in params["heads"]:
        q = ops.matmul(h, hp["q"])
        k = ops.matmul(h, hp["k"])
        v = ops.matmul(h, hp["v"])
        d = hp["q"].shape[1]
        qk = ops.sum(ops.mul(ops.gather_rows(q, S.rows), ops.gather_rows(k, S.cols)), axis=1, keepdims=True)
        logits = ops.add(ops.mul(qk, 1.0 / math.sqrt(d)), ops.mul(attr, hp["edge"]))
        alpha = attention_weights(logits, S, edge_mask)
        outs.append(ops.spmm(S.pattern, v, values=ops.reshape(alpha, (-1,))))
    attn = outs[0] if len(outs) == 1 else ops.concat(outs, axis=1)
    res = h if params.get("residual") is None else ops.matmul(h, params["residual"])
    return ops.layer_norm(ops.add(res, attn), params["gamma"], params["beta"])


def topk_indices(scores: np.ndarray, ratio: float) -> np.ndarray:
    """Indices of the ceil(ratio * n) largest scores; ties go to the lower index."""
    n = scores.shape[0]
    k = math.ceil(ratio * n)
    if k < 1:
        raise ValueError(f"pooling keeps no nodes (n={n}, ratio={ratio}); use a larger pool_ratio")
    return np.argsort(-scores.reshape(-1), kind="stable")[:k]


def topk_pool(h: Tensor, S: GraphStructure, p: Tensor, ratio: float
              ) -> tuple[Tensor, np.ndarray, GraphStructure]:
    """Score nodes by h p / ||p||, keep the top ones gated by sigmoid(score)."""
    if not 0 < ratio <= 1:
        raise ValueError("pool_ratio must lie in (0, 1]")
    norm = ops.sqrt(ops.sum(ops.mul(p, p)))
    score = ops.div(ops.matmul(h, p), norm)
    idx = topk_indices(score.data, ratio)
    gated = ops.mul(ops.gather_rows(h, idx), ops.sigmoid(ops.gather_rows(score, idx)))
    return gated, idx, S.subgraph(idx)


def unpool(h: Tensor, idx: np.ndarray, n: int) -> Tensor:
    return ops.scatter_rows(h, idx, n)


def graph_unet(h: Tensor, S: GraphStructure, depth: int, pool_ratio: float, params: dict,
               edge_mask: Tensor | None = None) -> Tensor:
    """GCN encoder with top-k pooling, mirrored decoder with unpooling and skips.

    ``params`` keys: ``enc`` (depth + 1 pairs of (w, b)), ``pool`` (depth
    projection vectors), ``dec`` (depth pairs of (w, b)). Returns
    full-resolution embeddings.
    """
    _check_rows(h, S)
    if depth < 1:
        raise ValueError("U-Net depth must be >= 1")
    w, b = params["enc"][0]
    x = ops.relu(gcn_layer(h, S, w, b, edge_mask))
    skips, structs, idxs = [x], [S], []
    for level in range(1, depth + 1):
        x, idx, sub = topk_pool(x, structs[-1], params["pool"][level - 1], pool_ratio)
        w, b = params["enc"][level]
        x = ops.relu(gcn_layer(x, sub, w, b, edge_mask))
        idxs.append(idx)
        structs.append(sub)
        skips.append(x)
    for i, level in enumerate(range(depth, 0, -1)):
        up = unpool(x, idxs[level - 1], structs[level - 1].n)
        x = ops.add(up, skips[level - 1])
        w, b = params["dec"][i]
        x = gcn_layer(x, structs[level - 1], w, b, edge_mask)
        if level > 1:
            x = ops.relu(x)
    return x
