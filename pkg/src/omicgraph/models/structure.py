"""Precomputed propagation operators for one graph topology.

All operators share one CSR pattern: the adjacency plus a self-loop on every
node. ``edge_ids`` maps each stored entry to its undirected edge index in the
source graph, with self-loops pointing one past the last edge, so an edge mask
``m`` of length E extends to ``concat(m, [1])`` and is gathered per entry.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import NumericalError
from ..numcore import ops
from ..numcore.sparse import SparseMatrix
from ..numcore.tensor import Tensor


def estimate_lambda_max(L: sp.csr_matrix, tol: float = 1e-12, min_iter: int = 50,
                        max_iter: int = 10000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Uses the Rayleigh quotient; runs at least ``min_iter`` iterations and
    stops when its relative change drops below ``tol``.
    """
    n = L.shape[0]
    if n == 0:
        return 0.0
    v = np.random.default_rng(0).random(n) + 0.5
    v /= np.linalg.norm(v)
    lam_old = 0.0
    lam = 0.0
    for it in range(max_iter):
        w = L @ v
        lam = float(v @ w)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if it >= min_iter and abs(lam - lam_old) <= tol * abs(lam):
            break
        lam_old = lam
    return lam


class GraphStructure:
    """Operators for GCN, Chebyshev, attention and pooling layers.

    Parameters
    ----------
    n : int
        Number of nodes.
    u, v, w : arrays
        Undirected edges with u < v and their weights.
    edge_ids : array, optional
        Mask index of every undirected edge (defaults to ``arange``).
    n_mask_edges : int, optional
        Length of the edge-mask vector (defaults to the edge count).
    graph_offsets : array, optional
        Node offsets of the disjoint graphs for readout (defaults to one graph).
    """

    def __init__(self, n, u, v, w, edge_ids=None, n_mask_edges=None, graph_offsets=None,
                 lambda_max=None):
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        self.n = int(n)
        self.u, self.v, self.w = u, v, w
        self.edge_ids_und = np.arange(u.size) if edge_ids is None else np.asarray(edge_ids, dtype=np.int64)
        self.n_mask_edges = u.size if n_mask_edges is None else int(n_mask_edges)
        self.graph_offsets = (np.array([0, self.n]) if graph_offsets is None
                              else np.asarray(graph_offsets, dtype=np.int64))
        self._lambda_max = lambda_max
        self._lambda_source: GraphStructure | None = None
        self._cache: dict = {}

        node = np.arange(self.n)
        rows = np.concatenate([u, v, node])
        cols = np.concatenate([v, u, node])
        vals = np.concatenate([w, w, np.ones(self.n)])
        eids = np.concatenate([self.edge_ids_und, self.edge_ids_und,
                               np.full(self.n, self.n_mask_edges, dtype=np.int64)])
        order = np.lexsort((cols, rows))
        rows, cols, vals, eids = rows[order], cols[order], vals[order], eids[order]
        offsets = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.n), out=offsets[1:])
        self.pattern = SparseMatrix(self.n, self.n, offsets, cols, vals)
        self.rows = rows
        self.cols = cols
        self.weights = vals
        self.edge_ids = eids
        self.is_self = rows == cols

    @classmethod
    def from_graph(cls, g, use_edge_weights: bool = True) -> "GraphStructure":
        u, v, w = g.edges()
        if not use_edge_weights:
            w = np.ones_like(w)
        return cls(g.n_nodes, u, v, w)

    @property
    def n_graphs(self) -> int:
        return self.graph_offsets.size - 1

    @property
    def offsets(self) -> np.ndarray:
        return self.pattern.row_offsets

    # -- operator values ----------------------------------------------------------

    @property
    def gcn_values(self) -> np.ndarray:
        """Entries of D^-1/2 (A + I) D^-1/2."""
        if "gcn" not in self._cache:
            deg = np.bincount(self.rows, weights=self.weights, minlength=self.n)
            if np.any(deg <= 0):
                raise NumericalError("nonpositive node degree in GCN normalization "
                                     "(negative edge weights); raise the similarity threshold")
            dinv = 1.0 / np.sqrt(deg)
            self._cache["gcn"] = self.weights * dinv[self.rows] * dinv[self.cols]
        return self._cache["gcn"]

    @property
    def laplacian_values(self) -> np.ndarray:
        """Entries of L_sym = I - D^-1/2 A D^-1/2 (isolated nodes keep diagonal 1)."""
        if "lap" not in self._cache:
            a = np.where(self.is_self, 0.0, self.weights)
            deg = np.bincount(self.rows, weights=a, minlength=self.n)
            with np.errstate(divide="ignore"):
                dinv = np.where(deg > 0, 1.0 / np.sqrt(np.abs(deg)), 0.0)
            vals = -a * dinv[self.rows] * dinv[self.cols]
            vals[self.is_self] = 1.0
            self._cache["lap"] = vals
        return self._cache["lap"]

    @property
    def lambda_max(self) -> float:
        if self._lambda_max is None and self._lambda_source is not None:
            self._lambda_max = self._lambda_source.lambda_max
        if self._lambda_max is None:
            L = self.pattern.with_values(self.laplacian_values).to_scipy()
            self._lambda_max = estimate_lambda_max(L)
        return self._lambda_max

    @property
    def cheby_values(self) -> np.ndarray:
        """Entries of the rescaled Laplacian 2 L_sym / lambda_max - I."""
        if "cheby" not in self._cache:
            lam = self.lambda_max
            if lam <= 0:
                raise NumericalError("Laplacian has no positive eigenvalue")
            vals = 2.0 * self.laplacian_values / lam
            vals[self.is_self] -= 1.0
            self._cache["cheby"] = vals
        return self._cache["cheby"]

    @property
    def attr_values(self) -> np.ndarray:
        """Edge attribute per entry (edge weight; 0 on self-loops)."""
        return np.where(self.is_self, 0.0, self.weights)

    def operator(self, name: str) -> SparseMatrix:
        key = "op_" + name
        if key not in self._cache:
            if name not in ("gcn", "cheby"):
                raise ValueError(f"unknown operator {name!r}")
            vals = self.gcn_values if name == "gcn" else self.cheby_values
            self._cache[key] = self.pattern.with_values(vals)
        return self._cache[key]

    # -- masking ---------------------------------------------------------------------

    def entry_mask(self, edge_mask: Tensor) -> Tensor:
        """Per-entry multiplier from an undirected edge mask (self-loops get 1)."""
        ext = ops.concat([edge_mask, Tensor(np.ones(1))], axis=0)
        return ops.gather_rows(ext, self.edge_ids)

    def propagate(self, name: str, h: Tensor, edge_mask: Tensor | None = None) -> Tensor:
        if edge_mask is None:
            return ops.spmm(self.operator(name), h)
        base = Tensor(self.operator(name).values)
        return ops.spmm(self.pattern, h, values=ops.mul(base, self.entry_mask(edge_mask)))

    # -- derived structures -------------------------------------------------------------

    def subgraph(self, idx) -> "GraphStructure":
        """Induced subgraph on ``idx``; new node i is old node idx[i]."""
        idx = np.asarray(idx, dtype=np.int64)
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[idx] = np.arange(idx.size)
        keep = (pos[self.u] >= 0) & (pos[self.v] >= 0)
        a, b = pos[self.u[keep]], pos[self.v[keep]]
        return GraphStructure(idx.size, np.minimum(a, b), np.maximum(a, b), self.w[keep],
                              edge_ids=self.edge_ids_und[keep], n_mask_edges=self.n_mask_edges)

    def union(self, copies: int) -> "GraphStructure":
        """Disjoint union of ``copies`` copies; edge ids are shared across copies."""
        key = ("union", copies)
        if key not in self._cache:
            shift = np.repeat(np.arange(copies) * self.n, self.u.size)
            self._cache[key] = GraphStructure(
                self.n * copies,
                np.tile(self.u, copies) + shift, np.tile(self.v, copies) + shift,
                np.tile(self.w, copies), edge_ids=np.tile(self.edge_ids_und, copies),
                n_mask_edges=self.n_mask_edges, graph_offsets=np.arange(copies + 1) * self.n,
            )
            # identical spectrum up to multiplicity
            self._cache[key]._lambda_source = self
        return self._cache[key]
