"""Sample-similarity and molecular-interaction graphs.

Graphs are undirected, weighted, without self-loops, and stored as a
symmetric CSR adjacency. Nodes are samples for an SSN and molecules for a
MIN.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FeatureMatrix
from .errors import ConfigError, DataError
from .numcore.sparse import SparseMatrix

log = logging.getLogger(__name__)

KINDS = ("ssn", "min", "random")


@dataclass(eq=False)
class SimGraph:
    n_nodes: int
    adjacency: SparseMatrix
    node_ids: list[str]
    kind: str = "ssn"
    threshold: float | None = None
    seed: int | None = None
    _structures: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown graph kind {self.kind!r}")
        if len(self.node_ids) != self.n_nodes or self.adjacency.shape != (self.n_nodes, self.n_nodes):
            raise DataError("adjacency / node_ids disagree with n_nodes")

    @classmethod
    def from_edges(cls, n_nodes: int, u, v, w, node_ids=None, **kw) -> "SimGraph":
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        w = np.asarray(w, dtype=np.float64)
        if np.any(u == v):
            raise DataError("self-loops are not allowed")
        adj = SparseMatrix.from_coo(np.concatenate([u, v]), np.concatenate([v, u]),
                                    np.concatenate([w, w]), (n_nodes, n_nodes))
        if node_ids is None:
            node_ids = [str(i) for i in range(n_nodes)]
        return cls(n_nodes, adj, list(node_ids), **kw)

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Undirected edges ``(u, v, w)`` with u < v, sorted by (u, v).

        The position in this list is the edge index used by edge masks.
        """
        rows = self.adjacency.rows
        cols = self.adjacency.col_indices
        keep = rows < cols
        return rows[keep], cols[keep], self.adjacency.values[keep]

    @property
    def n_edges(self) -> int:
        return int(np.sum(self.adjacency.rows < self.adjacency.col_indices))

    def to_dense(self) -> np.ndarray:
        return self.adjacency.to_dense()

    def binarized(self) -> "SimGraph":
        u, v, _ = self.edges()
        return SimGraph.from_edges(self.n_nodes, u, v, np.ones(u.size), self.node_ids,
                                   kind=self.kind, threshold=self.threshold, seed=self.seed)

    def structure(self, use_edge_weights: bool = True):
        """Cached propagation operators (see :mod:`omicgraph.models.structure`)."""
        key = bool(use_edge_weights)
        if key not in self._structures:
            from .models.structure import GraphStructure
            self._structures[key] = GraphStructure.from_graph(self, use_edge_weights=key)
        return self._structures[key]


def cosine_similarity(x, y) -> float:
    """(x . y) / (||x|| ||y||), clamped to [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError("cosine_similarity needs equal-length vectors")
    nx, ny = math.sqrt(float(x @ x)), math.sqrt(float(y @ y))
    if nx == 0.0 or ny == 0.0:
        raise DataError("cosine similarity is undefined for a zero vector")
    return min(1.0, max(-1.0, float(x @ y) / (nx * ny)))


def similarity_matrix(X: np.ndarray, sample_ids=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        name = sample_ids[zero[0]] if sample_ids is not None else str(zero[0])
        raise DataError(f"sample {name!r} has an all-zero feature vector; cosine similarity undefined")
    S = (X @ X.T) / np.outer(norms, norms)
    return np.clip(S, -1.0, 1.0)


def build_ssn(m: FeatureMatrix | np.ndarray, s: float, sample_ids=None) -> SimGraph:
    """Edge (i, j), i != j, weighted cs(x_i, x_j) whenever cs(x_i, x_j) >= s."""
    if isinstance(m, FeatureMatrix):
        X, sample_ids = m.values, m.sample_ids
    else:
        X = np.asarray(m, dtype=np.float64)
        sample_ids = sample_ids if sample_ids is not None else [str(i) for i in range(X.shape[0])]
    n = X.shape[0]
    if n < 2:
        raise DataError("an SSN needs at least 2 samples")
    if not -1.0 < s:
        raise ConfigError("similarity threshold must be > -1")
    S = similarity_matrix(X, sample_ids)
    iu, ju = np.triu_indices(n, k=1)
    w = S[iu, ju]
    keep = w >= s
    return SimGraph.from_edges(n, iu[keep], ju[keep], w[keep], sample_ids, kind="ssn", threshold=float(s))


# -- molecular interaction networks ------------------------------------------------

@dataclass
class IdMap:
    pairs: list[tuple[str, str]]
    unmatched_features: list[str]
    unmatched_nodes: list[str]
    dropped_ambiguous: list[str] = field(default_factory=list)

    @property
    def feature_to_node(self) -> dict[str, str]:
        return dict(self.pairs)


def read_edge_list(path) -> tuple[list[str], list[str], np.ndarray]:
    """Parse ``node_a node_b score`` rows (tab or whitespace separated).

    Scores on a 0-1000 scale are detected (any score > 1) and divided by
    1000. A non-numeric score on the first line is treated as a header.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"edge file not found: {path}")
    a, b, scores = [], [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            parts = [p.strip() for p in parts]
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                score = float(parts[2])
            except ValueError:
                if lineno == 1:
                    continue
                raise DataError(f"{path}:{lineno}: score {parts[2]!r} is not a number") from None
            if not math.isfinite(score) or score < 0:
                raise DataError(f"{path}:{lineno}: invalid score {parts[2]!r}")
            a.append(parts[0])
            b.append(parts[1])
            scores.append(score)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size and scores.max() > 1.0:
        if scores.max() > 1000.0:
            raise DataError(f"{path}: scores exceed 1000")
        scores = scores / 1000.0
    return a, b, scores


def match_features(feature_ids: list[str], node_set: set[str], aliases: dict[str, dict[str, str]],
                   namespaces: list[str] | None = None) -> IdMap:
    """Map feature ids onto network node ids.

    Direct id match first, then each alias namespace in priority order; the
    first hit wins. Nodes claimed by more than one feature are dropped.
    """
    if namespaces is None:
        namespaces = sorted({ns for d in aliases.values() for ns in d})
    claim: dict[str, str] = {}
    for fid in feature_ids:
        if fid in node_set:
            claim[fid] = fid
            continue
        for ns in namespaces:
            alias = aliases.get(fid, {}).get(ns)
            if alias is not None and alias in node_set:
                claim[fid] = alias
                break
    by_node: dict[str, list[str]] = {}
    for fid, node in claim.items():
        by_node.setdefault(node, []).append(fid)
    ambiguous = sorted(f for fids in by_node.values() if len(fids) > 1 for f in fids)
    if ambiguous:
        log.warning("dropping %d features with many-to-one node matches", len(ambiguous))
    amb = set(ambiguous)
    pairs = [(f, claim[f]) for f in feature_ids if f in claim and f not in amb]
    matched_nodes = {n for _, n in pairs}
    unmatched_features = [f for f in feature_ids if f not in claim or f in amb]
    unmatched_nodes = sorted(node_set - matched_nodes)
    return IdMap(pairs, unmatched_features, unmatched_nodes, ambiguous)


def load_min(edge_file, features: FeatureMatrix, min_confidence: float = 0.7,
             alias_file=None, namespaces: list[str] | None = None
             ) -> tuple[SimGraph, IdMap, FeatureMatrix]:
    """Interaction network induced on the molecules measured in ``features``.

    Returns the graph (node order = matched feature order), the id mapping,
    and the feature matrix restricted to matched features.
    """
    if not 0.0 <= min_confidence <= 1.0:
        raise ConfigError("min_confidence must lie in [0, 1]")
    a, b, scores = read_edge_list(edge_file)
    aliases = dict(features.id_aliases)
    if alias_file is not None:
        from .data import read_aliases
        for fid, d in read_aliases(alias_file).items():
            aliases.setdefault(fid, {}).update(d)
    node_set = set(a) | set(b)
    idmap = match_features(features.feature_ids, node_set, aliases, namespaces)
    if not idmap.pairs:
        raise DataError("no feature could be matched to a network node")
    node_pos = {node: i for i, (_, node) in enumerate(idmap.pairs)}
    best: dict[tuple[int, int], float] = {}
    for na, nb, sc in zip(a, b, scores):
        if sc < min_confidence or sc <= 0.0 or na == nb:
            continue
        ia, ib = node_pos.get(na), node_pos.get(nb)
        if ia is None or ib is None:
            continue
        key = (min(ia, ib), max(ia, ib))
        if sc > best.get(key, 0.0):
            best[key] = float(sc)
    keys = sorted(best)
    u = np.array([k[0] for k in keys], dtype=np.int64)
    v = np.array([k[1] for k in keys], dtype=np.int64)
    w = np.array([best[k] for k in keys], dtype=np.float64)
    nodes = [node for _, node in idmap.pairs]
    g = SimGraph.from_edges(len(nodes), u, v, w, nodes, kind="min", threshold=float(min_confidence))
    cols = [features.feature_index(f) for f, _ in idmap.pairs]
    return g, idmap, features.columns(cols)


# -- random controls -----------------------------------------------------------------

def _pair_from_index(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Decode row-major upper-triangle pair indices into (i, j) with i < j."""
    k = np.asarray(k, dtype=np.int64)
    total = n * (n - 1) // 2
    # count of pairs starting at rows >= i is (n - i)(n - i - 1)/2
    rem = total - 1 - k
    t = np.floor((np.sqrt(8.0 * rem + 1.0) - 1.0) / 2.0).astype(np.int64)
    # guard against floating error in the square root
    t = np.where((t + 1) * (t + 2) // 2 <= rem, t + 1, t)
    t = np.where(t * (t + 1) // 2 > rem, t - 1, t)
    i = n - 2 - t
    start = total - (n - i) * (n - i - 1) // 2
    j = k - start + i + 1
    return i, j


def randomize_edges(g: SimGraph, seed: int, degree_preserving: bool = False) -> SimGraph:
    """Same nodes and edge count, edges redrawn at random, unit weights.

    By default edges are a uniform draw without replacement over all
    unordered non-self pairs. ``degree_preserving`` instead applies double
    edge swaps, keeping every node degree.
    """
    n, m = g.n_nodes, g.n_edges
    if n == 0:
        raise DataError("cannot randomize an empty graph")
    total = n * (n - 1) // 2
    if m > total:
        raise DataError(f"cannot place {m} edges among {total} node pairs")
    rng = np.random.default_rng(seed)
    if degree_preserving:
        import networkx as nx
        u, v, _ = g.edges()
        G = nx.Graph()
        G.add_nodes_from(range(n))
        G.add_edges_from(zip(u.tolist(), v.tolist()))
        if m >= 2:
            nx.double_edge_swap(G, nswap=m * 10, max_tries=m * 1000, seed=int(rng.integers(2**31)))
        e = np.array(sorted(tuple(sorted(x)) for x in G.edges()), dtype=np.int64).reshape(-1, 2)
        iu, ju = e[:, 0], e[:, 1]
    else:
        k = np.sort(rng.choice(total, size=m, replace=False)) if m else np.zeros(0, dtype=np.int64)
        iu, ju = _pair_from_index(k, n)
    return SimGraph.from_edges(n, iu, ju, np.ones(iu.size), g.node_ids, kind="random",
                               threshold=g.threshold, seed=int(seed))


# -- export ----------------------------------------------------------------------------

def write_graph(g: SimGraph, tsv_path, json_path=None) -> None:
    tsv_path = Path(tsv_path)
    u, v, w = g.edges()
    with tsv_path.open("w") as fh:
        for a, b, x in zip(u, v, w):
            fh.write(f"{g.node_ids[a]}\t{g.node_ids[b]}\t{float(x)!r}\n")
    json_path = Path(json_path) if json_path else tsv_path.with_suffix(".json")
    header = {"n_nodes": g.n_nodes, "n_edges": g.n_edges, "kind": g.kind,
              "threshold": g.threshold, "seed": g.seed, "node_ids": g.node_ids}
    json_path.write_text(json.dumps(header, indent=2) + "\n")


def read_graph(tsv_path, json_path=None) -> SimGraph:
    tsv_path = Path(tsv_path)
    json_path = Path(json_path) if json_path else tsv_path.with_suffix(".json")
    header = json.loads(json_path.read_text())
    ids = header["node_ids"]
    pos = {nid: i for i, nid in enumerate(ids)}
    a, b, w = [], [], []
    with tsv_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{tsv_path}:{lineno}: expected 3 tab-separated fields")
            a.append(parts[0])
            b.append(parts[1])
            w.append(float(parts[2]))
    try:
        u = np.array([pos[x] for x in a], dtype=np.int64)
        v = np.array([pos[x] for x in b], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"{tsv_path}: node {exc} missing from header") from None
    return SimGraph.from_edges(header["n_nodes"], u, v, w, ids, kind=header["kind"],
                               threshold=header.get("threshold"), seed=header.get("seed"))
