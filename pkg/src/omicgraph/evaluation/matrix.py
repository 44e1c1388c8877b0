"""The comparative experiment matrix: (model x pipeline x ablation) cells under shared CV folds.

Per fold, an SSN cell runs: filters and z-scoring fitted on the training
split, optional LASSO selection fitted on it, an SSN over all samples at
every candidate threshold (training+validation+test nodes, test labels hidden),
model training with early stopping, and threshold choice by validation AUC.
The random-edge control takes the threshold chosen by the matching SSN cell
and replaces that graph's edges by an equally sized random set. MIN cells
classify each sample as a copy of the fixed interaction network.
"""
from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..data import FeatureMatrix
from ..errors import ConfigError, DataError
from ..graphs import SimGraph, build_ssn, load_min, randomize_edges
from ..models.model import ModelSpec
from ..preprocess import (ConfounderFilter, CorrelationFilter, LassoSelector, LowVarianceFilter,
                          ZScoreScaler)
from ..train import (History, SplitMask, TrainConfig, predict_graphs, predict_nodes,
                     train_graph_model, train_node_model)
from .cv import stratified_kfold
from .metrics import auc, f1
from .report import RunReport, write_report

log = logging.getLogger(__name__)

# name -> (layer kind, display label)
MODELS = {
    "GCN": ("GCN", "GCN"),
    "CHEBY": ("CHEBY", "ChebyNet"),
    "GAT": ("GAT", "GAT"),
    "MLP": ("MLP", "MLP"),
    "GRAPH_UNET": ("GRAPH_UNET", "Graph U-Net"),
    "TRANSFORMER": ("TRANSFORMER", "Graph transformer"),
    "GPST": ("TRANSFORMER", "GPST_GINE"),
    "GTC": ("TRANSFORMER", "GTC"),
}
_MODEL_ALIASES = {"CHEBYNET": "CHEBY", "UNET": "GRAPH_UNET", "GRAPH U-NET": "GRAPH_UNET"}
PIPELINES = ("ssn", "min")
DEFAULT_THRESHOLDS = (0.3, 0.5, 0.7, 0.8, 0.9)


def canonical_model(name: str) -> str:
    key = str(name).upper()
    key = _MODEL_ALIASES.get(key, key)
    if key not in MODELS:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
    return key


@dataclass(frozen=True)
class Cell:
    """One row of a results table."""

    model: str
    pipeline: str = "ssn"
    lasso: bool = True
    depth: int = 2
    random_edges: bool = False
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", canonical_model(self.model))
        self.validate()

    @property
    def layer_kind(self) -> str:
        return MODELS[self.model][0]

    @property
    def cell_id(self) -> str:
        if self.name:
            return self.name
        label = MODELS[self.model][1]
        if not self.lasso and self.pipeline == "ssn":
            label += "_No LASSO"
        if self.depth != 2:
            label += f"_{self.depth} Layers"
        if self.random_edges:
            label += "_random E"
        return label

    @property
    def flags(self) -> dict:
        return {"lasso": self.lasso, "depth": self.depth, "random_edges": self.random_edges}

    def validate(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.depth != 2 and self.layer_kind == "GRAPH_UNET":
            raise ConfigError("depth ablation is not defined for GRAPH_UNET "
                              "(its depth counts pooling levels)")
        if self.random_edges and self.layer_kind == "MLP":
            raise ConfigError("random-edge ablation is meaningless for MLP (it ignores edges)")
        if self.pipeline == "min" and self.lasso:
            raise ConfigError("MIN cells take features through the network mapping; set lasso=false")

    def to_dict(self) -> dict:
        return asdict(self)


def table_ii_cells() -> list[Cell]:
    """The 21 SSN rows: base models, No LASSO, depth and random-edge ablations."""
    rows = [Cell(m) for m in ("CHEBY", "GAT", "GCN", "MLP", "GRAPH_UNET", "GPST", "GTC")]
    rows += [Cell(m, lasso=False) for m in ("CHEBY", "GAT", "GCN")]
    rows += [Cell("CHEBY", depth=10), Cell("CHEBY", depth=50), Cell("GAT", depth=10),
             Cell("GAT", depth=50), Cell("GCN", depth=10), Cell("GCN", depth=50)]
    rows += [Cell(m, random_edges=True) for m in ("CHEBY", "GAT", "GCN", "GPST", "GTC")]
    return rows


def table_i_cells() -> list[Cell]:
    """Graph-classification rows on the interaction network."""
    return [Cell(m, pipeline="min", lasso=False) for m in ("CHEBY", "GCN", "GAT")]


CELL_PRESETS = {"table2": table_ii_cells, "table1": table_i_cells,
                "full": lambda: table_i_cells() + table_ii_cells()}


@dataclass
class ModelDefaults:
    hidden_dim: int = 64
    heads: int = 4
    cheby_order: int = 3
    pool_ratio: float = 0.5
    dropout_p: float = 0.5


@dataclass
class PreprocessConfig:
    low_variance: float | None = 1e-8
    max_abs_r: float | None = 0.95
    confounder: str | None = None
    confounder_min_abs_r: float = 0.2
    blocklist: list[str] = field(default_factory=list)
    lasso_inner_folds: int = 5
    n_lambdas: int = 30
    lambda_min_ratio: float = 1e-3


@dataclass
class MinConfig:
    edges: str | None = None
    aliases: str | None = None
    min_confidence: float = 0.7
    namespaces: list[str] | None = None
    positional: bool = False


def _from_dict(cls, d, where: str):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ExperimentConfig:
    """Everything a run needs; serializes to the JSON echoed into each run directory."""

    dataset: str
    pipeline: list[str] = field(default_factory=lambda: ["ssn"])
    models: list[str] = field(default_factory=lambda: ["GCN"])
    ablations: dict = field(default_factory=dict)
    cells: str | list | None = None
    k: int = 10
    seed: int = 0
    thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    use_edge_weights: bool = True
    val_fraction: float = 0.1
    workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelDefaults = field(default_factory=ModelDefaults)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    min: MinConfig = field(default_factory=MinConfig)
    synthetic: bool = True

    _ABLATION_KEYS = ("no_lasso", "depth", "random_edges")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        d = dict(d)
        if not d.get("dataset"):
            raise ConfigError("experiment config is missing required key 'dataset'")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown experiment config key(s): {', '.join(unknown)}")
        d["train"] = _from_dict(TrainConfig, d.get("train"), "train")
        d["model"] = _from_dict(ModelDefaults, d.get("model"), "model")
        d["preprocess"] = _from_dict(PreprocessConfig, d.get("preprocess"), "preprocess")
        d["min"] = _from_dict(MinConfig, d.get("min"), "min")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for p in self.pipeline:
            if p not in PIPELINES:
                raise ConfigError(f"unknown pipeline {p!r}; choose from {PIPELINES}")
        if not self.thresholds or any(not -1 < s <= 1 for s in self.thresholds):
            raise ConfigError("thresholds must be a nonempty list within (-1, 1]")
        unknown = sorted(set(self.ablations) - set(self._ABLATION_KEYS))
        if unknown:
            raise ConfigError(f"unknown ablation(s): {', '.join(unknown)}")
        cells = self.resolve_cells()
        if not cells:
            raise ConfigError("the configuration produces no cells")
        if any(c.pipeline == "min" for c in cells) and not self.min.edges:
            raise ConfigError("MIN cells need 'min.edges' (an edge-list file)")
        ids = [c.cell_id + "/" + c.pipeline for c in cells]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate cells in configuration")

    def resolve_cells(self) -> list[Cell]:
        if isinstance(self.cells, str):
            if self.cells not in CELL_PRESETS:
                raise ConfigError(f"unknown cell preset {self.cells!r}; choose from {sorted(CELL_PRESETS)}")
            return CELL_PRESETS[self.cells]()
        if isinstance(self.cells, list):
            out = []
            for c in self.cells:
                out.append(c if isinstance(c, Cell) else _from_dict(Cell, c, "cells"))
            return out
        out = []
        abl = self.ablations
        for p in self.pipeline:
            lasso = p == "ssn"
            for m in self.models:
                out.append(Cell(m, pipeline=p, lasso=lasso))
                if abl.get("no_lasso"):
                    if p == "min":
                        raise ConfigError("no_lasso ablation applies to the ssn pipeline only")
                    out.append(Cell(m, pipeline=p, lasso=False))
                for d in abl.get("depth") or []:
                    out.append(Cell(m, pipeline=p, lasso=lasso, depth=int(d)))
                if abl.get("random_edges"):
                    out.append(Cell(m, pipeline=p, lasso=lasso, random_edges=True))
        return out


# -- per-fold work -------------------------------------------------------------------------


def fold_seed(seed: int, fold: int) -> int:
    return seed * 1000 + fold


def prepare_features(m: FeatureMatrix, train_idx: np.ndarray, pre: PreprocessConfig, lasso: bool,
                     seed: int = 0) -> tuple[FeatureMatrix, dict]:
    """Fit filters, scaler and (optionally) LASSO on ``train_idx`` rows; transform every row."""
    X = m.values
    keep = np.arange(m.n_features)
    Xtr = X[train_idx]
    if pre.low_variance is not None:
        keep = keep[LowVarianceFilter(pre.low_variance).fit(Xtr[:, keep]).get_support()]
    if pre.max_abs_r is not None and keep.size > 1:
        keep = keep[CorrelationFilter(pre.max_abs_r).fit(Xtr[:, keep]).get_support()]
    if pre.confounder is not None:
        if pre.confounder not in m.feature_ids:
            raise DataError(f"confounder feature {pre.confounder!r} not in the dataset")
        conf = m.feature_index(pre.confounder)
        cols = list(keep)
        if conf not in cols:
            cols.append(conf)
        cols = np.asarray(cols)
        block = {m.feature_index(f) for f in pre.blocklist if f in m.feature_ids}
        sel = ConfounderFilter(int(np.flatnonzero(cols == conf)[0]), pre.confounder_min_abs_r,
                               tuple(i for i, c in enumerate(cols) if c in block))
        keep = cols[sel.fit(Xtr[:, cols]).get_support()]
    if keep.size == 0:
        raise DataError("no features survive the filters on this training split")
    scaler = ZScoreScaler().fit(Xtr[:, keep])
    Z = scaler.transform(X[:, keep])
    info: dict = {"n_filtered": int(keep.size)}
    if lasso:
        sel = LassoSelector(n_lambdas=pre.n_lambdas, lambda_min_ratio=pre.lambda_min_ratio,
                            inner_folds=pre.lasso_inner_folds, random_state=seed)
        sel.fit(Z[train_idx], m.labels[train_idx])
        chosen = np.flatnonzero(sel.support_)
        keep, Z = keep[chosen], Z[:, chosen]
        info.update(lasso_lambda=sel.alpha_, lasso_fallback=bool(sel.fallback_),
                    selected_features=[m.feature_ids[j] for j in keep])
    info["n_features"] = int(keep.size)
    out = FeatureMatrix(Z, m.sample_ids, [m.feature_ids[j] for j in keep], m.labels,
                        {f: m.id_aliases[f] for f in (m.feature_ids[j] for j in keep)
                         if f in m.id_aliases})
    return out, info


@dataclass
class _FoldContext:
    dataset: FeatureMatrix
    config: ExperimentConfig
    mask: SplitMask
    fold: int
    min_graph: SimGraph | None = None
    min_matrix: FeatureMatrix | None = None


@dataclass
class CellResult:
    auc: float
    f1: float
    info: dict
    history: History


def _spec(cell: Cell, cfg: ExperimentConfig, task: str, seed: int) -> ModelSpec:
    md = cfg.model
    kw = dict(depth=cell.depth, hidden_dim=md.hidden_dim, task=task, dropout_p=md.dropout_p,
              seed=seed)
    if cell.layer_kind == "CHEBY":
        kw["cheby_order"] = md.cheby_order
    if cell.layer_kind in ("GAT", "TRANSFORMER"):
        kw["heads"] = md.heads
    if cell.layer_kind == "GRAPH_UNET":
        kw["pool_ratio"] = md.pool_ratio
    return ModelSpec.make(cell.layer_kind, **kw)


def _better(val: float, best: float) -> bool:
    return not np.isnan(val) and (np.isnan(best) or val > best)


class _FoldRunner:
    """Runs every cell of one fold, sharing preprocessing and graphs between cells."""

    def __init__(self, ctx: _FoldContext):
        self.ctx = ctx
        self.cfg = ctx.config
        self.seed = fold_seed(self.cfg.seed, ctx.fold)
        self.tcfg = replace(self.cfg.train, seed=self.seed)
        self._features: dict[bool, tuple[FeatureMatrix, dict]] = {}
        self._graphs: dict[tuple[bool, float], SimGraph] = {}
        self._tuned: dict[tuple, float] = {}

    def features(self, lasso: bool):
        if lasso not in self._features:
            self._features[lasso] = prepare_features(
                self.ctx.dataset, self.ctx.mask.train, self.cfg.preprocess, lasso, self.seed)
        return self._features[lasso]

    def ssn(self, lasso: bool, s: float) -> SimGraph:
        key = (lasso, s)
        if key not in self._graphs:
            self._graphs[key] = build_ssn(self.features(lasso)[0], s)
        return self._graphs[key]

    def run(self, cell: Cell) -> CellResult:
        if cell.pipeline == "min":
            return self._run_min(cell)
        return self._run_ssn(cell)

    def _score(self, scores: np.ndarray, labels: np.ndarray):
        return auc(scores, labels), f1(scores, labels)

    def _fit_ssn(self, cell: Cell, g: SimGraph, X: FeatureMatrix):
        spec = _spec(cell, self.cfg, "NODE_CLS", self.seed)
        model, hist = train_node_model(spec, g, X, self.ctx.mask, self.tcfg, self.cfg.use_edge_weights)
        return model, hist

    def _tune(self, cell: Cell, X: FeatureMatrix):
        best = (float("nan"), None, None, None, None)
        for s in self.cfg.thresholds:
            g = self.ssn(cell.lasso, s)
            model, hist = self._fit_ssn(cell, g, X)
            if best[1] is None or _better(hist.best_val_auc, best[0]):
                best = (hist.best_val_auc, model, hist, g, s)
        return best

    def _run_ssn(self, cell: Cell) -> CellResult:
        mask = self.ctx.mask
        X, finfo = self.features(cell.lasso)
        info = {k: v for k, v in finfo.items()}
        tune_key = (cell.model, cell.lasso, cell.depth)
        if cell.layer_kind == "MLP":
            g = SimGraph.from_edges(X.n_samples, [], [], [], kind="ssn")
            model, hist = self._fit_ssn(cell, g, X)
            s = None
        elif cell.random_edges:
            if tune_key not in self._tuned:
                self._tuned[tune_key] = self._tune(replace(cell, random_edges=False), X)[4]
            s = self._tuned[tune_key]
            g = randomize_edges(self.ssn(cell.lasso, s), self.seed)
            model, hist = self._fit_ssn(cell, g, X)
        else:
            _, model, hist, g, s = self._tune(cell, X)
            self._tuned[tune_key] = s
        scores = predict_nodes(model, g, X.values, self.cfg.use_edge_weights)[mask.test]
        a, f = self._score(scores, X.labels[mask.test])
        info.update(threshold=s, n_edges=g.n_edges, best_epoch=hist.best_epoch,
                    epochs=len(hist.epoch), val_auc=hist.best_val_auc)
        return CellResult(a, f, info, hist)

    def _run_min(self, cell: Cell) -> CellResult:
        mask = self.ctx.mask
        m = self.ctx.min_matrix
        scaler = ZScoreScaler().fit(m.values[mask.train])
        X = m.with_values(scaler.transform(m.values))
        g = self.ctx.min_graph
        if cell.random_edges:
            g = randomize_edges(g, self.seed)
        spec = _spec(cell, self.cfg, "GRAPH_CLS", self.seed)
        positional = self.cfg.min.positional
        model, hist = train_graph_model(spec, g, X, mask, self.tcfg, positional, self.cfg.use_edge_weights)
        scores = predict_graphs(model, g, X.values[mask.test], self.tcfg.batch_size, positional,
                                self.cfg.use_edge_weights)
        a, f = self._score(scores, X.labels[mask.test])
        info = {"n_nodes": g.n_nodes, "n_edges": g.n_edges, "best_epoch": hist.best_epoch,
                "epochs": len(hist.epoch), "val_auc": hist.best_val_auc}
        return CellResult(a, f, info, hist)


def _cell_order(cells: list[Cell]) -> list[int]:
    # random-edge controls reuse the threshold tuned by their SSN counterpart
    return sorted(range(len(cells)), key=lambda i: cells[i].random_edges)


def _run_fold_job(ctx: _FoldContext, cells: list[Cell]) -> list[CellResult]:
    runner = _FoldRunner(ctx)
    results: list[CellResult | None] = [None] * len(cells)
    for i in _cell_order(cells):
        log.info("fold %d: %s (%s)", ctx.fold, cells[i].cell_id, cells[i].pipeline)
        results[i] = runner.run(cells[i])
    return results


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_matrix(dataset: FeatureMatrix, config: ExperimentConfig, out_dir=None,
               cells: list[Cell] | None = None) -> list[RunReport]:
    """Run every cell on shared stratified folds; one RunReport per cell, in cell order.

    With ``out_dir`` set, writes ``report.{md,csv,json}``, per-fold training
    histories and ``config.resolved.json``.
    """
    config.validate()
    cells = config.resolve_cells() if cells is None else cells
    folds = stratified_kfold(dataset.labels, config.k, config.seed, config.val_fraction)
    min_graph = min_matrix = None
    if any(c.pipeline == "min" for c in cells):
        min_graph, idmap, min_matrix = load_min(config.min.edges, dataset, config.min.min_confidence,
                                                config.min.aliases, config.min.namespaces)
        log.info("interaction network: %d nodes, %d edges (%d features unmatched)",
                 min_graph.n_nodes, min_graph.n_edges, len(idmap.unmatched_features))
    contexts = [_FoldContext(dataset, config, mask, f, min_graph, min_matrix)
                for f, mask in enumerate(folds)]
    if config.workers > 1 and len(contexts) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(contexts))) as pool:
            futures = [pool.submit(_run_fold_job, ctx, cells) for ctx in contexts]
            per_fold = [fut.result() for fut in futures]
    else:
        per_fold = [_run_fold_job(ctx, cells) for ctx in contexts]

    reports = []
    for i, cell in enumerate(cells):
        rs = [per_fold[f][i] for f in range(len(folds))]
        reports.append(RunReport(cell.cell_id, cell.model, cell.pipeline, cell.flags,
                                 [r.auc for r in rs], [r.f1 for r in rs], [r.info for r in rs]))
    if out_dir is not None:
        write_run(Path(out_dir), reports, config, cells, per_fold)
    return reports


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_")


def write_run(out: Path, reports: list[RunReport], config: ExperimentConfig, cells: list[Cell],
              per_fold) -> None:
    out.mkdir(parents=True, exist_ok=True)
    title = "Cross-validated performance"
    for ext in ("md", "csv", "json"):
        write_report(reports, out / f"report.{ext}", title=title, synthetic=config.synthetic)
    hist_dir = out / "histories"
    hist_dir.mkdir(exist_ok=True)
    for i, cell in enumerate(cells):
        for f, fold_results in enumerate(per_fold):
            name = f"{_slug(cell.pipeline + '_' + cell.cell_id)}_fold{f}.csv"
            fold_results[i].history.to_csv(hist_dir / name)
    (out / "config.resolved.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
