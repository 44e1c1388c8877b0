"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
Every command writes ``config.echo.json`` into its output directory; for
``cv`` and ``ablate`` that file is a complete experiment config that can be
passed back through ``--config`` to reproduce the run.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .data import read_csv, write_csv
from .errors import ConfigError, DataError, OmicGraphError
from .evaluation.cv import stratified_kfold
from .evaluation.matrix import ExperimentConfig, default_workers, prepare_features, run_matrix
from .evaluation.metrics import auc, f1
from .evaluation.report import read_reports, write_report
from .graphs import build_ssn, load_min, randomize_edges, read_graph, write_graph
from .models.model import KINDS, ModelSpec
from .preprocess import ZScoreScaler
from .synth import PRESETS, SynthConfig, preset, synth
from .train import (TrainConfig, predict_graphs, predict_nodes, train_graph_model,
                    train_node_model)

log = logging.getLogger("omicgraph")


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.echo.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def universal(f):
    f = click.option("--out-dir", type=click.Path(file_okay=False), default="out", show_default=True,
                     help="Directory for all outputs.")(f)
    f = click.option("--workers", type=int, default=None,
                     help="Worker processes (cv/ablate; default: available CPUs).")(f)
    f = click.option("--seed", type=int, default=0, show_default=True)(f)
    return f


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="More logging on standard error.")
def cli(verbose):
    """Graph representation learning on omics case/control data."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s",
                        force=True)


# -- synth ---------------------------------------------------------------------------------------


@cli.command("synth")
@click.option("--preset", "preset_name", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--n-samples", type=int)
@click.option("--n-features", type=int)
@click.option("--n-informative", type=int)
@click.option("--class-separation", type=float)
@click.option("--block-size", "feature_correlation_block_size", type=int)
@click.option("--module-size", "planted_network_module_size", type=int,
              help="Emit an interaction network with a planted module of this size.")
@click.option("--label-noise", type=float)
@click.option("--stem", default="synth", show_default=True)
@universal
def synth_cmd(preset_name, stem, seed, workers, out_dir, **fields):
    """Generate a synthetic dataset (CSV, manifest, optional edge list)."""
    overrides = {k: v for k, v in fields.items() if v is not None}
    overrides["seed"] = seed
    cfg = preset(preset_name, **overrides) if preset_name else SynthConfig(**overrides)
    out = Path(out_dir)
    paths = synth(cfg).write(out, stem)
    _echo_config(out, {"command": "synth", "preset": preset_name, "config": cfg.to_dict(),
                       "outputs": {k: p.name for k, p in paths.items()}})


# -- preprocess ----------------------------------------------------------------------------------


@cli.command("preprocess")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--aliases", type=click.Path(), default=None)
@click.option("--low-variance", type=float, default=1e-8, show_default=True)
@click.option("--max-abs-r", type=float, default=0.95, show_default=True)
@click.option("--confounder", default=None, help="Feature id of a confounder to filter against.")
@click.option("--confounder-min-abs-r", type=float, default=0.2, show_default=True)
@click.option("--blocklist", default="", help="Comma-separated feature ids to drop.")
@click.option("--lasso/--no-lasso", default=True, show_default=True)
@click.option("--inner-folds", type=int, default=5, show_default=True)
@universal
def preprocess_cmd(data_path, aliases, low_variance, max_abs_r, confounder, confounder_min_abs_r,
                   blocklist, lasso, inner_folds, seed, workers, out_dir):
    """Filter, z-score and LASSO-select features, fitted on all rows of DATA."""
    from .evaluation.matrix import PreprocessConfig
    m = read_csv(data_path, aliases)
    pre = PreprocessConfig(low_variance=low_variance, max_abs_r=max_abs_r, confounder=confounder,
                           confounder_min_abs_r=confounder_min_abs_r,
                           blocklist=[b for b in blocklist.split(",") if b],
                           lasso_inner_folds=inner_folds)
    out_m, info = prepare_features(m, np.arange(m.n_samples), pre, lasso, seed)
    out = Path(out_dir)
    _echo_config(out, {"command": "preprocess", "data": str(data_path), "aliases": aliases,
                       "lasso": lasso, "seed": seed, "preprocess": pre.__dict__})
    write_csv(out_m, out / "preprocessed.csv")
    (out / "preprocess.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


# -- build-graph ---------------------------------------------------------------------------------


@cli.command("build-graph")
@click.option("--kind", type=click.Choice(["ssn", "min", "random"]), required=True)
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--threshold", type=float, default=None, help="Similarity threshold (ssn, random).")
@click.option("--edges", type=click.Path(), default=None, help="Edge list (min).")
@click.option("--aliases", type=click.Path(), default=None)
@click.option("--min-confidence", type=float, default=0.7, show_default=True)
@click.option("--degree-preserving", is_flag=True, help="Rewire by degree-preserving swaps (random).")
@universal
def build_graph_cmd(kind, data_path, threshold, edges, aliases, min_confidence, degree_preserving,
                    seed, workers, out_dir):
    """Build an SSN, an interaction network, or a random-edge control."""
    out = Path(out_dir)
    m = read_csv(data_path, aliases)
    extra = {}
    if kind in ("ssn", "random"):
        if threshold is None:
            raise ConfigError("--threshold is required for --kind ssn/random")
        g = build_ssn(m, threshold)
        if kind == "random":
            g = randomize_edges(g, seed, degree_preserving=degree_preserving)
    else:
        if edges is None:
            raise ConfigError("--edges is required for --kind min")
        g, idmap, sub = load_min(edges, m, min_confidence, aliases)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(sub, out / "graph_features.csv")
        extra = {"matched": len(idmap.pairs), "unmatched_features": len(idmap.unmatched_features),
                 "unmatched_nodes": len(idmap.unmatched_nodes)}
    _echo_config(out, {"command": "build-graph", "kind": kind, "data": str(data_path),
                       "threshold": threshold, "edges": edges, "aliases": aliases,
                       "min_confidence": min_confidence, "degree_preserving": degree_preserving,
                       "seed": seed, **extra})
    write_graph(g, out / "graph.tsv", out / "graph.json")


# -- train ---------------------------------------------------------------------------------------


def _model_spec(model: str, task: str, depth: int, hidden: int, heads, order, pool_ratio, dropout,
                seed) -> ModelSpec:
    kind = model.upper()
    kw = dict(depth=depth, hidden_dim=hidden, task=task, dropout_p=dropout, seed=seed)
    if kind == "CHEBY" and order is not None:
        kw["cheby_order"] = order
    if kind in ("GAT", "TRANSFORMER") and heads is not None:
        kw["heads"] = heads
    if kind == "GRAPH_UNET" and pool_ratio is not None:
        kw["pool_ratio"] = pool_ratio
    return ModelSpec.make(kind, **kw)


@cli.command("train")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--pipeline", type=click.Choice(["ssn", "min"]), default="ssn", show_default=True)
@click.option("--model", type=click.Choice(KINDS, case_sensitive=False), default="GCN", show_default=True)
@click.option("--graph", "graph_path", type=click.Path(), default=None,
              help="Prebuilt graph TSV (its JSON header is read alongside).")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--edges", type=click.Path(), default=None)
@click.option("--aliases", type=click.Path(), default=None)
@click.option("--min-confidence", type=float, default=0.7, show_default=True)
@click.option("--lasso/--no-lasso", default=True, show_default=True)
@click.option("--depth", type=int, default=2, show_default=True)
@click.option("--hidden", type=int, default=64, show_default=True)
@click.option("--heads", type=int, default=None)
@click.option("--cheby-order", type=int, default=None)
@click.option("--pool-ratio", type=float, default=None)
@click.option("--dropout", type=float, default=0.5, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--weight-decay", type=float, default=5e-4, show_default=True)
@click.option("--epochs", type=int, default=500, show_default=True)
@click.option("--patience", type=int, default=50, show_default=True)
@click.option("--k", type=int, default=10, show_default=True, help="Folds used to carve the split.")
@click.option("--fold", type=int, default=0, show_default=True, help="Which fold is held out.")
@click.option("--positional", is_flag=True, help="Append a one-hot node id (min).")
@universal
def train_cmd(data_path, pipeline, model, graph_path, threshold, edges, aliases, min_confidence,
              lasso, depth, hidden, heads, cheby_order, pool_ratio, dropout, lr, weight_decay,
              epochs, patience, k, fold, positional, seed, workers, out_dir):
    """Train one model on one held-out fold and save checkpoint, history and metrics."""
    from .evaluation.matrix import PreprocessConfig
    out = Path(out_dir)
    m = read_csv(data_path, aliases)
    folds = stratified_kfold(m.labels, k, seed)
    if not 0 <= fold < k:
        raise ConfigError(f"--fold must lie in [0, {k})")
    mask = folds[fold]
    cfg = TrainConfig(lr, weight_decay, epochs, patience, seed)
    task = "NODE_CLS" if pipeline == "ssn" else "GRAPH_CLS"
    spec = _model_spec(model, task, depth, hidden, heads, cheby_order, pool_ratio, dropout, seed)
    _echo_config(out, {"command": "train", **click.get_current_context().params})
    if pipeline == "ssn":
        X, info = prepare_features(m, mask.train, PreprocessConfig(), lasso, seed)
        g = read_graph(graph_path) if graph_path else build_ssn(X, threshold)
        trained, hist = train_node_model(spec, g, X, mask, cfg)
        scores = predict_nodes(trained, g, X.values)[mask.test]
        labels = X.labels[mask.test]
        features = X.feature_ids
    else:
        if edges is None and graph_path is None:
            raise ConfigError("--edges (or --graph) is required for the min pipeline")
        if graph_path:
            g = read_graph(graph_path)
            if m.n_features != g.n_nodes:
                raise DataError("with --graph, data columns must follow graph node order "
                                "(use graph_features.csv from build-graph)")
            sub = m
        else:
            g, _, sub = load_min(edges, m, min_confidence, aliases)
        scaler = ZScoreScaler().fit(sub.values[mask.train])
        X = sub.with_values(scaler.transform(sub.values))
        trained, hist = train_graph_model(spec, g, X, mask, cfg, positional)
        scores = predict_graphs(trained, g, X.values[mask.test], cfg.batch_size, positional)
        labels = X.labels[mask.test]
        features = X.feature_ids
        info = {"n_features": X.n_features}
    trained.save(out / "model.bin")
    hist.to_csv(out / "history.csv")
    write_csv(X, out / "features.csv")
    write_graph(g, out / "graph.tsv", out / "graph.json")
    metrics = {"auc": auc(scores, labels), "f1": f1(scores, labels), "fold": fold,
               "best_epoch": hist.best_epoch, "n_features": len(features), **info}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")


# -- cv / ablate ---------------------------------------------------------------------------------


def _experiment(config_path, dataset, overrides: dict, seed, workers, cells=None) -> ExperimentConfig:
    base: dict = {}
    if config_path:
        try:
            base = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("experiment config must be a JSON object")
    if dataset:
        base["dataset"] = dataset
    for key, val in overrides.items():
        if val is None:
            continue
        section, _, name = key.partition(".")
        if name:
            base.setdefault(section, {})[name] = val
        else:
            base[section] = val
    if seed is not None:
        base["seed"] = seed
    base["workers"] = workers if workers is not None else base.get("workers", default_workers())
    if cells is not None:
        base["cells"] = cells
    cfg = ExperimentConfig.from_dict(base)
    if not Path(cfg.dataset).exists():
        raise DataError(f"dataset not found: {cfg.dataset}")
    cfg.dataset = str(Path(cfg.dataset).resolve())
    for attr in ("edges", "aliases"):
        val = getattr(cfg.min, attr)
        if val:
            setattr(cfg.min, attr, str(Path(val).resolve()))
    return cfg


def _split_list(text):
    return None if text is None else [t.strip() for t in text.split(",") if t.strip()]


def experiment_options(f):
    f = click.option("--config", "config_path", type=click.Path(), default=None,
                     help="Experiment config JSON; flags override its values.")(f)
    f = click.option("--dataset", type=click.Path(), default=None)(f)
    f = click.option("--k", type=int, default=None)(f)
    f = click.option("--epochs", type=int, default=None)(f)
    f = click.option("--lr", type=float, default=None)(f)
    f = click.option("--patience", type=int, default=None)(f)
    f = click.option("--hidden", type=int, default=None)(f)
    f = click.option("--thresholds", default=None, help="Comma-separated SSN thresholds.")(f)
    f = click.option("--edges", type=click.Path(), default=None, help="Interaction edge list.")(f)
    f = click.option("--aliases", type=click.Path(), default=None)(f)
    return f


def _overrides(k, epochs, lr, patience, hidden, thresholds, edges, aliases) -> dict:
    th = _split_list(thresholds)
    return {"k": k, "train.max_epochs": epochs, "train.learning_rate": lr,
            "train.patience": patience, "model.hidden_dim": hidden,
            "thresholds": [float(t) for t in th] if th else None,
            "min.edges": edges, "min.aliases": aliases}


def _run_experiment(cfg: ExperimentConfig, out: Path, command: str) -> None:
    _echo_config(out, cfg.to_dict())
    dataset = read_csv(cfg.dataset)
    reports = run_matrix(dataset, cfg, out)
    for r in reports:
        log.info("%s %s: AUC %.3f F1 %.3f", command, r.cell_id, r.auc_mean, r.f1_mean)


@cli.command("cv")
@experiment_options
@click.option("--models", default=None, help="Comma-separated model names.")
@click.option("--pipeline", default=None, help="Comma-separated pipelines (ssn, min).")
@universal
def cv_cmd(config_path, dataset, k, epochs, lr, patience, hidden, thresholds, edges, aliases, models,
           pipeline, seed, workers, out_dir):
    """Cross-validate the configured cells and write report.{md,csv,json}."""
    ov = _overrides(k, epochs, lr, patience, hidden, thresholds, edges, aliases)
    ov.update(models=_split_list(models), pipeline=_split_list(pipeline))
    cfg = _experiment(config_path, dataset, ov, seed, workers)
    _run_experiment(cfg, Path(out_dir), "cv")


@cli.command("ablate")
@experiment_options
@universal
def ablate_cmd(config_path, dataset, k, epochs, lr, patience, hidden, thresholds, edges, aliases,
               seed, workers, out_dir):
    """Run the full ablation inventory (plus the network rows when an edge list is given)."""
    ov = _overrides(k, epochs, lr, patience, hidden, thresholds, edges, aliases)
    probe = {}
    if config_path and Path(config_path).exists():
        try:
            probe = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError:
            probe = {}
    has_edges = bool(edges or (isinstance(probe, dict) and (probe.get("min") or {}).get("edges")))
    cfg = _experiment(config_path, dataset, ov, seed, workers, cells="full" if has_edges else "table2")
    _run_experiment(cfg, Path(out_dir), "ablate")


# -- explain -------------------------------------------------------------------------------------


@cli.command("explain")
@click.option("--checkpoint", type=click.Path(), required=True, help="model.bin written by train.")
@click.option("--data", "data_path", type=click.Path(), required=True,
              help="Model-ready features (features.csv written by train).")
@click.option("--graph", "graph_path", type=click.Path(), required=True)
@click.option("--target", "targets", multiple=True, required=True,
              help="Sample id to explain (repeatable).")
@click.option("--iters", type=int, default=300, show_default=True)
@click.option("--sparsity", type=float, default=0.005, show_default=True)
@click.option("--entropy", type=float, default=0.1, show_default=True)
@click.option("--lr", type=float, default=0.01, show_default=True)
@click.option("--top-k", type=int, default=20, show_default=True)
@universal
def explain_cmd(checkpoint, data_path, graph_path, targets, iters, sparsity, entropy, lr, top_k,
                seed, workers, out_dir):
    """Learn edge/feature masks for each target and export ranked JSON."""
    from .explain import explain, mean_explanation
    from .models.model import Model
    out = Path(out_dir)
    if not Path(checkpoint).exists():
        raise DataError(f"checkpoint not found: {checkpoint}")
    model = Model.load(checkpoint)
    m = read_csv(data_path)
    g = read_graph(graph_path)
    _echo_config(out, {"command": "explain", "checkpoint": str(checkpoint), "data": str(data_path),
                       "graph": str(graph_path), "targets": list(targets), "iters": iters,
                       "sparsity": sparsity, "entropy": entropy, "lr": lr, "top_k": top_k,
                       "seed": seed})
    exps = []
    for t in targets:
        e = explain(model, g, m, t, iters, sparsity, entropy, lr)
        e.to_json(out / f"explanation_{t}.json", top_k)
        exps.append(e)
    if len(exps) > 1:
        mean_explanation(exps).to_json(out / "explanation_mean.json", top_k)


# -- report --------------------------------------------------------------------------------------


@cli.command("report")
@click.option("--input", "input_path", type=click.Path(), required=True, help="report.json")
@click.option("--format", "fmt", type=click.Choice(["md", "csv", "json"]), multiple=True,
              default=("md",), show_default=True)
@click.option("--title", default="Cross-validated performance", show_default=True)
@universal
def report_cmd(input_path, fmt, title, seed, workers, out_dir):
    """Re-render a report.json as markdown/csv/json."""
    if not Path(input_path).exists():
        raise DataError(f"report not found: {input_path}")
    try:
        doc = json.loads(Path(input_path).read_text())
        reports = read_reports(input_path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{input_path} is not a report JSON: {exc}") from None
    out = Path(out_dir)
    _echo_config(out, {"command": "report", "input": str(input_path), "format": list(fmt),
                       "title": title})
    for f in fmt:
        write_report(reports, out / f"report.{f}", title=title, synthetic=doc.get("synthetic", True))


# -- entry point ---------------------------------------------------------------------------------


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="omicgraph", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.exceptions.ClickException as exc:
        # usage errors are configuration errors
        exc.show()
        return 1
    except OmicGraphError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
