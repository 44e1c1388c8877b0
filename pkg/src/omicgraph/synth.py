"""Synthetic omics-like case/control data with known ground truth.

Samples carry a latent class; informative features are mean-shifted by
``class_separation`` (in noise standard deviations) for latent cases. Noise is
block-correlated; shift directions are random per feature unless
``coherent_shift`` is set (a module moving up as a whole). Observed labels equal the latent class except for a
``label_noise`` fraction flipped symmetrically, which caps the attainable AUC
without weakening the feature structure. In MIN mode an interaction network is
emitted in which a connected module contains every informative feature.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import FeatureMatrix, write_aliases, write_csv
from .errors import ConfigError

NODE_NAMESPACE = "string"


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 200
    n_features: int = 100
    n_informative: int = 10
    class_separation: float = 1.0
    feature_correlation_block_size: int = 10
    planted_network_module_size: int = 0
    seed: int = 0
    label_noise: float = 0.0
    block_correlation: float = 0.3
    background_degree: float = 3.0
    coherent_shift: bool = False

    def __post_init__(self):
        if self.n_samples < 4:
            raise ConfigError("n_samples must be at least 4")
        if not 0 <= self.n_informative <= self.n_features:
            raise ConfigError("n_informative must lie in [0, n_features]")
        if self.class_separation < 0:
            raise ConfigError("class_separation must be nonnegative")
        if self.feature_correlation_block_size < 1:
            raise ConfigError("feature_correlation_block_size must be >= 1")
        if not 0 <= self.label_noise < 0.5:
            raise ConfigError("label_noise must lie in [0, 0.5)")
        if not 0 <= self.block_correlation < 1:
            raise ConfigError("block_correlation must lie in [0, 1)")
        m = self.planted_network_module_size
        if m and not (max(self.n_informative, 2) <= m <= self.n_features):
            raise ConfigError("planted_network_module_size must be >= n_informative (and >= 2) "
                              "and <= n_features")
        if self.background_degree < 0:
            raise ConfigError("background_degree must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "ppmi-like": dict(n_samples=378, n_features=2000, n_informative=50, class_separation=0.8,
                      feature_correlation_block_size=20, label_noise=0.05),
    "luxpark-like": dict(n_samples=1136, n_features=1000, n_informative=30, class_separation=0.35,
                         feature_correlation_block_size=20, label_noise=0.1),
    "min-like": dict(n_samples=200, n_features=60, n_informative=10, class_separation=1.5,
                     feature_correlation_block_size=5, planted_network_module_size=10,
                     label_noise=0.0, coherent_shift=True, background_degree=4.0),
}


def preset(name: str, **overrides) -> SynthConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SynthConfig(**{**PRESETS[name], **overrides})


@dataclass
class SynthResult:
    matrix: FeatureMatrix
    latent: np.ndarray
    informative: list[str]
    edges: list[tuple[str, str, int]] | None = None
    module_nodes: list[str] | None = None
    module_edges: list[tuple[str, str]] | None = None
    config: SynthConfig | None = None

    def manifest(self) -> dict:
        out = {"config": self.config.to_dict(), "informative_features": self.informative,
               "latent_class": self.latent.tolist()}
        if self.edges is not None:
            out["module_nodes"] = self.module_nodes
            out["module_edges"] = [list(e) for e in self.module_edges]
        return out

    def write(self, out_dir, stem: str = "synth") -> dict[str, Path]:
        """Write CSV, manifest and (MIN mode) edge list plus alias file; return the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"features": out / f"{stem}.csv", "manifest": out / f"{stem}.manifest.json"}
        write_csv(self.matrix, paths["features"])
        paths["manifest"].write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        if self.edges is not None:
            paths["edges"] = out / f"{stem}.edges.tsv"
            paths["aliases"] = out / f"{stem}.aliases.tsv"
            with open(paths["edges"], "w") as fh:
                fh.write("node_a\tnode_b\tscore\n")
                for a, b, s in self.edges:
                    fh.write(f"{a}\t{b}\t{s}\n")
            write_aliases(self.matrix.id_aliases, paths["aliases"])
        return paths


def _node_id(j: int) -> str:
    return f"N{j:05d}"


def _min_edges(cfg: SynthConfig, module: np.ndarray, rng: np.random.Generator):
    p = cfg.n_features
    pairs: dict[tuple[int, int], int] = {}

    def put(a, b, score):
        key = (min(a, b), max(a, b))
        if a != b and key not in pairs:
            pairs[key] = int(score)

    # random spanning tree keeps the module connected, plus a few chords
    order = rng.permutation(module)
    for i in range(1, order.size):
        put(order[i], order[rng.integers(i)], rng.integers(800, 1000))
    n_chords = order.size // 2
    for _ in range(n_chords):
        a, b = rng.choice(module, 2, replace=False)
        put(a, b, rng.integers(800, 1000))
    module_keys = set(pairs)
    in_module = set(int(i) for i in module)
    n_bg = int(round(cfg.background_degree * p / 2))
    tries = 0
    while len(pairs) - len(module_keys) < n_bg and tries < 50 * n_bg + 100:
        a, b = rng.integers(p, size=2)
        tries += 1
        if a in in_module and b in in_module:
            continue
        put(a, b, rng.integers(400, 1000))
    return pairs, module_keys


def synth(cfg: SynthConfig) -> SynthResult:
    """Generate a dataset; identical configs give identical outputs."""
    rng = np.random.default_rng(cfg.seed)
    n, p = cfg.n_samples, cfg.n_features
    latent = np.zeros(n, dtype=np.int64)
    latent[n // 2:] = 1
    latent = rng.permutation(latent)

    labels = latent.copy()
    n_flip = int(round(cfg.label_noise * n / 2))
    if n_flip:
        flip = np.concatenate([rng.choice(np.flatnonzero(latent == c), n_flip, replace=False)
                               for c in (0, 1)])
        labels[flip] = 1 - labels[flip]

    b = cfg.feature_correlation_block_size
    rho = cfg.block_correlation
    n_blocks = -(-p // b)
    shared = rng.standard_normal((n, n_blocks))
    block_of = np.arange(p) // b
    X = np.sqrt(rho) * shared[:, block_of] + np.sqrt(1 - rho) * rng.standard_normal((n, p))

    if cfg.planted_network_module_size:
        module = np.sort(rng.choice(p, cfg.planted_network_module_size, replace=False))
        informative = np.sort(rng.choice(module, cfg.n_informative, replace=False))
    else:
        module = None
        informative = np.sort(rng.choice(p, cfg.n_informative, replace=False))
    sign = rng.choice([-1.0, 1.0], size=informative.size)
    if cfg.coherent_shift:
        sign = np.ones(informative.size)
    X[:, informative] += cfg.class_separation * np.outer(latent, sign)

    feature_ids = [f"F{j:05d}" for j in range(p)]
    sample_ids = [f"S{i:05d}" for i in range(n)]
    aliases: dict[str, dict[str, str]] = {}
    edges = module_nodes = module_edges = None
    if module is not None:
        aliases = {feature_ids[j]: {NODE_NAMESPACE: _node_id(j)} for j in range(p)}
        pairs, module_keys = _min_edges(cfg, module, rng)
        edges = [(_node_id(a), _node_id(b_), s) for (a, b_), s in sorted(pairs.items())]
        module_nodes = [_node_id(j) for j in module]
        module_edges = [(_node_id(a), _node_id(b_)) for a, b_ in sorted(module_keys)]
    m = FeatureMatrix(X, sample_ids, feature_ids, labels, aliases)
    return SynthResult(m, latent, [feature_ids[j] for j in informative], edges, module_nodes,
                       module_edges, cfg)
