"""Declarative model specs and the assembled models built from them."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..numcore import ops
from ..numcore.tensor import Tensor
from . import layers
from .structure import GraphStructure

KINDS = ("MLP", "GCN", "CHEBY", "GAT", "TRANSFORMER", "GRAPH_UNET")
TASKS = ("NODE_CLS", "GRAPH_CLS")

DEFAULT_HEADS = 4
DEFAULT_CHEBY_ORDER = 3
DEFAULT_POOL_RATIO = 0.5


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild a model for a CV fold.

    ``cheby_order`` is set only for CHEBY, ``heads`` only for GAT and
    TRANSFORMER, ``pool_ratio`` only for GRAPH_UNET (``None`` otherwise).
    Use :meth:`make` to fill in the defaults for a kind.
    """

    layer_kind: str
    depth: int = 2
    hidden_dim: int = 64
    cheby_order: int | None = None
    heads: int | None = None
    pool_ratio: float | None = None
    task: str = "NODE_CLS"
    dropout_p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def make(cls, layer_kind: str, **kw) -> "ModelSpec":
        kind = layer_kind.upper()
        if kind == "CHEBY":
            kw.setdefault("cheby_order", DEFAULT_CHEBY_ORDER)
        if kind in ("GAT", "TRANSFORMER"):
            kw.setdefault("heads", DEFAULT_HEADS)
        if kind == "GRAPH_UNET":
            kw.setdefault("pool_ratio", DEFAULT_POOL_RATIO)
        return cls(kind, **kw)

    def validate(self) -> None:
        if self.layer_kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.layer_kind!r}; expected one of {KINDS}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.depth < 1 or self.hidden_dim < 1:
            raise ConfigError("depth and hidden_dim must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError("dropout_p must lie in [0, 1)")
        need_order = self.layer_kind == "CHEBY"
        need_heads = self.layer_kind in ("GAT", "TRANSFORMER")
        need_ratio = self.layer_kind == "GRAPH_UNET"
        if need_order != (self.cheby_order is not None):
            raise ConfigError("cheby_order is required for CHEBY and only for CHEBY")
        if need_heads != (self.heads is not None):
            raise ConfigError("heads is required for GAT/TRANSFORMER and only for them")
        if need_ratio != (self.pool_ratio is not None):
            raise ConfigError("pool_ratio is required for GRAPH_UNET and only for it")
        if need_order and self.cheby_order < 1:
            raise ConfigError("cheby_order must be >= 1")
        if need_heads and (self.heads < 1 or self.hidden_dim % self.heads):
            raise ConfigError("heads must be >= 1 and divide hidden_dim")
        if need_ratio and not 0 < self.pool_ratio <= 1:
            raise ConfigError("pool_ratio must lie in (0, 1]")

    def replace(self, **kw) -> "ModelSpec":
        d = asdict(self)
        d.update(kw)
        return ModelSpec(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str | dict) -> "ModelSpec":
        d = json.loads(text) if isinstance(text, str) else dict(text)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown ModelSpec fields: {sorted(unknown)}")
        return cls(**d)


class Model:
    """Parameters plus a forward pass producing one logit per node or graph."""

    def __init__(self, spec: ModelSpec, in_dim: int, params: dict[str, Tensor]):
        self.spec = spec
        self.in_dim = in_dim
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise DataError(f"parameter {k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def frozen(self) -> "Model":
        """View sharing the parameter arrays but not requiring gradients."""
        return Model(self.spec, self.in_dim,
                     {k: Tensor(p.data, requires_grad=False) for k, p in self.params.items()})

    # -- forward ------------------------------------------------------------------

    def embed(self, S: GraphStructure, x: Tensor, training: bool = False,
              rng: np.random.Generator | None = None, edge_mask: Tensor | None = None) -> Tensor:
        """Node embeddings before the output head."""
        spec, P = self.spec, self.params
        if x.shape[1] != self.in_dim:
            raise DataError(f"model expects {self.in_dim} input features, got {x.shape[1]}")
        if spec.layer_kind == "GRAPH_UNET":
            params = _unet_params(P, spec.depth)
            return layers.graph_unet(x, S, spec.depth, spec.pool_ratio, params, edge_mask)
        h = x
        for i in range(spec.depth):
            h = self._layer(i, h, S, edge_mask)
            if i < spec.depth - 1:
                h = ops.relu(h)
                h = ops.dropout(h, spec.dropout_p, training, rng)
        return h

    def _layer(self, i: int, h: Tensor, S: GraphStructure, edge_mask) -> Tensor:
        kind, P, pre = self.spec.layer_kind, self.params, f"layer{i}."
        if kind == "MLP":
            return layers.linear(h, P[pre + "weight"], P[pre + "bias"])
        if kind == "GCN":
            return layers.gcn_layer(h, S, P[pre + "weight"], P[pre + "bias"], edge_mask)
        if kind == "CHEBY":
            ws = [P[f"{pre}weight{k}"] for k in range(self.spec.cheby_order)]
            return layers.cheby_layer(h, S, ws, P[pre + "bias"], edge_mask)
        if kind == "GAT":
            heads = [(P[f"{pre}head{j}.weight"], P[f"{pre}head{j}.att"]) for j in range(self.spec.heads)]
            return layers.gat_layer(h, S, heads, P[pre + "bias"], concat=True, edge_mask=edge_mask)
        if kind == "TRANSFORMER":
            params = {
                "heads": [{"q": P[f"{pre}head{j}.query"], "k": P[f"{pre}head{j}.key"],
                           "v": P[f"{pre}head{j}.value"], "edge": P[f"{pre}head{j}.edge"]}
                          for j in range(self.spec.heads)],
                "residual": P.get(pre + "residual"),
                "gamma": P[pre + "gamma"], "beta": P[pre + "beta"],
            }
            return layers.transformer_layer(h, S, params, edge_mask)
        raise ConfigError(f"unknown layer kind {kind!r}")

    def forward(self, S: GraphStructure, x, training: bool = False,
                rng: np.random.Generator | None = None, edge_mask: Tensor | None = None) -> Tensor:
        """Logits, shape (n_nodes,) for NODE_CLS or (n_graphs,) for GRAPH_CLS."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if self.spec.task == "GRAPH_CLS" and self.spec.layer_kind == "GRAPH_UNET" and S.n_graphs > 1:
            return self._forward_graphwise(S, x, training, rng, edge_mask)
        h = self.embed(S, x, training, rng, edge_mask)
        if self.spec.task == "GRAPH_CLS":
            h = ops.segment_mean(h, S.graph_offsets)
        out = layers.linear(h, self.params["head.weight"], self.params["head.bias"])
        return ops.reshape(out, (-1,))

    __call__ = forward

    def _forward_graphwise(self, S, x, training, rng, edge_mask):
        # top-k pooling must not mix nodes of different graphs
        n = S.graph_offsets[1] - S.graph_offsets[0]
        base = S.subgraph(np.arange(n))
        outs = []
        for g in range(S.n_graphs):
            lo = S.graph_offsets[g]
            xg = ops.gather_rows(x, np.arange(lo, lo + n))
            h = ops.mean_rows(self.embed(base, xg, training, rng, edge_mask))
            outs.append(layers.linear(h, self.params["head.weight"], self.params["head.bias"]))
        return ops.reshape(ops.concat(outs, axis=0), (-1,))

    # -- checkpoints ----------------------------------------------------------------

    def save(self, path) -> None:
        """Flat little-endian float64 binary at ``path`` plus ``path.json`` manifest."""
        path = Path(path)
        names = list(self.params)
        blob = np.concatenate([self.params[k].data.reshape(-1) for k in names]).astype("<f8")
        path.write_bytes(blob.tobytes())
        manifest = {"spec": json.loads(self.spec.to_json()), "in_dim": self.in_dim,
                    "params": [{"name": k, "shape": list(self.params[k].shape)} for k in names]}
        Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Model":
        path = Path(path)
        manifest = json.loads(Path(str(path) + ".json").read_text())
        spec = ModelSpec.from_json(manifest["spec"])
        model = assemble(spec, manifest["in_dim"])
        flat = np.frombuffer(path.read_bytes(), dtype="<f8")
        expected = sum(int(np.prod(e["shape"])) if e["shape"] else 1 for e in manifest["params"])
        if expected != flat.size:
            raise DataError(f"checkpoint holds {flat.size} values, manifest expects {expected}")
        pos = 0
        state = {}
        for entry in manifest["params"]:
            size = int(np.prod(entry["shape"])) if entry["shape"] else 1
            state[entry["name"]] = flat[pos:pos + size].reshape(entry["shape"]).astype(np.float64)
            pos += size
        model.load_state_dict(state)
        return model


def _unet_params(P: dict[str, Tensor], depth: int) -> dict:
    return {
        "enc": [(P[f"enc{l}.weight"], P[f"enc{l}.bias"]) for l in range(depth + 1)],
        "pool": [P[f"pool{l}.proj"] for l in range(1, depth + 1)],
        "dec": [(P[f"dec{l}.weight"], P[f"dec{l}.bias"]) for l in range(depth)],
    }


def assemble(spec: ModelSpec, in_dim: int) -> Model:
    """Build and initialize a model; weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0."""
    if in_dim < 1:
        raise ConfigError("in_dim must be >= 1")
    rng = np.random.default_rng(spec.seed)
    P: dict[str, Tensor] = {}

    def weight(name, fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        P[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def zeros(name, shape):
        P[name] = Tensor(np.zeros(shape), requires_grad=True)

    hid = spec.hidden_dim
    kind = spec.layer_kind
    if kind == "GRAPH_UNET":
        weight("enc0.weight", in_dim, (in_dim, hid))
        zeros("enc0.bias", (hid,))
        for l in range(1, spec.depth + 1):
            weight(f"pool{l}.proj", hid, (hid, 1))
            weight(f"enc{l}.weight", hid, (hid, hid))
            zeros(f"enc{l}.bias", (hid,))
        for l in range(spec.depth):
            weight(f"dec{l}.weight", hid, (hid, hid))
            zeros(f"dec{l}.bias", (hid,))
    else:
        d_in = in_dim
        for i in range(spec.depth):
            pre = f"layer{i}."
            if kind in ("MLP", "GCN"):
                weight(pre + "weight", d_in, (d_in, hid))
                zeros(pre + "bias", (hid,))
            elif kind == "CHEBY":
                for k in range(spec.cheby_order):
                    weight(f"{pre}weight{k}", d_in, (d_in, hid))
                zeros(pre + "bias", (hid,))
            elif kind == "GAT":
                dh = hid // spec.heads
                for j in range(spec.heads):
                    weight(f"{pre}head{j}.weight", d_in, (d_in, dh))
                    weight(f"{pre}head{j}.att", 2 * dh, (2 * dh, 1))
                zeros(pre + "bias", (hid,))
            elif kind == "TRANSFORMER":
                dh = hid // spec.heads
                for j in range(spec.heads):
                    weight(f"{pre}head{j}.query", d_in, (d_in, dh))
                    weight(f"{pre}head{j}.key", d_in, (d_in, dh))
                    weight(f"{pre}head{j}.value", d_in, (d_in, dh))
                    weight(f"{pre}head{j}.edge", 1, (1,))
                if d_in != hid:
                    weight(pre + "residual", d_in, (d_in, hid))
                P[pre + "gamma"] = Tensor(np.ones(hid), requires_grad=True)
                zeros(pre + "beta", (hid,))
            d_in = hid
    weight("head.weight", hid, (hid, 1))
    zeros("head.bias", (1,))
    return Model(spec, in_dim, P)
