import numpy as np
import pytest

from omicgraph.data import FeatureMatrix
from omicgraph.graphs import SimGraph
from omicgraph.models.structure import GraphStructure


def random_graph(rng, n, p=0.4, weighted=True) -> SimGraph:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    w = rng.uniform(0.2, 1.0, keep.sum()) if weighted else np.ones(keep.sum())
    return SimGraph.from_edges(n, iu[keep], ju[keep], w)


def random_structure(rng, n, p=0.4) -> GraphStructure:
    return random_graph(rng, n, p).structure()


def dense_adjacency(S: GraphStructure) -> np.ndarray:
    A = np.zeros((S.n, S.n))
    A[S.u, S.v] = S.w
    A[S.v, S.u] = S.w
    return A


def make_matrix(X, y=None, prefix="F") -> FeatureMatrix:
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    y = np.arange(n) % 2 if y is None else y
    return FeatureMatrix(X, [f"S{i}" for i in range(n)], [f"{prefix}{j}" for j in range(p)], y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


GRAD_LAYERS = [
    ("MLP", {}), ("GCN", {}),
    ("CHEBY", {"cheby_order": 1}), ("CHEBY", {"cheby_order": 2}), ("CHEBY", {"cheby_order": 3}),
    ("GAT", {"heads": 1}), ("GAT", {"heads": 4}),
    ("TRANSFORMER", {"heads": 1}), ("GRAPH_UNET", {"pool_ratio": 0.5}),
]


def _pool_margin(model, S, x) -> float:
    # gap between the last kept and first dropped top-k score of the U-Net's pool
    from omicgraph.models.layers import gcn_layer
    from omicgraph.numcore import Tensor, ops
    P = model.params
    h = ops.relu(gcn_layer(Tensor(x), S, P["enc0.weight"], P["enc0.bias"])).data
    p = P["pool1.proj"].data
    s = np.sort((h @ p / np.linalg.norm(p)).ravel())[::-1]
    k = int(np.ceil(model.spec.pool_ratio * S.n))
    return np.inf if k >= S.n else float(s[k - 1] - s[k])


def layer_gradcheck(kind, opts, seed):
    """Largest finite-difference error over input and every parameter of a one-layer model.

    Instances are random graphs with n <= 12 and dims <= 4. Returns None when a
    U-Net draw sits within 1e-4 of a top-k tie, where the function is not
    differentiable and the caller should redraw.
    """
    from omicgraph.models import ModelSpec, assemble
    from omicgraph.numcore import Tensor, finite_diff_check, ops
    r = np.random.default_rng(seed)
    n, d_in = int(r.integers(2, 13)), int(r.integers(1, 5))
    hid = 4 if opts.get("heads", 1) == 4 else int(r.integers(1, 5))
    S = random_structure(r, n, 0.4)
    spec = ModelSpec.make(kind, depth=1, hidden_dim=hid, dropout_p=0.0, seed=seed, **opts)
    model = assemble(spec, d_in)
    for p in model.parameters():
        p.data = p.data + r.normal(scale=0.3, size=p.shape)  # nonzero biases, generic attention
    x = r.normal(size=(n, d_in))
    if kind == "GRAPH_UNET" and _pool_margin(model, S, x) < 1e-4:
        return None
    proj = Tensor(r.normal(size=n))

    def loss(xt):
        return ops.sum(ops.mul(model.forward(S, xt), proj))

    err = finite_diff_check(loss, x)
    xt = Tensor(x)
    for name in list(model.params):
        orig = model.params[name]

        def f(t, name=name):
            model.params[name] = t
            return loss(xt)

        err = max(err, finite_diff_check(f, orig.data))
        model.params[name] = orig
    return err


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
