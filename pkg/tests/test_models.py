import numpy as np
import pytest

from omicgraph.errors import ConfigError, DataError, DimensionError
from omicgraph.models import GraphStructure, Model, ModelSpec, assemble
from omicgraph.models.layers import (
    cheby_layer, gat_head, gat_layer, gcn_layer, graph_unet, topk_indices, topk_pool,
    transformer_layer, unpool,
)
from omicgraph.models.structure import estimate_lambda_max
from omicgraph.numcore import Tensor, ops

from conftest import GRAD_LAYERS, dense_adjacency, layer_gradcheck, random_structure


def _path3():
    return GraphStructure(3, [0, 1], [1, 2], [1.0, 1.0])


def _dense_gcn(S):
    A = dense_adjacency(S) + np.eye(S.n)
    d = A.sum(axis=1)
    return A / np.sqrt(np.outer(d, d))


def _dense_lsym(S):
    A = dense_adjacency(S)
    d = A.sum(axis=1)
    dinv = np.where(d > 0, 1 / np.sqrt(np.where(d > 0, d, 1)), 0.0)
    return np.eye(S.n) - dinv[:, None] * A * dinv[None, :]


# -- GCN --------------------------------------------------------------------------

def test_gcn_path_graph_hand_oracle(rng):
    S = _path3()
    # degrees of A+I are (2, 3, 2)
    Ahat = np.array([[1 / 2, 1 / np.sqrt(6), 0], [1 / np.sqrt(6), 1 / 3, 1 / np.sqrt(6)],
                     [0, 1 / np.sqrt(6), 1 / 2]])
    h, w = rng.normal(size=(3, 2)), rng.normal(size=(2, 4))
    out = gcn_layer(Tensor(h), S, Tensor(w)).data
    assert out.shape == (3, 4)
    np.testing.assert_allclose(out, Ahat @ h @ w, atol=1e-14)


def test_gcn_weighted_dense_oracle(rng):
    S = random_structure(rng, 9)
    h, w = rng.normal(size=(9, 3)), rng.normal(size=(3, 2))
    np.testing.assert_allclose(gcn_layer(Tensor(h), S, Tensor(w)).data, _dense_gcn(S) @ h @ w, atol=1e-12)


def test_gcn_empty_graph_identity(rng):
    S = GraphStructure(4, [], [], [])
    h = rng.normal(size=(4, 3))
    assert np.array_equal(gcn_layer(Tensor(h), S, Tensor(np.eye(3))).data, h)


def test_gcn_row_mismatch():
    with pytest.raises(DimensionError):
        gcn_layer(Tensor(np.ones((2, 1))), _path3(), Tensor(np.ones((1, 1))))


# -- Chebyshev ------------------------------------------------------------------------

def test_cheby_k1_is_linear(rng):
    S = random_structure(rng, 6)
    h, w = rng.normal(size=(6, 3)), rng.normal(size=(3, 2))
    assert np.array_equal(cheby_layer(Tensor(h), S, [Tensor(w)]).data, ops.matmul(Tensor(h), Tensor(w)).data)
    with pytest.raises(ValueError):
        cheby_layer(Tensor(h), S, [])


def _spectral_cheby(S, h, ws):
    lam, U = np.linalg.eigh(_dense_lsym(S))
    lt = 2 * lam / lam.max() - 1
    out = np.zeros((S.n, ws[0].shape[1]))
    for k, w in enumerate(ws):
        Tk = np.cos(k * np.arccos(np.clip(lt, -1, 1)))  # T_k on [-1, 1]
        out += U @ np.diag(Tk) @ U.T @ h @ w
    return out


def test_cheby_k2_cycle_spectral_oracle(rng):
    S = GraphStructure(4, [0, 1, 2, 0], [1, 2, 3, 3], np.ones(4))
    h = rng.normal(size=(4, 3))
    ws = [rng.normal(size=(3, 2)) for _ in range(2)]
    out = cheby_layer(Tensor(h), S, [Tensor(w) for w in ws]).data
    np.testing.assert_allclose(out, _spectral_cheby(S, h, ws), atol=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_cheby_k3_spectral_oracle(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(3, 9))
    S = random_structure(r, n, 0.6)
    if S.u.size == 0:
        pytest.skip("edgeless draw")
    h = r.normal(size=(n, 2))
    ws = [r.normal(size=(2, 3)) for _ in range(3)]
    out = cheby_layer(Tensor(h), S, [Tensor(w) for w in ws]).data
    np.testing.assert_allclose(out, _spectral_cheby(S, h, ws), atol=1e-8)


def test_lambda_max_bounds():
    for seed in range(20):
        r = np.random.default_rng(seed)
        S = random_structure(r, int(r.integers(3, 40)), r.uniform(0.1, 0.8))
        exact = np.linalg.eigvalsh(_dense_lsym(S)).max()
        assert exact <= 2 + 1e-12
        assert S.lambda_max == pytest.approx(exact, rel=0.01)
    assert estimate_lambda_max(GraphStructure(0, [], [], []).pattern.to_scipy()) == 0.0


# -- GAT ------------------------------------------------------------------------------

def _dense_gat(S, h, w, a, slope=0.2):
    wh = h @ w
    d = w.shape[1]
    A = dense_adjacency(S) + np.eye(S.n)
    out = np.zeros_like(wh)
    for i in range(S.n):
        nb = np.flatnonzero(A[i])
        e = np.array([wh[i] @ a[:d, 0] + wh[j] @ a[d:, 0] for j in nb])
        e = np.where(e > 0, e, slope * e)
        alpha = np.exp(e - e.max()) / np.exp(e - e.max()).sum()
        out[i] = alpha @ wh[nb]
    return out


def test_gat_three_node_dense_oracle(rng):
    S = _path3()
    h, w, a = rng.normal(size=(3, 2)), rng.normal(size=(2, 3)), rng.normal(size=(6, 1))
    out, alpha = gat_head(Tensor(h), S, Tensor(w), Tensor(a))
    np.testing.assert_allclose(out.data, _dense_gat(S, h, w, a), atol=1e-10)


def test_gat_single_node_and_symmetry(rng):
    S1 = GraphStructure(1, [], [], [])
    h, w, a = rng.normal(size=(1, 2)), rng.normal(size=(2, 3)), rng.normal(size=(6, 1))
    out, alpha = gat_head(Tensor(h), S1, Tensor(w), Tensor(a))
    np.testing.assert_allclose(out.data, h @ w, atol=1e-15)
    S2 = GraphStructure(2, [0], [1], [1.0])
    x = np.tile(rng.normal(size=(1, 2)), (2, 1))
    _, alpha = gat_head(Tensor(x), S2, Tensor(w), Tensor(a))
    np.testing.assert_allclose(alpha.data.ravel(), 0.5, atol=1e-15)


def test_gat_attention_rows_sum_to_one(rng):
    for _ in range(10):
        S = random_structure(rng, 10, 0.4)
        h, w, a = rng.normal(size=(10, 3)), rng.normal(size=(3, 2)), rng.normal(size=(4, 1))
        _, alpha = gat_head(Tensor(h), S, Tensor(w), Tensor(a))
        sums = np.bincount(S.rows, weights=alpha.data.ravel(), minlength=10)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_gat_heads_concat_and_mean(rng):
    S = _path3()
    h = rng.normal(size=(3, 2))
    heads = [(Tensor(rng.normal(size=(2, 2))), Tensor(rng.normal(size=(4, 1)))) for _ in range(3)]
    single = [_dense_gat(S, h, w.data, a.data) for w, a in heads]
    np.testing.assert_allclose(gat_layer(Tensor(h), S, heads).data, np.hstack(single), atol=1e-10)
    np.testing.assert_allclose(gat_layer(Tensor(h), S, heads, concat=False).data,
                               np.mean(single, axis=0), atol=1e-10)
    with pytest.raises(DimensionError):
        gat_head(Tensor(h), S, heads[0][0], Tensor(np.ones((3, 1))))


# -- transformer ---------------------------------------------------------------------

def _ln(x, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(axis=1, keepdims=True) + eps)


def _dense_transformer(S, h, heads):
    A = dense_adjacency(S)
    outs = []
    for q, k, v, we in heads:
        Q, K, V = h @ q, h @ k, h @ v
        logits = Q @ K.T / np.sqrt(q.shape[1]) + we * A
        mask = (A + np.eye(S.n)) > 0
        logits = np.where(mask, logits, -np.inf)
        att = np.exp(logits - logits.max(axis=1, keepdims=True))
        att /= att.sum(axis=1, keepdims=True)
        outs.append(att @ V)
    return _ln(h + np.hstack(outs))


def _tparams(heads):
    d = sum(q.shape[1] for q, *_ in heads)
    return {"heads": [{"q": Tensor(q), "k": Tensor(k), "v": Tensor(v), "edge": Tensor([we])}
                      for q, k, v, we in heads],
            "gamma": Tensor(np.ones(d)), "beta": Tensor(np.zeros(d))}


def test_transformer_four_node_dense_oracle(rng):
    S = GraphStructure(4, [0, 1, 1], [1, 2, 3], [0.9, 0.4, 0.7])
    h = rng.normal(size=(4, 4))
    heads = [tuple(rng.normal(size=(4, 2)) for _ in range(3)) + (rng.normal(),) for _ in range(2)]
    out = transformer_layer(Tensor(h), S, _tparams(heads)).data
    np.testing.assert_allclose(out, _dense_transformer(S, h, heads), atol=1e-10)


def test_transformer_isolated_node_and_zero_weights(rng):
    S = GraphStructure(3, [0], [1], [0.0])
    h = rng.normal(size=(3, 2))
    q, k, v = (rng.normal(size=(2, 2)) for _ in range(3))
    out = transformer_layer(Tensor(h), S, _tparams([(q, k, v, 5.0)])).data
    np.testing.assert_allclose(out[2], _ln(h[2:] + h[2:] @ v)[0], atol=1e-12)
    # zero edge weight: the edge bias term vanishes whatever w_e is
    ref = transformer_layer(Tensor(h), S, _tparams([(q, k, v, 0.0)])).data
    np.testing.assert_allclose(out, ref, atol=1e-15)


# -- Graph U-Net ------------------------------------------------------------------------

def test_topk_ties_lower_index():
    assert list(topk_indices(np.array([3.0, 1.0, 3.0, 2.0, 3.0, 0.0]), 0.5)) == [0, 2, 4]
    assert list(topk_indices(np.array([1.0, 2.0, 2.0, 0.0, 2.0, 5.0]), 0.5)) == [5, 1, 2]
    with pytest.raises(ValueError):
        topk_indices(np.zeros(0), 0.5)


def test_pool_unpool_contract(rng):
    S = random_structure(rng, 6)
    h = rng.normal(size=(6, 3))
    p = Tensor(rng.normal(size=(3, 1)))
    pooled, idx, sub = topk_pool(Tensor(h), S, p, 0.5)
    assert pooled.shape == (3, 3) and sub.n == 3
    scores = (h @ p.data / np.linalg.norm(p.data)).ravel()
    np.testing.assert_allclose(pooled.data, h[idx] / (1 + np.exp(-scores[idx, None])), atol=1e-14)
    up = unpool(pooled, idx, 6).data
    assert up.shape == (6, 3)
    rest = np.setdiff1d(np.arange(6), idx)
    assert np.array_equal(up[rest], np.zeros((3, 3)))
    np.testing.assert_array_equal(up[idx], pooled.data)
    with pytest.raises(ValueError):
        topk_pool(Tensor(h), S, p, 0.0)


def test_unet_ratio_one_keeps_all(rng):
    S = random_structure(rng, 5)
    model = assemble(ModelSpec.make("GRAPH_UNET", depth=1, hidden_dim=3, pool_ratio=1.0), 2)
    P = model.params
    h = rng.normal(size=(5, 2))
    x0 = np.maximum(_dense_gcn(S) @ h @ P["enc0.weight"].data, 0)
    p = P["pool1.proj"].data
    s = x0 @ p / np.linalg.norm(p)
    gated = (x0 / (1 + np.exp(-s)))
    x1 = np.maximum(_dense_gcn(S) @ gated @ P["enc1.weight"].data, 0)
    expect = _dense_gcn(S) @ (x1 + x0) @ P["dec0.weight"].data
    params = {"enc": [(P["enc0.weight"], P["enc0.bias"]), (P["enc1.weight"], P["enc1.bias"])],
              "pool": [P["pool1.proj"]], "dec": [(P["dec0.weight"], P["dec0.bias"])]}
    out = graph_unet(Tensor(h), S, 1, 1.0, params).data
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_unet_pool_to_zero_errors(rng):
    with pytest.raises(ConfigError):
        ModelSpec.make("GRAPH_UNET", pool_ratio=0.0)


# -- MLP / assembly ------------------------------------------------------------------------

def test_mlp_zero_weights_give_bias(rng):
    model = assemble(ModelSpec.make("MLP", hidden_dim=5), 3)
    for name, p in model.params.items():
        p.data = np.zeros_like(p.data)
    model.params["head.bias"].data = np.array([0.7])
    out = model.forward(GraphStructure(4, [], [], []), rng.normal(size=(4, 3))).data
    assert np.array_equal(out, np.full(4, 0.7))


def test_mlp_depth1_linear_ignores_graph(rng):
    model = assemble(ModelSpec.make("MLP", depth=1, hidden_dim=2), 3)
    x = rng.normal(size=(5, 3))
    a = model.forward(random_structure(rng, 5), x).data
    b = model.forward(GraphStructure(5, [], [], []), x).data
    P = model.params
    lin = (x @ P["layer0.weight"].data + P["layer0.bias"].data) @ P["head.weight"].data + P["head.bias"].data
    np.testing.assert_allclose(a, lin.ravel(), atol=1e-14)
    assert np.array_equal(a, b)


def test_parameter_counts():
    i, h = 7, 16
    assert assemble(ModelSpec.make("GCN", hidden_dim=h), i).n_parameters() == i * h + h * h + h * 1 + (h + h + 1)
    cheb = assemble(ModelSpec.make("CHEBY", hidden_dim=h, cheby_order=3), i)
    assert sum(1 for k in cheb.params if k.startswith("layer0.weight")) == 3
    assert sum(1 for k in cheb.params if k.startswith("layer1.weight")) == 3


def test_seed_determinism():
    a = assemble(ModelSpec.make("GAT", seed=3, hidden_dim=8), 5).state_dict()
    b = assemble(ModelSpec.make("GAT", seed=3, hidden_dim=8), 5).state_dict()
    c = assemble(ModelSpec.make("GAT", seed=4, hidden_dim=8), 5).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


@pytest.mark.parametrize("kind", ["GCN", "CHEBY", "GAT", "TRANSFORMER"])
def test_permutation_equivariance(kind, rng):
    for _ in range(3):
        n = int(rng.integers(3, 11))
        S = random_structure(rng, n, 0.5)
        perm = rng.permutation(n)
        Sp = GraphStructure(n, np.minimum(perm[S.u], perm[S.v]), np.maximum(perm[S.u], perm[S.v]), S.w)
        opts = {"heads": 2} if kind in ("GAT", "TRANSFORMER") else {}
        model = assemble(ModelSpec.make(kind, hidden_dim=4, **opts), 3)
        x = rng.normal(size=(n, 3))
        xp = np.empty_like(x)
        xp[perm] = x
        out = model.forward(S, x).data
        outp = model.forward(Sp, xp).data
        np.testing.assert_allclose(outp[perm], out, atol=1e-10)


def test_graph_readout_permutation_invariant(rng):
    n, copies = 6, 3
    base = random_structure(rng, n, 0.5)
    S = base.union(copies)
    perm = rng.permutation(n)
    bp = GraphStructure(n, np.minimum(perm[base.u], perm[base.v]), np.maximum(perm[base.u], perm[base.v]), base.w)
    model = assemble(ModelSpec.make("GCN", hidden_dim=4, task="GRAPH_CLS"), 1)
    x = rng.normal(size=(n * copies, 1))
    xp = np.empty_like(x)
    for c in range(copies):
        xp[c * n + perm] = x[c * n:(c + 1) * n]
    out = model.forward(S, x).data
    assert out.shape == (copies,)
    np.testing.assert_allclose(model.forward(bp.union(copies), xp).data, out, atol=1e-12)


def test_graph_cls_shares_topology_one_feature_per_node(rng):
    base = random_structure(rng, 5)
    S = base.union(4)
    assert S.n == 20 and S.n_graphs == 4
    assert np.array_equal(S.u[: base.u.size], base.u)
    assert np.array_equal(S.u[base.u.size: 2 * base.u.size], base.u + 5)
    model = assemble(ModelSpec.make("GRAPH_UNET", hidden_dim=4, depth=1, task="GRAPH_CLS"), 1)
    assert model.forward(S, rng.normal(size=(20, 1))).shape == (4,)
    with pytest.raises(DataError):
        model.forward(S, rng.normal(size=(20, 2)))


@pytest.mark.parametrize("kind,opts", GRAD_LAYERS, ids=[f"{k}{o}" for k, o in GRAD_LAYERS])
def test_layer_gradients(kind, opts):
    errs = [e for e in (layer_gradcheck(kind, opts, seed) for seed in range(40)) if e is not None][:8]
    assert len(errs) == 8  # U-Net draws at a top-k tie are skipped
    assert max(errs) < 1e-4


def test_dropout_only_between_hidden_layers(rng):
    S = random_structure(rng, 6)
    model = assemble(ModelSpec.make("GCN", depth=1, hidden_dim=3, dropout_p=0.5), 2)
    x = rng.normal(size=(6, 2))
    a = model.forward(S, x, training=True, rng=np.random.default_rng(0)).data
    assert np.array_equal(a, model.forward(S, x).data)


# -- spec / checkpoint -------------------------------------------------------------------

def test_model_spec_json_round_trip():
    for kind in ("MLP", "GCN", "CHEBY", "GAT", "TRANSFORMER", "GRAPH_UNET"):
        spec = ModelSpec.make(kind, depth=3, hidden_dim=8, seed=5)
        assert ModelSpec.from_json(spec.to_json()) == spec
    assert ModelSpec.make("CHEBY").cheby_order == 3 and ModelSpec.make("GAT").heads == 4


def test_model_spec_errors():
    with pytest.raises(ConfigError):
        ModelSpec.make("SAGE")
    with pytest.raises(ConfigError):
        ModelSpec("GCN", heads=2)
    with pytest.raises(ConfigError):
        ModelSpec("CHEBY")
    with pytest.raises(ConfigError):
        ModelSpec.make("GAT", hidden_dim=6, heads=4)
    with pytest.raises(ConfigError):
        ModelSpec.make("GCN", depth=0)
    with pytest.raises(ConfigError):
        ModelSpec.from_json('{"layer_kind": "GCN", "width": 3}')


def test_checkpoint_round_trip(tmp_path, rng):
    model = assemble(ModelSpec.make("TRANSFORMER", hidden_dim=4, heads=2, seed=1), 3)
    model.save(tmp_path / "m.bin")
    assert (tmp_path / "m.bin").stat().st_size == 8 * model.n_parameters()
    back = Model.load(tmp_path / "m.bin")
    assert back.spec == model.spec
    S = random_structure(rng, 5)
    x = rng.normal(size=(5, 3))
    assert np.array_equal(back.forward(S, x).data, model.forward(S, x).data)
    (tmp_path / "m.bin").write_bytes(b"\0" * 16)
    with pytest.raises(DataError):
        Model.load(tmp_path / "m.bin")
