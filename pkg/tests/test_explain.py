import json

import numpy as np
import pytest

from omicgraph.errors import DataError, NumericalError
from omicgraph.explain import (
    Explanation, edge_ranks, explain, masked_prediction, mean_explanation, rank_explanations,
)
from omicgraph.graphs import SimGraph, build_ssn
from omicgraph.models import ModelSpec, assemble
from omicgraph.train import SplitMask, TrainConfig, graph_inputs, predict_nodes, train_graph_model, train_node_model

from conftest import make_matrix, random_graph


@pytest.fixture(scope="module")
def trained():
    r = np.random.default_rng(0)
    y = np.repeat([0, 1], 20)
    X = r.normal(size=(40, 6))
    X[:, :2] += 1.5 * y[:, None]
    m = make_matrix(X, y)
    g = build_ssn(m, 0.3)
    mask = SplitMask(np.arange(0, 40, 2), np.arange(1, 12, 2), np.arange(13, 40, 2))
    model, _ = train_node_model(ModelSpec.make("GCN", hidden_dim=8), g, m, mask,
                                TrainConfig(learning_rate=0.01, max_epochs=30, patience=0))
    return model, g, m


def test_model_not_mutated(trained):
    model, g, m = trained
    before = model.state_dict()
    explain(model, g, m, 3, iters=20)
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_all_ones_mask_is_unmasked_prediction(trained):
    model, g, m = trained
    base = predict_nodes(model, g, m.values)
    for t in (0, 7, 39):
        z = masked_prediction(model, g, m, t, np.ones(g.n_edges), np.ones(m.n_features))
        assert z == base[t]


def test_explanation_shapes_and_range(trained):
    model, g, m = trained
    e = explain(model, g, m, "S5", iters=30)
    assert e.target == "S5"
    assert e.edge_mask.shape == (g.n_edges,) and e.feature_mask.shape == (m.n_features,)
    assert np.all((e.edge_mask > 0) & (e.edge_mask < 1))
    assert len(e.objective) == 31
    with pytest.raises(DataError):
        explain(model, g, m, "nope", iters=1)
    with pytest.raises(DataError):
        explain(model, g, m, 40, iters=1)


def test_objective_descends(trained):
    model, g, m = trained
    ok = 0
    trials = 20
    for t in range(trials):
        e = explain(model, g, m, t, iters=100)
        ok += e.objective[-1] <= e.objective[0]
    assert ok >= 0.95 * trials


def test_large_sparsity_weight_drives_masks_down(trained):
    model, g, m = trained
    e = explain(model, g, m, 2, iters=300, sparsity_weight=1e4, lr=0.05)
    assert e.edge_mask.max() < 0.05 and e.feature_mask.max() < 0.05


def test_graph_ignoring_model_gives_flat_edge_mask(trained):
    _, g, m = trained
    model = assemble(ModelSpec.make("GCN", hidden_dim=4), m.n_features)
    for name, p in model.params.items():
        if name.startswith("layer"):
            p.data = np.zeros_like(p.data)
    model.params["head.bias"].data = np.array([0.8])
    e = explain(model, g, m, 4, iters=200)
    assert np.ptp(e.edge_mask) < 0.1


def test_planted_edge_ranks_top():
    n = 40
    r = np.random.default_rng(1)
    u = list(np.zeros(n - 1, dtype=int))
    v = list(range(1, n))
    extra = r.choice(np.arange(1, n), size=(30, 2))
    for a, b in extra:
        if a != b and (min(a, b), max(a, b)) not in set(zip(u, v)):
            u.append(min(a, b))
            v.append(max(a, b))
    g = SimGraph.from_edges(n, u, v, np.ones(len(u)))
    X = np.zeros((n, 1))
    X[17, 0] = 10.0  # only node 17 sends a nonzero message to node 0
    m = make_matrix(X)
    model = assemble(ModelSpec.make("GCN", depth=1, hidden_dim=1), 1)
    model.params["layer0.weight"].data = np.ones((1, 1))
    model.params["head.weight"].data = np.ones((1, 1))
    e = explain(model, g, m, 0, iters=300)
    planted = [i for i, (a, b) in enumerate(e.edges) if {a, b} == {"0", "17"}][0]
    assert edge_ranks(e.edge_mask)[planted] < 0.05 * g.n_edges


def test_nan_model_rejected(trained):
    model, g, m = trained
    bad = model.frozen()
    bad.params["head.bias"].data = np.array([np.nan])
    with pytest.raises(NumericalError):
        explain(bad, g, m, 0, iters=1)


# -- ranking / export -------------------------------------------------------------------

def _expl(edge_mask, feature_mask):
    edges = [(f"a{i}", f"b{i}") for i in range(len(edge_mask))]
    return Explanation("t", np.asarray(edge_mask, float), np.asarray(feature_mask, float), edges,
                       [f"f{i}" for i in range(len(feature_mask))], 0.3)


def test_rank_ties_and_monotone_invariance():
    e = _expl([0.2, 0.7, 0.7, 0.1], [0.5, 0.5])
    edges, feats = rank_explanations(e, 10)
    assert [x[0] for x in edges] == ["a1", "a2", "a0", "a3"]
    assert [f for f, _ in feats] == ["f0", "f1"]
    assert [x[0] for x in rank_explanations(e, 2)[0]] == ["a1", "a2"]
    squashed = _expl(np.log(np.array([0.2, 0.7, 0.7, 0.1]) * 5), [0.5, 0.5])
    assert [x[0] for x in rank_explanations(squashed, 10)[0]] == ["a1", "a2", "a0", "a3"]
    assert list(edge_ranks(np.array([0.2, 0.7, 0.7, 0.1]))) == [2, 0, 1, 3]
    with pytest.raises(ValueError):
        rank_explanations(e, 0)


def test_json_export(tmp_path):
    e = _expl([0.2, 0.9], [0.4])
    e.to_json(tmp_path / "e.json")
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc == {"target": "t", "final_masked_prediction": 0.3,
                   "edges": [["a1", "b1", 0.9], ["a0", "b0", 0.2]], "features": [["f0", 0.4]]}
    assert len(e.to_dict(top_k=1)["edges"]) == 1


def test_mean_explanation():
    a, b = _expl([0.2, 0.8], [0.1]), _expl([0.4, 0.6], [0.3])
    mean = mean_explanation([a, b])
    np.testing.assert_allclose(mean.edge_mask, [0.3, 0.7])
    np.testing.assert_allclose(mean.feature_mask, [0.2])
    with pytest.raises(DataError):
        mean_explanation([])
    with pytest.raises(DataError):
        mean_explanation([a, _expl([0.1, 0.2, 0.3], [0.1])])


# -- MIN -----------------------------------------------------------------------------------

@pytest.mark.parametrize("positional", [False, True])
def test_min_explanation(positional):
    r = np.random.default_rng(2)
    g = random_graph(r, 8, 0.4)
    y = np.repeat([0, 1], 15)
    X = r.normal(size=(30, 8)) + y[:, None]
    m = make_matrix(X, y)
    mask = SplitMask(np.arange(0, 30, 2), np.arange(1, 10, 2), np.arange(11, 30, 2))
    model, _ = train_graph_model(ModelSpec.make("GCN", task="GRAPH_CLS", hidden_dim=4), g, m, mask,
                                 TrainConfig(learning_rate=0.01, max_epochs=5, patience=0), positional=positional)
    e = explain(model, g, m, "S3", iters=20)
    assert e.edge_mask.shape == (g.n_edges,)
    assert e.feature_ids == g.node_ids and e.feature_mask.shape == (8,)
    z = masked_prediction(model, g, m, 3, np.ones(g.n_edges), np.ones(8))
    direct = model.forward(g.structure(), graph_inputs(X[3:4], positional)).data[0]
    assert z == direct
    with pytest.raises(DataError):
        explain(model, g, m.columns(np.arange(5)), 0, iters=1)
