import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relgraph.errors import ConfigurationError, InputError, LoadError, NumericError
from relgraph.models import (
    DotModel,
    FunctionModel,
    L2Model,
    Layer,
    MLPModel,
    PairwiseFeatureMap,
    TreeEnsembleModel,
    assemble_features,
    evaluate,
    load_model,
    model_from_dict,
    save_model,
)


@pytest.mark.parametrize("q, v, pairs, expected", [
    ((1, 2), (3, 4), (), (1, 2, 3, 4)),
    ((1, 2), (3, 4), ((0, 1),), (1, 2, 3, 4, 4)),
    ((0, 0), (5, 5), ((1, 0), (0, 0)), (0, 0, 5, 5, 0, 0)),
])
def test_assemble_features(q, v, pairs, expected):
    out = assemble_features(np.array(q, float), np.array(v, float), PairwiseFeatureMap(pairs))
    assert out.tolist() == list(expected)


def test_pairwise_index_out_of_range_names_pair():
    with pytest.raises(ConfigurationError, match=r"\(2, 0\)|2"):
        assemble_features(np.zeros(2), np.zeros(2), PairwiseFeatureMap(((2, 0),)))


def test_closed_form_examples():
    assert evaluate(L2Model(2), [0, 0], [3, 4]) == -25.0
    assert evaluate(DotModel(2), [1, 2], [3, 4]) == 11.0


def stump():
    nodes = [{"feature": 0, "threshold": 0.5, "left": 1, "right": 2},
             {"leaf": -1.0}, {"leaf": 2.0}]
    return TreeEnsembleModel(1, 0, [nodes])


def test_tree_stump_goes_right_on_ge():
    m = stump()
    assert evaluate(m, [1.0], np.zeros(0)) == 2.0
    assert evaluate(m, [0.5], np.zeros(0)) == 2.0
    assert evaluate(m, [0.49], np.zeros(0)) == -1.0


def test_mlp_hand_computed():
    m = MLPModel(1, 1, [Layer(np.eye(2), np.zeros(2), "identity"),
                        Layer(np.array([[1.0, 1.0]]), np.zeros(1), "identity")])
    assert evaluate(m, [2.0], [3.0]) == 5.0


def test_mlp_relu_matches_numpy(small_mlp_bundle):
    b = small_mlp_bundle
    m = b.model
    q = b.test_queries[0]
    for v in b.items[:20]:
        x = assemble_features(q, v, m.feature_map)
        for layer in m.layers:
            x = layer.weights @ x + layer.bias
            if layer.activation == "relu":
                x = np.maximum(x, 0)
        assert evaluate(m, q, v) == pytest.approx(x[0], rel=1e-9, abs=1e-9)


def test_dimension_mismatch_is_input_error():
    with pytest.raises(InputError):
        evaluate(L2Model(2), [0, 0, 0], [1, 1])
    with pytest.raises(InputError):
        DotModel(3).score(np.zeros(3), np.zeros((4, 2)))


def test_non_finite_input_rejected():
    with pytest.raises(InputError):
        evaluate(L2Model(2), [np.nan, 0], [1, 1])


def test_overflow_raises_numeric_error_with_layer():
    big = np.full((1, 1), 1e200)
    m = MLPModel(1, 0, [Layer(big, np.zeros(1), "relu"), Layer(big, np.zeros(1), "identity")])
    with pytest.raises(NumericError, match="layer"):
        m.score(np.array([1e30]), np.zeros((1, 0)))


def test_tree_overflow_names_tree():
    nodes = [{"leaf": 1e308}]
    m = TreeEnsembleModel(1, 0, [nodes, nodes])
    with pytest.raises(NumericError, match="tree 1"):
        m.score(np.zeros(1), np.zeros((1, 0)))


def test_tree_additivity(small_tree_bundle):
    b = small_tree_bundle
    m = b.model
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = b.test_queries[rng.integers(len(b.test_queries))]
        v = b.items[rng.integers(len(b.items))]
        # independent traversal of each tree from the node dicts
        x = assemble_features(q, v, m.feature_map)
        total = 0.0
        for nodes in m.trees:
            i = 0
            while "leaf" not in nodes[i]:
                n = nodes[i]
                i = n["left"] if x[n["feature"]] < n["threshold"] else n["right"]
            total += nodes[i]["leaf"]
        assert evaluate(m, q, v) == pytest.approx(total, abs=1e-9)
        assert m.tree_scores(q, v).sum() == pytest.approx(total, abs=1e-9)


def test_pairwise_soundness():
    fmap = PairwiseFeatureMap(((0, 1), (1, 0)))
    # a tree reading only the appended product features
    nodes = [{"feature": 4, "threshold": 0.0, "left": 1, "right": 2},
             {"leaf": -3.0},
             {"feature": 5, "threshold": 0.0, "left": 3, "right": 4},
             {"leaf": 1.0}, {"leaf": 7.0}]
    m = TreeEnsembleModel(2, 2, [nodes], fmap)
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = rng.standard_normal(2)
        v = np.zeros(2)
        x = assemble_features(q, v, fmap)
        assert x[4:].tolist() == [0.0, 0.0]
        assert evaluate(m, q, v) == 7.0
    mlp = MLPModel(2, 2, [Layer(np.array([[0, 0, 0, 0, 5.0, -2.0]]), np.zeros(1), "identity")],
                   fmap)
    assert evaluate(mlp, [3.0, -1.0], [0.0, 0.0]) == 0.0


def test_determinism_bitwise(small_tree_bundle, small_mlp_bundle):
    rng = np.random.default_rng(7)
    for b in (small_tree_bundle, small_mlp_bundle):
        idx_q = rng.integers(len(b.train_queries), size=10_000)
        idx_v = rng.integers(len(b.items), size=10_000)
        first = [evaluate(b.model, b.train_queries[i], b.items[j])
                 for i, j in zip(idx_q[:2000], idx_v[:2000])]
        second = [evaluate(b.model, b.train_queries[i], b.items[j])
                  for i, j in zip(idx_q[:2000], idx_v[:2000])]
        assert first == second
        # batch scoring equals single scoring bit for bit
        q = b.train_queries[0]
        batch = b.model.score(q, b.items)
        single = [evaluate(b.model, q, v) for v in b.items[:100]]
        assert batch[:100].tolist() == single


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_closed_forms_match_naive_loops(dim, seed):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(dim).astype(np.float32)
    items = rng.standard_normal((5, dim)).astype(np.float32)
    l2 = L2Model(dim).score(q, items)
    dot = DotModel(dim).score(q, items)
    for k, v in enumerate(items):
        d2 = sum((float(a) - float(b)) ** 2 for a, b in zip(q, v))
        dp = sum(float(a) * float(b) for a, b in zip(q, v))
        assert l2[k] == pytest.approx(-d2, rel=1e-6, abs=1e-9)
        assert dot[k] == pytest.approx(dp, rel=1e-6, abs=1e-9)


def test_function_model_wraps_callable():
    m = FunctionModel(lambda q, v: v[:, 0] * q[0], 1, 2)
    assert m.score([2.0], [[1, 0], [3, 0]]).tolist() == [2.0, 6.0]


# -- model files ------------------------------------------------------------


def write(tmp_path, spec):
    p = tmp_path / "model.json"
    p.write_text(json.dumps(spec))
    return p


def test_load_minimal_dot(tmp_path):
    m = load_model(write(tmp_path, {"type": "dot", "query_dim": 2, "item_dim": 2}))
    assert isinstance(m, DotModel) and m.kind == "dot"


def test_load_mlp_mismatched_shapes(tmp_path):
    spec = {"type": "mlp", "query_dim": 1, "item_dim": 1, "layers": [
        {"weights": [[1, 0], [0, 1]], "bias": [0, 0], "activation": "relu"},
        {"weights": [[1, 1, 1]], "bias": [0], "activation": "identity"}]}
    with pytest.raises(LoadError, match=r"layers\[1\]"):
        load_model(write(tmp_path, spec))


def test_load_tree_split_index_too_large(tmp_path):
    spec = {"type": "tree_ensemble", "query_dim": 1, "item_dim": 1, "trees": [{"nodes": [
        {"feature": 2, "threshold": 0.0, "left": 1, "right": 2}, {"leaf": 0}, {"leaf": 1}]}]}
    with pytest.raises(LoadError, match="feature"):
        load_model(write(tmp_path, spec))


@pytest.mark.parametrize("spec", [
    {"type": "cosine", "query_dim": 1, "item_dim": 1},
    {"type": "l2", "query_dim": 2, "item_dim": 3},
    {"type": "dot", "query_dim": "2", "item_dim": 2},
    {"type": "mlp", "query_dim": 1, "item_dim": 1},
    {"type": "tree_ensemble", "query_dim": 1, "item_dim": 1, "trees": [{"nodes": [
        {"feature": 0, "threshold": 0, "left": 1, "right": 1}, {"leaf": 0}]}]},
])
def test_load_schema_violations(tmp_path, spec):
    with pytest.raises(LoadError):
        load_model(write(tmp_path, spec))


def test_load_missing_and_malformed(tmp_path):
    with pytest.raises(LoadError):
        load_model(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(LoadError):
        load_model(tmp_path / "bad.json")


def test_model_round_trip_bytes(tmp_path, small_tree_bundle, small_mlp_bundle):
    for b in (small_tree_bundle, small_mlp_bundle):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_model(b.model, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
        again = load_model(p2)
        q = b.test_queries[0]
        assert again.score(q, b.items).tolist() == b.model.score(q, b.items).tolist()


def test_model_from_dict_matches_constructor():
    m = model_from_dict({"type": "l2", "query_dim": 3, "item_dim": 3})
    assert isinstance(m, L2Model) and m.item_dim == 3
