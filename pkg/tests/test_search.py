import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relgraph.errors import InputError
from relgraph.evaluation import compute_ground_truth, recall_at_k
from relgraph.graph import BuildParams, build_graph
from relgraph.models import DotModel, FunctionModel, L2Model
from relgraph.relevance import compute_relevance_vectors, sample_train_queries
from relgraph.search import (
    EvalLedger,
    SearchParams,
    exhaustive_topk,
    explore,
    rank_ids,
    rpg_plus_entry,
    search_topk,
)


def line_model(values):
    """1-d items whose relevance is the stored value itself."""
    items = np.arange(len(values), dtype=np.float32).reshape(-1, 1)
    table = np.asarray(values, dtype=np.float64)
    return FunctionModel(lambda q, v: table[v[:, 0].astype(int)], 1, 1), items


def literal_explore(adj, f, entry, L):
    """Plain-list transcription of the beam exploration loop, no heaps."""
    C = [entry]
    W = [entry]
    visited = {entry}
    evaluated = {entry}
    while C:
        curr = max(C, key=lambda v: (f[v], -v))
        C.remove(curr)
        worst = lambda: min(W, key=lambda v: (f[v], -v))
        if f[curr] < f[worst()]:
            break
        for e in adj[curr]:
            if e in visited:
                continue
            visited.add(e)
            evaluated.add(e)
            if f[e] > f[worst()] or len(W) < L:
                C.append(e)
                W.append(e)
                if len(W) > L:
                    W.remove(min(W, key=lambda v: (f[v], -v)))
    W.sort(key=lambda v: (-f[v], v))
    return W, len(evaluated), len(visited)


def test_single_vertex():
    model, items = line_model([3.5])
    ledger = EvalLedger(model, items, [0.0])
    assert explore({0: []}, ledger, 0, 4) == [(0, 3.5)]
    assert ledger.unique_evals == 1


def test_complete_graph_is_exhaustive():
    vals = [0.3, 2.0, -1.0, 5.0, 0.0, 1.5]
    model, items = line_model(vals)
    adj = {v: [u for u in range(6) if u != v] for v in range(6)}
    ledger = EvalLedger(model, items, [0.0])
    out = explore(adj, ledger, 0, 6)
    assert [i for i, _ in out] == [3, 1, 5, 0, 4, 2]
    assert out == exhaustive_topk(model, items, [0.0], 6).hits


def test_path_graph_trace():
    model, items = line_model([0.0, 1.0, 2.0, 3.0, 4.0])
    adj = {0: [1], 1: [0, 2], 2: [1, 3], 3: [2, 4], 4: [3]}
    ledger = EvalLedger(model, items, [0.0])
    out = explore(adj, ledger, 0, 2)
    assert out[0][0] == 4
    assert ledger.visits == 5
    assert literal_explore(adj, [0, 1, 2, 3, 4], 0, 2)[2] == 5


def test_complete_graph_beam_k_finds_top_k():
    # a neighbor beating the current worst of W must enter even after W filled
    vals = [5.0, 1.0, 2.0, 0.5, 4.0, 3.0, 6.0]
    model, items = line_model(vals)
    adj = {v: [u for u in range(7) if u != v] for v in range(7)}
    out = explore(adj, EvalLedger(model, items, [0.0]), 0, 3)
    assert [i for i, _ in out] == [6, 0, 4]


def test_missing_entry():
    model, items = line_model([1.0, 2.0])
    with pytest.raises(InputError):
        explore({0: [1], 1: [0]}, EvalLedger(model, items, [0.0]), 7, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(1, 10), st.floats(0.05, 0.6), st.integers(0, 10**6))
def test_explore_matches_literal_transcription(n, L, p, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(n).tolist()
    mask = rng.random((n, n)) < p
    adj = {v: [u for u in range(n) if mask[v, u] and u != v] for v in range(n)}
    model, items = line_model(f)
    ledger = EvalLedger(model, items, [0.0])
    entry = int(rng.integers(n))
    got = explore(adj, ledger, entry, L)
    want, evals, visited = literal_explore(adj, f, entry, L)
    assert [i for i, _ in got] == want
    assert ledger.unique_evals == evals
    assert ledger.visits == visited


def test_ledger_counts_distinct_only():
    calls = []

    def fn(q, v):
        calls.extend(v[:, 0].astype(int).tolist())
        return v[:, 0].astype(np.float64)

    items = np.arange(10, dtype=np.float32).reshape(-1, 1)
    ledger = EvalLedger(FunctionModel(fn, 1, 1), items, [0.0])
    ledger.score([1, 2, 2, 3])
    ledger.score([3, 1])
    ledger.score_one(9)
    assert ledger.unique_evals == 4 == len(calls)
    assert sorted(calls) == [1, 2, 3, 9]
    with pytest.raises(InputError):
        ledger.score([10])


def test_rpg_plus_entry_examples():
    assert rpg_plus_entry(np.array([[1, 0], [0, 1]]), [0, 2]) == 1
    assert rpg_plus_entry(np.array([[1, 0], [0, 1]]), [0, 0]) == 0
    with pytest.raises(InputError):
        rpg_plus_entry(np.array([[1, 0], [0, 1]]), [0, 0, 1])


def test_exhaustive_examples():
    model = DotModel(2)
    items = [[1, 0], [0, 1], [1, 1]]
    res = exhaustive_topk(model, items, [1, 1], 2)
    assert res.hits == [(2, 2.0), (0, 1.0)]
    full = exhaustive_topk(model, items, [1, 1], 3)
    assert full.ids == [2, 0, 1] and full.unique_evals == 3


def test_rank_ids_ties():
    assert rank_ids([5, 2, 9], [1.0, 1.0, 3.0]) == [(9, 3.0), (2, 1.0), (5, 1.0)]


def test_search_params_invariants():
    with pytest.raises(InputError):
        SearchParams(K=0)
    with pytest.raises(InputError):
        SearchParams(K=5, L=4)


def test_search_recall_on_l2(small_l2_bundle):
    b = small_l2_bundle
    vecs = compute_relevance_vectors(b.model, b.items, b.train_queries,
                                     sample_train_queries(len(b.train_queries), 100, 0))
    graph = build_graph(vecs, BuildParams())
    truth = compute_ground_truth(b.model, b.items, b.test_queries, 5)
    recalls, evals = [], []
    for i, q in enumerate(b.test_queries):
        res = search_topk(graph, b.model, b.items, q, SearchParams(K=5, L=64))
        recalls.append(recall_at_k(res.ids, truth.ids[i]))
        evals.append(res.unique_evals)
        scores = res.scores
        assert scores == sorted(scores, reverse=True) and len(set(res.ids)) == 5
    assert np.mean(recalls) >= 0.9
    assert max(evals) < len(b.items)


def test_search_deterministic_and_entry_neutral(small_l2_bundle):
    b = small_l2_bundle
    items = b.items[:12]
    graph = build_graph(items, BuildParams(M=16, ef_construction=32,
                                           neighbor_selection="simple"))
    # 12 items with cap 2M=32 on layer 0: every vertex links to every other
    assert all(len(graph.neighbors(0, v)) == 11 for v in range(12))
    q = b.test_queries[0]
    base = search_topk(graph, b.model, items, q, SearchParams(K=3, L=12))
    again = search_topk(graph, b.model, items, q, SearchParams(K=3, L=12))
    assert base == again
    for entry in range(12):
        other = search_topk(graph, b.model, items, q,
                            SearchParams(K=3, L=12, entry_override=entry))
        assert other.hits == base.hits
    assert base.hits == exhaustive_topk(b.model, items, q, 3).hits


def test_graph_item_mismatch(small_l2_bundle):
    b = small_l2_bundle
    graph = build_graph(b.items[:20], BuildParams(M=4, ef_construction=8))
    with pytest.raises(InputError):
        search_topk(graph, b.model, b.items[:21], b.test_queries[0], SearchParams())


def test_l2_query_equal_item_found():
    rng = np.random.default_rng(0)
    items = rng.standard_normal((300, 4)).astype(np.float32)
    graph = build_graph(items, BuildParams())
    res = search_topk(graph, L2Model(4), items, items[123], SearchParams(K=1, L=32))
    assert res.hits == [(123, 0.0)]
