import math

import numpy as np
import pytest

from relgraph.baselines import build_top_scored
from relgraph.datagen import GeneratorConfig, generate_bundle
from relgraph.errors import InputError
from relgraph.evaluation import (
    CSV_COLUMNS,
    CurvePoint,
    ExhaustiveMethod,
    RPGMethod,
    TopScoredMethod,
    ablation_run,
    average_relevance,
    compute_ground_truth,
    fit_power_law,
    geometric_budgets,
    min_param_for_recall,
    read_curve_csv,
    recall_at_budget,
    recall_at_k,
    scalability_experiment,
    sweep_curve,
    write_curve_csv,
    write_scaling_csv,
)
from relgraph.graph import BuildParams, build_graph, validate_graph
from relgraph.relevance import compute_relevance_vectors, sample_train_queries
from relgraph.search import SearchResult


def test_recall_examples():
    assert recall_at_k([1, 2, 3], [1, 2, 3]) == 1.0
    assert recall_at_k([4, 5], [1, 2]) == 0.0
    assert recall_at_k([1, 2, 4], [1, 2, 3]) == pytest.approx(2 / 3)


def test_average_relevance(small_tree_bundle):
    b = small_tree_bundle
    q = b.test_queries[0]
    assert average_relevance(b.model, q, [7], b.items) == b.model.evaluate(q, b.items[7])
    ids = [3, 11, 40]
    naive = sum(b.model.evaluate(q, b.items[i]) for i in ids) / 3
    assert average_relevance(b.model, q, ids, b.items) == pytest.approx(naive, abs=1e-12)
    truth = compute_ground_truth(b.model, b.items, b.test_queries[:1], 5)
    best = average_relevance(b.model, q, truth.ids[0], b.items)
    assert best == pytest.approx(np.mean(truth.scores[0]))
    assert best >= average_relevance(b.model, q, list(range(5)), b.items)


def test_ground_truth_matches_loop(small_tree_bundle):
    b = small_tree_bundle
    truth = compute_ground_truth(b.model, b.items, b.test_queries[:3], 4)
    for i, q in enumerate(b.test_queries[:3]):
        scores = [b.model.evaluate(q, v) for v in b.items]
        order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))[:4]
        assert list(truth.ids[i]) == order


def test_sweep_examples(small_l2_bundle):
    b = small_l2_bundle
    items = b.items[:10]
    queries = b.test_queries[:10]
    truth = compute_ground_truth(b.model, items, queries, 5)
    g = build_graph(items, BuildParams(M=8, ef_construction=16, neighbor_selection="simple"))
    assert validate_graph(g).ok
    (pt,) = sweep_curve(RPGMethod(g, b.model, items), [5], queries, truth)
    assert pt.recall == 1.0
    index = build_top_scored(b.model, items, b.train_queries)
    (pt,) = sweep_curve(TopScoredMethod(index, b.model, items), [10], queries, truth)
    assert pt.recall == 1.0 and pt.mean_unique_evals == 10


def test_curve_monotone_on_l2(small_l2_bundle):
    b = small_l2_bundle
    truth = compute_ground_truth(b.model, b.items, b.test_queries, 5)
    vecs = compute_relevance_vectors(b.model, b.items, b.train_queries,
                                     sample_train_queries(len(b.train_queries), 50, 0))
    curve = sweep_curve(RPGMethod(build_graph(vecs), b.model, b.items), [5, 10, 20, 40, 80],
                        b.test_queries, truth)
    evals = [p.mean_unique_evals for p in curve]
    assert evals == sorted(evals)
    assert all(0 <= p.recall <= 1 for p in curve)
    assert curve[-1].recall > curve[0].recall


def test_recall_at_budget_interpolates():
    pts = [CurvePoint("m", 1, 10.0, 0.2, 0.0), CurvePoint("m", 2, 30.0, 0.6, 0.0)]
    assert recall_at_budget(pts, 20.0) == pytest.approx(0.4)
    assert recall_at_budget(pts, 5.0) == 0.2
    assert recall_at_budget(pts, 99.0) == 0.6


def test_geometric_budgets():
    b = geometric_budgets(5, 1000, 8)
    assert b[0] == 5 and b[-1] == 1000 and b == sorted(set(b))


def test_csv_round_trip_and_determinism(tmp_path):
    pts = [CurvePoint("rpg", 8, 41.25, 0.5, -3.0), CurvePoint("rpg", 16, 80.0, 1.0, -2.5)]
    write_curve_csv(pts, tmp_path / "a.csv", 5, 0)
    write_curve_csv(pts, tmp_path / "b.csv", 5, 0)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = read_curve_csv(tmp_path / "a.csv")
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert float(rows[0]["mean_unique_evals"]) == 41.25 and rows[1]["param"] == "16"


class _FixedCost:
    """Reports a hand-picked number of evaluations; recall is always perfect."""

    label = "fixed"

    def __init__(self, truth, cost):
        self.truth, self.cost = truth, cost

    def run(self, query, param, K, query_index=0):
        hits = [(int(i), 0.0) for i in self.truth.ids[query_index]]
        return SearchResult(hits, self.cost, self.cost)


def _setup_for(kind):
    def setup(n):
        bundle = generate_bundle(GeneratorConfig(n_items=n, n_train=10, n_test=5, query_dim=3,
                                                 item_dim=3, seed=0))
        truth = compute_ground_truth(bundle.model, bundle.items, bundle.test_queries, 5)
        if kind == "exhaustive":
            method = ExhaustiveMethod(bundle.model, bundle.items)
        else:
            method = _FixedCost(truth, 42)
        return method, bundle.test_queries, truth
    return setup


def test_scaling_alpha_exhaustive_and_constant():
    report = scalability_experiment(_setup_for("exhaustive"), [100, 400, 1600])
    assert report.alpha == pytest.approx(1.0, abs=1e-9)
    report = scalability_experiment(_setup_for("constant"), [100, 400, 1600])
    assert report.alpha == pytest.approx(0.0, abs=1e-9)


def test_scaling_saturation_reported():
    class Never(_FixedCost):
        def run(self, query, param, K, query_index=0):
            return SearchResult([(10**6 + j, 0.0) for j in range(K)], param, param)

    def setup(n):
        method, queries, truth = _setup_for("constant")(n)
        return Never(truth, 0), queries, truth

    report = scalability_experiment(setup, [50, 100])
    assert report.saturated == [50, 100] and math.isnan(report.alpha)


def test_min_param_search_finds_threshold():
    class Step:
        label = "step"

        def run(self, query, param, K, query_index=0):
            ids = [0, 1, 2, 3, 4] if param >= 37 else [9, 9, 9, 9, 9]
            return SearchResult([(i, 0.0) for i in ids], param, param)

    from relgraph.evaluation import GroundTruth
    truth = GroundTruth(np.array([[0, 1, 2, 3, 4]]), np.zeros((1, 5)))
    p, pt = min_param_for_recall(Step(), [np.zeros(1)], truth, 5, 1000, 0.9)
    assert p == 37 and pt.mean_unique_evals == 37


def test_fit_power_law():
    sizes = [10, 100, 1000]
    alpha, c = fit_power_law(sizes, [3 * s ** 0.5 for s in sizes])
    assert alpha == pytest.approx(0.5) and math.exp(c) == pytest.approx(3.0)


def test_scaling_csv(tmp_path):
    report = scalability_experiment(_setup_for("exhaustive"), [100, 200])
    write_scaling_csv(report, tmp_path / "s.csv", "exhaustive", 5, 0)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[-1].endswith(repr(report.alpha))


def test_ablation_over_m(small_tree_bundle):
    b = small_tree_bundle
    truth = compute_ground_truth(b.model, b.items, b.test_queries, 5)
    vecs = compute_relevance_vectors(b.model, b.items, b.train_queries,
                                     sample_train_queries(len(b.train_queries), 50, 0))
    graphs = {}

    def make(M):
        graphs[M] = build_graph(vecs, BuildParams(M=M, ef_construction=max(100, M)))
        return RPGMethod(graphs[M], b.model, b.items)

    curves = ablation_run("M", [4, 8, 16], make, [8, 32], b.test_queries, truth)
    assert sorted(curves) == [4, 8, 16]
    assert curves[8][0].method == "rpg[M=8]"
    for M, g in graphs.items():
        report = validate_graph(g)
        assert report.ok and report.connected
        assert max(len(g.neighbors(0, v)) for v in range(g.num_items)) <= 2 * M
    with pytest.raises(InputError):
        ablation_run("M", [4, 4], make, [8], b.test_queries, truth)


@pytest.mark.slow
def test_m8_close_to_best_m():
    b = generate_bundle(GeneratorConfig(kind="tree_ensemble", n_items=5000, n_train=1000,
                                        n_test=100, n_pairwise=16, seed=0))
    truth = compute_ground_truth(b.model, b.items, b.test_queries, 5)
    vecs = compute_relevance_vectors(b.model, b.items, b.train_queries,
                                     sample_train_queries(1000, 100, 0))
    budgets = geometric_budgets(5, 1024, 12)
    curves = {M: sweep_curve(RPGMethod(build_graph(vecs, BuildParams(M=M)), b.model, b.items),
                             budgets, b.test_queries, truth) for M in (4, 8, 16)}
    # budget at which the best M first reaches 0.9 recall
    budget = min(min(p.mean_unique_evals for p in c if p.recall >= 0.9) for c in curves.values())
    at = {M: recall_at_budget(c, budget) for M, c in curves.items()}
    assert at[8] >= max(at.values()) - 0.05
