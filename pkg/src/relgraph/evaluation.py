"""Recall/compute trade-off curves, ablations and scalability fits.

A *method* is any object with a ``label`` and
``run(query, param, K, query_index) -> SearchResult``, where ``param`` is the
method's budget knob (beam width ``L`` for graph methods, candidate count
``N`` for rerankers). Curves average recall, evaluations and relevance over
test queries in query-id order.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .baselines import (
    EmbeddingSet,
    TopScoredIndex,
    embed_query,
    embedding_rerank_search,
    top_scored_search,
)
from .errors import InputError
from .graph import ProximityGraph
from .models import RelevanceModel, as_feature_matrix, as_feature_vector
from .parallel import map_ordered
from .search import (
    EvalLedger,
    SearchParams,
    SearchResult,
    exhaustive_topk,
    rpg_plus_entry,
    search_topk,
)

CSV_COLUMNS = ("method", "param", "mean_unique_evals", "recall", "avg_relevance", "k", "seed")


def recall_at_k(retrieved, truth) -> float:
    truth = list(truth)
    if not truth:
        raise InputError("ground truth is empty")
    return len(set(retrieved) & set(truth)) / len(truth)


def average_relevance(model: RelevanceModel, query, retrieved, items) -> float:
    ids = np.asarray(list(retrieved), dtype=np.int64)
    if not len(ids):
        raise InputError("no retrieved items")
    items = as_feature_matrix(items, model.item_dim, "items")
    q = as_feature_vector(query, model.query_dim, "query")
    return float(np.mean(model.score_unchecked(q, items[ids])))


@dataclass(frozen=True)
class GroundTruth:
    ids: np.ndarray  # (num_queries, K)
    scores: np.ndarray

    @property
    def K(self) -> int:
        return int(self.ids.shape[1])

    def __len__(self) -> int:
        return int(self.ids.shape[0])


def compute_ground_truth(model: RelevanceModel, items, queries, K: int) -> GroundTruth:
    items = as_feature_matrix(items, model.item_dim, "items")
    queries = as_feature_matrix(queries, model.query_dim, "queries")
    ids = np.empty((len(queries), K), dtype=np.int64)
    scores = np.empty((len(queries), K), dtype=np.float64)
    results = map_ordered(lambda q: exhaustive_topk(model, items, q, K), queries)
    for i, res in enumerate(results):
        ids[i] = res.ids
        scores[i] = res.scores
    return GroundTruth(ids, scores)


@dataclass(frozen=True)
class CurvePoint:
    method: str
    param: int
    mean_unique_evals: float
    recall: float
    avg_relevance: float


class Method(Protocol):
    label: str

    def run(self, query: np.ndarray, param: int, K: int, query_index: int) -> SearchResult:
        ...


class RPGMethod:
    """Graph search with beam ``L = param``; the graph may be built on
    relevance vectors or on raw item features."""

    def __init__(self, graph: ProximityGraph, model: RelevanceModel, items,
                 label: str = "rpg", use_hierarchy: bool = True, upper_beam: int = 1):
        self.graph, self.model, self.label = graph, model, label
        self.items = as_feature_matrix(items, model.item_dim, "items")
        self.use_hierarchy, self.upper_beam = use_hierarchy, upper_beam

    def run(self, query, param, K, query_index=0):
        params = SearchParams(K=K, L=max(int(param), K), use_hierarchy=self.use_hierarchy,
                              upper_beam=self.upper_beam)
        return search_topk(self.graph, self.model, self.items, query, params)


class RPGPlusMethod(RPGMethod):
    """Graph search entered at the best item by embedding dot product.

    The query factor is fitted from ``probes`` seeded evaluations, which are
    kept in the ledger and therefore counted.
    """

    def __init__(self, graph, model, items, embeddings: EmbeddingSet, probes: int,
                 seed: int = 0, label: str = "rpg+", upper_beam: int = 1):
        super().__init__(graph, model, items, label, True, upper_beam)
        self.embeddings, self.probes, self.seed = embeddings, probes, seed

    def run(self, query, param, K, query_index=0):
        ledger = EvalLedger(self.model, self.items, query)
        w, _ = embed_query(self.model, self.items, self.embeddings, query, self.probes,
                           self.seed + query_index, ledger)
        entry = rpg_plus_entry(self.embeddings, w)
        params = SearchParams(K=K, L=max(int(param), K), entry_override=entry,
                              upper_beam=self.upper_beam)
        return search_topk(self.graph, self.model, self.items, query, params, ledger)


class TopScoredMethod:
    def __init__(self, index: TopScoredIndex, model: RelevanceModel, items,
                 label: str = "top-scored"):
        self.index, self.model, self.label = index, model, label
        self.items = as_feature_matrix(items, model.item_dim, "items")

    def run(self, query, param, K, query_index=0):
        n = min(max(int(param), K), len(self.items))
        return top_scored_search(self.index, self.model, self.items, query, n, K)


class EmbedRerankMethod:
    """Rerank the ``N = param`` best items by embedding dot product."""

    def __init__(self, embeddings: EmbeddingSet, model: RelevanceModel, items, probes: int,
                 seed: int = 0, label: str = "embed-rerank"):
        self.embeddings, self.model, self.label = embeddings, model, label
        self.items = as_feature_matrix(items, model.item_dim, "items")
        self.probes, self.seed = probes, seed

    def run(self, query, param, K, query_index=0):
        ledger = EvalLedger(self.model, self.items, query)
        w, _ = embed_query(self.model, self.items, self.embeddings, query, self.probes,
                           self.seed + query_index, ledger)
        n = min(max(int(param), K), len(self.items))
        return embedding_rerank_search(self.embeddings, w, self.model, self.items, query, n,
                                       K, ledger)


class ExhaustiveMethod:
    label = "exhaustive"

    def __init__(self, model: RelevanceModel, items):
        self.model = model
        self.items = as_feature_matrix(items, model.item_dim, "items")

    def run(self, query, param, K, query_index=0):
        return exhaustive_topk(self.model, self.items, query, K)


def evaluate_point(method: Method, param: int, queries, truth: GroundTruth) -> CurvePoint:
    recalls, evals, rels = [], [], []
    for i, q in enumerate(queries):
        res = method.run(q, param, truth.K, i)
        recalls.append(recall_at_k(res.ids, truth.ids[i]))
        evals.append(res.unique_evals)
        rels.append(float(np.mean(res.scores)))
    return CurvePoint(method.label, int(param), float(np.mean(evals)), float(np.mean(recalls)),
                      float(np.mean(rels)))


def sweep_curve(method: Method, budgets: Sequence[int], queries, truth: GroundTruth,
                ) -> list[CurvePoint]:
    if len(queries) != len(truth):
        raise InputError(f"{len(queries)} queries but ground truth for {len(truth)}")
    return [evaluate_point(method, b, queries, truth) for b in budgets]


def recall_at_budget(curve: Sequence[CurvePoint], budget: float) -> float:
    """Recall linearly interpolated at ``budget`` mean evaluations.

    Outside the measured range the nearest endpoint's recall is returned.
    """
    pts = sorted(curve, key=lambda p: (p.mean_unique_evals, p.recall))
    x = [p.mean_unique_evals for p in pts]
    y = np.maximum.accumulate([p.recall for p in pts])
    return float(np.interp(budget, x, y))


def write_curve_csv(points: Sequence[CurvePoint], path: str | os.PathLike, k: int,
                    seed: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in points:
            w.writerow([p.method, p.param, repr(p.mean_unique_evals), repr(p.recall),
                        repr(p.avg_relevance), k, seed])


def read_curve_csv(path: str | os.PathLike) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def geometric_budgets(lo: int, hi: int, n: int = 8) -> list[int]:
    """``n`` roughly log-spaced distinct integers from ``lo`` to ``hi``."""
    if hi <= lo:
        return [lo]
    vals = np.unique(np.round(np.geomspace(lo, hi, n)).astype(int))
    return vals.tolist()


# ---------------------------------------------------------------------------
# Ablation and scalability
# ---------------------------------------------------------------------------


def ablation_run(axis: str, values: Sequence, make_method: Callable[[object], Method],
                 budgets: Sequence[int], queries, truth: GroundTruth) -> dict:
    """One curve per parameter value; methods are relabelled ``label[axis=value]``."""
    if len(set(values)) != len(values):
        raise InputError(f"ablation values must be distinct: {list(values)}")
    curves = {}
    for value in values:
        method = make_method(value)
        method.label = f"{method.label}[{axis}={value}]"
        curves[value] = sweep_curve(method, budgets, queries, truth)
    return curves


def fit_power_law(sizes: Sequence[float], evals: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit of ``log(evals) = alpha * log(size) + c``."""
    if len(sizes) < 2:
        return math.nan, math.nan
    alpha, c = np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(evals, float)), 1)
    return float(alpha), float(c)


@dataclass
class ScalingReport:
    sizes: list[int]
    params: list[int | None]
    evals: list[float | None]
    recalls: list[float | None]
    saturated: list[int]
    alpha: float
    intercept: float


def min_param_for_recall(method: Method, queries, truth: GroundTruth, lo: int, hi: int,
                         target: float) -> tuple[int, CurvePoint] | None:
    """Smallest integer parameter in ``[lo, hi]`` whose mean recall reaches ``target``.

    Doubles the parameter from ``lo`` until the target is met, then bisects
    the last bracket; this assumes recall is non-decreasing in the parameter.
    Returns ``None`` when even ``hi`` falls short.
    """
    cache: dict[int, CurvePoint] = {}

    def point(p: int) -> CurvePoint:
        if p not in cache:
            cache[p] = evaluate_point(method, p, queries, truth)
        return cache[p]

    prev, p = lo - 1, lo
    while point(p).recall < target:
        if p >= hi:
            return None
        prev, p = p, min(2 * p, hi)
    lo, hi = prev + 1, p
    while lo < hi:
        mid = (lo + hi) // 2
        if point(mid).recall >= target:
            hi = mid
        else:
            lo = mid + 1
    return lo, point(lo)


def scalability_experiment(setup: Callable[[int], tuple], sizes: Sequence[int],
                           target_recall: float = 0.90, K: int = 5,
                           max_param: Callable[[int], int] | None = None) -> ScalingReport:
    """Evaluations needed to reach ``target_recall`` at each size, plus a power-law fit.

    ``setup(size)`` returns ``(method, queries, truth)``. The parameter is
    searched over ``[K, max_param(size)]`` (default ``size``). Sizes where the
    target is unreachable are listed in ``saturated`` and left out of the fit.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise InputError("sizes must be strictly ascending")
    params, evals, recalls, saturated = [], [], [], []
    for n in sizes:
        method, queries, truth = setup(n)
        hi = max_param(n) if max_param else n
        found = min_param_for_recall(method, queries, truth, K, max(hi, K), target_recall)
        if found is None:
            saturated.append(n)
            params.append(None)
            evals.append(None)
            recalls.append(None)
            continue
        p, pt = found
        params.append(p)
        evals.append(pt.mean_unique_evals)
        recalls.append(pt.recall)
    ok = [(n, e) for n, e in zip(sizes, evals) if e is not None]
    alpha, c = fit_power_law([n for n, _ in ok], [e for _, e in ok])
    return ScalingReport(sizes, params, evals, recalls, saturated, alpha, c)


def write_scaling_csv(report: ScalingReport, path: str | os.PathLike, method: str, k: int,
                      seed: int) -> None:
    """One row per size (``param`` holds the size) plus a final ``alpha`` row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((*CSV_COLUMNS, "size", "alpha"))
        for n, p, e, r in zip(report.sizes, report.params, report.evals, report.recalls):
            w.writerow([method, "" if p is None else p, "" if e is None else repr(e),
                        "" if r is None else repr(r), "", k, seed, n, ""])
        w.writerow([method, "", "", "", "", k, seed, "", repr(report.alpha)])

