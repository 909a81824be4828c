"""Top-K retrieval by graph exploration guided by the relevance model.

Every model call goes through an :class:`EvalLedger`, which caches scores per
query so that each item is evaluated at most once and the number of distinct
evaluations can be reported exactly.
"""
from __future__ import annotations

import heapq
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InputError
from .graph import ProximityGraph
from .models import RelevanceModel, as_feature_matrix, as_feature_vector


@dataclass(frozen=True)
class SearchParams:
    K: int = 5
    L: int = 64
    entry_override: int | None = None
    use_hierarchy: bool = True
    upper_beam: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise InputError(f"K must be >= 1, got {self.K}")
        if self.L < self.K:
            raise InputError(f"beam width L={self.L} must be >= K={self.K}")
        if self.upper_beam < 1:
            raise InputError("upper_beam must be >= 1")


@dataclass
class SearchResult:
    hits: list[tuple[int, float]]
    unique_evals: int
    visited: int = 0

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.hits]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.hits]


class EvalLedger:
    """Per-query score cache and evaluation counter.

    ``unique_evals`` is always ``len(cache)``: re-scoring a cached item costs
    nothing. ``visits`` accumulates the visited-set sizes reported by
    :func:`explore` (a vertex visited on several layers counts once per layer).
    """

    def __init__(self, model: RelevanceModel, items, query, *, validated: bool = False):
        self.model = model
        if validated:
            self.items, self.query = items, query
        else:
            self.items = as_feature_matrix(items, model.item_dim, "items")
            self.query = as_feature_vector(query, model.query_dim, "query")
        self.cache: dict[int, float] = {}
        self.visits = 0

    @property
    def unique_evals(self) -> int:
        return len(self.cache)

    @property
    def num_items(self) -> int:
        return int(self.items.shape[0])

    def score(self, ids: Sequence[int]) -> list[float]:
        """Scores for ``ids``; only uncached items reach the model."""
        cache = self.cache
        todo = [i for i in dict.fromkeys(ids) if i not in cache]
        if todo:
            idx = np.asarray(todo, dtype=np.int64)
            if idx.min() < 0 or idx.max() >= self.num_items:
                raise InputError(f"item ids out of range 0..{self.num_items - 1}")
            fresh = self.model.score_unchecked(self.query, self.items[idx])
            cache.update(zip(todo, fresh.tolist()))
        return [cache[i] for i in ids]

    def score_one(self, item: int) -> float:
        return self.score([item])[0]

    def record(self, ids: Iterable[int], scores: Iterable[float]) -> None:
        """Add scores computed elsewhere for this same query."""
        for i, s in zip(ids, scores):
            self.cache.setdefault(int(i), float(s))

    def top(self, n: int) -> list[tuple[int, float]]:
        return sorted(self.cache.items(), key=lambda t: (-t[1], t[0]))[:n]


def _neighbor_fn(neighbors) -> Callable[[int], Sequence[int]]:
    if callable(neighbors):
        return neighbors
    if isinstance(neighbors, Mapping):
        return lambda v: neighbors[v]
    return lambda v: neighbors[v]


def _has_vertex(neighbors, v: int) -> bool:
    if isinstance(neighbors, Mapping):
        return v in neighbors
    if callable(neighbors):
        try:
            neighbors(v)
        except (KeyError, IndexError, InputError):
            return False
        return True
    return 0 <= v < len(neighbors)


def explore(neighbors, ledger: EvalLedger, entry: int, L: int) -> list[tuple[int, float]]:
    """Beam exploration from ``entry`` with best-list capacity ``L``.

    ``neighbors`` is a callable ``v -> ids``, a mapping, or a list of
    neighbor lists. Returns the best-list as ``(id, score)`` pairs, most
    relevant first (ties by ascending id).

    The candidate set ``C`` is a max-heap and the best-list ``W`` a min-heap.
    Each round pops the best candidate and stops once it is worse than the
    least relevant element ``b`` of ``W``. ``b`` is peeked, never popped, and
    is re-read for every neighbor, so a neighbor enters ``W`` whenever it
    beats the current worst entry. Removal happens only when ``W`` overflows.
    """
    if L < 1:
        raise InputError(f"beam width must be >= 1, got {L}")
    if not _has_vertex(neighbors, entry):
        raise InputError(f"entry vertex {entry} is not in the graph layer")
    adjacent = _neighbor_fn(neighbors)
    s0 = ledger.score_one(entry)
    cand = [(-s0, entry)]
    best = [(s0, -entry)]
    visited = {entry}
    while cand:
        neg, curr = heapq.heappop(cand)
        if -neg < best[0][0]:
            break
        fresh = [v for v in map(int, adjacent(curr)) if v not in visited]
        if not fresh:
            continue
        visited.update(fresh)
        for v, s in zip(fresh, ledger.score(fresh)):
            if s > best[0][0] or len(best) < L:
                heapq.heappush(cand, (-s, v))
                heapq.heappush(best, (s, -v))
                if len(best) > L:
                    heapq.heappop(best)
    ledger.visits += len(visited)
    return sorted(((-nid, s) for s, nid in best), key=lambda t: (-t[1], t[0]))


def search_topk(graph: ProximityGraph, model: RelevanceModel, items, query,
                params: SearchParams, ledger: EvalLedger | None = None) -> SearchResult:
    """Retrieve the top-K items for ``query``.

    With ``use_hierarchy`` the entry is refined by greedy descent
    (beam ``upper_beam``) through the upper layers the entry belongs to, then
    layer 0 is explored with beam ``L``. One ledger serves all layers.
    """
    if ledger is None:
        ledger = EvalLedger(model, items, query)
    if ledger.num_items != graph.num_items:
        raise InputError(
            f"graph has {graph.num_items} vertices but {ledger.num_items} items were given")
    entry = graph.entry_vertex if params.entry_override is None else int(params.entry_override)
    if not 0 <= entry < graph.num_items:
        raise InputError(f"entry vertex {entry} out of range")
    if params.use_hierarchy:
        for layer in range(int(graph.levels[entry]), 0, -1):
            beam = explore(lambda v, l=layer: graph.neighbors(l, v), ledger, entry,
                           params.upper_beam)
            entry = beam[0][0]
    beam = explore(lambda v: graph.neighbors(0, v), ledger, entry, params.L)
    return SearchResult(beam[: params.K], ledger.unique_evals, ledger.visits)


def rpg_plus_entry(item_factors, query_embedding) -> int:
    """Item with the largest dot product with ``query_embedding`` (ties: lowest id).

    Uses no relevance-model evaluations.
    """
    factors = getattr(item_factors, "item_factors", item_factors)
    factors = np.asarray(factors, dtype=np.float64)
    q = np.asarray(query_embedding, dtype=np.float64)
    if factors.ndim != 2 or factors.shape[0] == 0:
        raise InputError("item factors must be a non-empty 2-D matrix")
    if q.shape != (factors.shape[1],):
        raise InputError(
            f"query embedding has shape {q.shape}, expected ({factors.shape[1]},)")
    return int(np.argmax(factors @ q))


def rank_ids(ids, scores, n: int | None = None) -> list[tuple[int, float]]:
    """``(id, score)`` pairs sorted by score descending, ties by id ascending."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids, -scores))
    if n is not None:
        order = order[:n]
    return [(int(ids[i]), float(scores[i])) for i in order]


def exhaustive_topk(model: RelevanceModel, items, query, K: int) -> SearchResult:
    """Exact top-K by scoring every item."""
    items = as_feature_matrix(items, model.item_dim, "items")
    query = as_feature_vector(query, model.query_dim, "query")
    n = items.shape[0]
    if not 1 <= K <= n:
        raise InputError(f"K must be in 1..{n}, got {K}")
    scores = model.score_unchecked(query, items)
    return SearchResult(rank_ids(np.arange(n), scores, K), n, n)
