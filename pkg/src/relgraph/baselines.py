"""Comparison retrieval methods.

* Top-scored: rerank the ``N`` items with the highest mean train-query relevance.
* Embedding rerank: take the ``N`` best items by dot product of low-rank
  factors and rerank them with the true model. The factors come from a
  truncated SVD of the train relevance matrix; they stand in for a learned
  two-tower candidate generator and are *not* a reproduction of one.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, LoadError, NumericError
from .io import load_matrix, save_matrix
from .models import RelevanceModel, as_feature_matrix
from .search import EvalLedger, SearchResult, rank_ids


@dataclass(frozen=True)
class TopScoredIndex:
    order: np.ndarray
    means: np.ndarray


def build_top_scored(model: RelevanceModel, items, train_queries) -> TopScoredIndex:
    items = as_feature_matrix(items, model.item_dim, "items")
    train_queries = as_feature_matrix(train_queries, model.query_dim, "train_queries")
    if not len(items) or not len(train_queries):
        raise InputError("top-scored index needs at least one item and one train query")
    total = np.zeros(items.shape[0], dtype=np.float64)
    for q in train_queries:
        total += model.score_unchecked(q, items)
    means = total / train_queries.shape[0]
    order = np.lexsort((np.arange(items.shape[0]), -means))
    return TopScoredIndex(order.astype(np.int64), means)


def top_scored_search(index: TopScoredIndex, model: RelevanceModel, items, query, N: int,
                      K: int, ledger: EvalLedger | None = None) -> SearchResult:
    if ledger is None:
        ledger = EvalLedger(model, items, query)
    if not K <= N <= ledger.num_items:
        raise InputError(f"need K <= N <= |S|, got K={K}, N={N}, |S|={ledger.num_items}")
    cands = index.order[:N].tolist()
    scores = ledger.score(cands)
    return SearchResult(rank_ids(cands, scores, K), ledger.unique_evals, N)


@dataclass(frozen=True)
class EmbeddingSet:
    """Rank-``r`` factors with ``item_factors @ train_query_factors.T ~ F``."""

    item_factors: np.ndarray
    train_query_factors: np.ndarray
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.singular_values.shape[0])

    def reconstruct(self) -> np.ndarray:
        return self.item_factors @ self.train_query_factors.T


def factorize_relevance_matrix(relevance_matrix, r: int) -> EmbeddingSet:
    """Truncated SVD split symmetrically: ``U_r sqrt(S_r)`` and ``V_r sqrt(S_r)``."""
    F = np.asarray(relevance_matrix, dtype=np.float64)
    if F.ndim != 2:
        raise InputError(f"expected a 2-D relevance matrix, got shape {F.shape}")
    if not 1 <= r <= min(F.shape):
        raise InputError(f"rank must be in 1..{min(F.shape)}, got {r}")
    if not np.all(np.isfinite(F)):
        raise InputError("relevance matrix contains non-finite values")
    try:
        U, s, Vt = scipy.linalg.svd(F, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        try:
            U, s, Vt = scipy.linalg.svd(F, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"SVD of {F.shape} matrix did not converge (gesdd and gesvd drivers): {exc}"
            ) from exc
    root = np.sqrt(s[:r])
    return EmbeddingSet(U[:, :r] * root, Vt[:r].T * root, s[:r].copy())


def embed_query(model: RelevanceModel, items, item_factors, query, m: int, seed: int,
                ledger: EvalLedger | None = None) -> tuple[np.ndarray, int]:
    """Least-squares query factor from ``m`` seeded probe evaluations.

    Solves ``min_w sum_v (<item_factor_v, w> - f(query, v))^2`` over the probe
    items (minimum-norm solution when the system is rank deficient). Probe
    scores are recorded in ``ledger`` when one is given.
    """
    factors = np.asarray(getattr(item_factors, "item_factors", item_factors), dtype=np.float64)
    if ledger is None:
        ledger = EvalLedger(model, items, query)
    n = ledger.num_items
    if factors.shape[0] != n:
        raise InputError(f"{factors.shape[0]} item factors for {n} items")
    if not 1 <= m <= n:
        raise InputError(f"probe count must be in 1..{n}, got {m}")
    probes = np.sort(np.random.default_rng(seed).choice(n, size=m, replace=False))
    y = np.array(ledger.score(probes.tolist()))
    w, *_ = np.linalg.lstsq(factors[probes], y, rcond=None)
    return w, m


def embedding_rerank_search(embeddings, query_factor, model: RelevanceModel, items, query,
                            N: int, K: int, ledger: EvalLedger | None = None) -> SearchResult:
    """Rerank the top-``N`` items by factor dot product with the true model.

    Dot products are not charged as evaluations; ``unique_evals`` counts the
    distinct items scored through ``ledger`` (including any probes already in it).
    """
    factors = np.asarray(getattr(embeddings, "item_factors", embeddings), dtype=np.float64)
    if ledger is None:
        ledger = EvalLedger(model, items, query)
    if not K <= N <= ledger.num_items:
        raise InputError(f"need K <= N <= |S|, got K={K}, N={N}, |S|={ledger.num_items}")
    qf = np.asarray(query_factor, dtype=np.float64)
    if qf.shape != (factors.shape[1],):
        raise InputError(f"query factor has shape {qf.shape}, expected ({factors.shape[1]},)")
    dots = factors @ qf
    cands = np.lexsort((np.arange(len(dots)), -dots))[:N].tolist()
    scores = ledger.score(cands)
    return SearchResult(rank_ids(cands, scores, K), ledger.unique_evals, N)


def save_embeddings(emb: EmbeddingSet, prefix: str | os.PathLike) -> None:
    """Write ``<prefix>.items.rpgm``, ``<prefix>.queries.rpgm`` and ``<prefix>.json``."""
    prefix = str(prefix)
    save_matrix(prefix + ".items.rpgm", emb.item_factors)
    save_matrix(prefix + ".queries.rpgm", emb.train_query_factors)
    with open(prefix + ".json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"rank": emb.rank, "singular_values": emb.singular_values.tolist()}, fh)
        fh.write("\n")


def load_embeddings(prefix: str | os.PathLike) -> EmbeddingSet:
    prefix = str(prefix)
    try:
        with open(prefix + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read embedding sidecar {prefix}.json: {exc}") from exc
    items = load_matrix(prefix + ".items.rpgm").astype(np.float64)
    queries = load_matrix(prefix + ".queries.rpgm").astype(np.float64)
    sv = np.asarray(meta.get("singular_values", []), dtype=np.float64)
    if meta.get("rank") != len(sv) or items.shape[1] != len(sv) or queries.shape[1] != len(sv):
        raise LoadError(f"{prefix}: rank disagrees with factor matrices")
    return EmbeddingSet(items, queries, sv)

