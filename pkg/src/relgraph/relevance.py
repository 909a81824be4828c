"""Relevance vectors: describing items by their scores on sampled queries.

An item ``u`` is represented by ``r_u = (f(q_1, u), ..., f(q_d, u))`` for a
fixed random sample of ``d`` training queries. Two items are similar when
their relevance vectors are close in Euclidean distance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .models import RelevanceModel, as_feature_matrix
from .parallel import map_ordered


@dataclass(frozen=True)
class TrainQuerySample:
    query_ids: np.ndarray
    seed: int

    @property
    def d(self) -> int:
        return int(self.query_ids.shape[0])


@dataclass(frozen=True)
class RelevanceVectors:
    """``matrix[u, i] = f(train_queries[sample.query_ids[i]], items[u])`` as float32."""

    matrix: np.ndarray
    sample: TrainQuerySample | None = None

    @property
    def num_items(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def d(self) -> int:
        return int(self.matrix.shape[1])


def sample_train_queries(num_train: int, d: int, seed: int) -> TrainQuerySample:
    """Draw ``d`` distinct train-query indices uniformly without replacement."""
    if not 1 <= d <= num_train:
        raise InputError(f"need 1 <= d <= num_train, got d={d}, num_train={num_train}")
    rng = np.random.default_rng(seed)
    ids = rng.choice(num_train, size=d, replace=False).astype(np.int64)
    ids.setflags(write=False)
    return TrainQuerySample(ids, int(seed))


def compute_relevance_vectors(model: RelevanceModel, items, train_queries,
                              sample: TrainQuerySample) -> RelevanceVectors:
    items = as_feature_matrix(items, model.item_dim, "items")
    train_queries = as_feature_matrix(train_queries, model.query_dim, "train_queries")
    if sample.query_ids.size and sample.query_ids.max() >= train_queries.shape[0]:
        raise InputError("sample refers to train queries that do not exist")

    def column(qid):
        try:
            return model.score_unchecked(train_queries[qid], items).astype(np.float32)
        except NumericError as exc:
            raise NumericError(f"relevance of query {int(qid)}: {exc}") from exc

    out = np.empty((items.shape[0], sample.d), dtype=np.float32)
    for col, (qid, scores) in enumerate(zip(sample.query_ids,
                                            map_ordered(column, sample.query_ids))):
        if not np.all(np.isfinite(scores)):
            row = int(np.nonzero(~np.isfinite(scores))[0][0])
            raise NumericError(
                f"relevance of item {row} for query {int(qid)} overflows float32")
        out[:, col] = scores
    out.setflags(write=False)
    return RelevanceVectors(out, sample)


def item_similarity(r_u, r_v) -> float:
    """``-||r_u - r_v||`` accumulated in float64 (no ``1/d`` normalisation)."""
    a = np.asarray(r_u, dtype=np.float64)
    b = np.asarray(r_v, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"relevance vectors differ in shape: {a.shape} vs {b.shape}")
    diff = a - b
    return -float(np.sqrt(np.dot(diff, diff)))
