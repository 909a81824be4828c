import numpy as np
import pytest
from scipy.stats import spearmanr

from relgraph.errors import InputError
from relgraph.models import DotModel, L2Model, evaluate
from relgraph.relevance import compute_relevance_vectors, item_similarity, sample_train_queries


def test_sample_full_is_permutation():
    s = sample_train_queries(5, 5, seed=11)
    assert sorted(s.query_ids.tolist()) == [0, 1, 2, 3, 4]


def test_sample_deterministic_and_seed_sensitive():
    a = sample_train_queries(1000, 100, 42)
    b = sample_train_queries(1000, 100, 42)
    assert a.query_ids.tolist() == b.query_ids.tolist()
    assert len(set(a.query_ids.tolist())) == 100
    c = sample_train_queries(1000, 100, 1)
    d = sample_train_queries(1000, 100, 2)
    assert c.query_ids.tolist() != d.query_ids.tolist()


@pytest.mark.parametrize("d", [0, 6])
def test_sample_bad_d(d):
    with pytest.raises(InputError):
        sample_train_queries(5, d, 0)


def test_dot_relevance_rows():
    sample = sample_train_queries(1, 1, 0)
    rv = compute_relevance_vectors(DotModel(2), [[1, 0], [0, 1]], [[2, 3]], sample)
    assert rv.matrix.tolist() == [[2.0], [3.0]]
    assert rv.matrix.dtype == np.float32


def test_l2_item_equal_to_query_is_row_max():
    rng = np.random.default_rng(0)
    queries = rng.standard_normal((4, 3)).astype(np.float32)
    items = np.vstack([queries[2], rng.standard_normal((5, 3))]).astype(np.float32)
    sample = sample_train_queries(4, 4, 0)
    rv = compute_relevance_vectors(L2Model(3), items, queries, sample)
    col = int(np.nonzero(sample.query_ids == 2)[0][0])
    assert rv.matrix[0, col] == 0.0
    assert rv.matrix[0].max() == 0.0


def test_relevance_matrix_loop_oracle(small_mlp_bundle):
    b = small_mlp_bundle
    items = b.items[:50]
    sample = sample_train_queries(len(b.train_queries), 10, 4)
    rv = compute_relevance_vectors(b.model, items, b.train_queries, sample)
    for u in range(50):
        for i, qid in enumerate(sample.query_ids):
            expected = np.float32(evaluate(b.model, b.train_queries[qid], items[u]))
            assert rv.matrix[u, i] == expected


def test_similarity_examples():
    assert item_similarity([1, 2, 3], [1, 2, 3]) == 0.0
    assert item_similarity([0, 0], [3, 4]) == -5.0
    with pytest.raises(InputError):
        item_similarity([0, 0], [0, 0, 0])


def test_similarity_rank_stability_grows_with_d():
    # dot model: similarities from a short relevance vector should agree
    # (rank-wise) with those from a long one, and more so as d grows
    rng = np.random.default_rng(3)
    dim = 8
    items = rng.standard_normal((200, dim)).astype(np.float32)
    queries = rng.standard_normal((1000, dim)).astype(np.float32)
    model = DotModel(dim)
    vecs = {d: compute_relevance_vectors(model, items, queries,
                                         sample_train_queries(1000, d, 5)).matrix
            for d in (10, 100, 1000)}
    pairs = rng.integers(0, 200, size=(2000, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]

    def sims(d):
        r = vecs[d]
        return [item_similarity(r[a], r[b]) for a, b in pairs]

    ref = sims(1000)
    rho10 = spearmanr(sims(10), ref).statistic
    rho100 = spearmanr(sims(100), ref).statistic
    assert rho10 > 0
    assert rho100 > rho10
