# %% [markdown]
# # Relevance models and relevance vectors
#
# A relevance model is a black box `f(q, v)`. We never get a similarity
# between two items, so we make one: score every item against the same
# `d` train queries and compare the resulting vectors.

# %%
import numpy as np

from relgraph import (
    DotModel,
    compute_relevance_vectors,
    evaluate,
    item_similarity,
    sample_train_queries,
)
from relgraph.datagen import GeneratorConfig, generate_bundle

# %%
evaluate(DotModel(2), [1, 2], [3, 4])  # 11.0

# %% [markdown]
# A random tree ensemble with pairwise (query x item) product features.
# Queries and items live in different spaces, just like user/item features.

# %%
bundle = generate_bundle(GeneratorConfig(kind="tree_ensemble", n_items=2000, n_train=500,
                                         n_test=20, n_pairwise=16, seed=0))
model = bundle.model
print(model, "trees:", len(model.trees))

scores = model.score(bundle.test_queries[0], bundle.items)
print("score range for one query:", scores.min(), scores.max())

# %% [markdown]
# Relevance vectors: `r_u[i] = f(q_i, u)` for `d` sampled train queries.

# %%
sample = sample_train_queries(len(bundle.train_queries), d=100, seed=0)
rv = compute_relevance_vectors(model, bundle.items, bundle.train_queries, sample)
print(rv.matrix.shape, rv.matrix.dtype)

# %% [markdown]
# Items that look alike to the model have close relevance vectors. Check
# it: for a query, the best item's nearest relevance-vector neighbors
# should score far above a random item.

# %%
q = bundle.test_queries[0]
best = int(np.argmax(scores))
sims = np.array([item_similarity(rv.matrix[best], r) for r in rv.matrix])
near = np.argsort(-sims)[1:11]
print("mean score, 10 nearest to the best item:", scores[near].mean())
print("mean score, all items:                  ", scores.mean())
