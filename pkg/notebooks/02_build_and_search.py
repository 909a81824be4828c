# %% [markdown]
# # Build a graph and search it
#
# Sanity mode: with the negative squared L2 model, the top items are the
# nearest neighbors of the query. We can see how many model calls the
# graph search needs compared with scoring everything.

# %%
import numpy as np

from relgraph import (
    BuildParams,
    SearchParams,
    build_graph,
    compute_relevance_vectors,
    exhaustive_topk,
    sample_train_queries,
    search_topk,
    validate_graph,
)
from relgraph.datagen import GeneratorConfig, generate_bundle

# %%
bundle = generate_bundle(GeneratorConfig(kind="l2", n_items=10_000, n_train=1000, n_test=50,
                                         query_dim=32, item_dim=32, seed=0))
sample = sample_train_queries(1000, 100, seed=0)
vectors = compute_relevance_vectors(bundle.model, bundle.items, bundle.train_queries, sample)
graph = build_graph(vectors, BuildParams(M=8))

report = validate_graph(graph)
print("layers:", graph.num_layers, "mean degree:", round(graph.mean_degree(0), 2))
print("valid:", report.ok, "reachable:", report.reachable, "/", report.num_items)

# %% [markdown]
# Larger beams cost more evaluations and buy recall.

# %%
for L in (16, 64, 160):
    recalls, evals = [], []
    for q in bundle.test_queries:
        res = search_topk(graph, bundle.model, bundle.items, q, SearchParams(K=5, L=L))
        truth = exhaustive_topk(bundle.model, bundle.items, q, 5)
        recalls.append(len(set(res.ids) & set(truth.ids)) / 5)
        evals.append(res.unique_evals)
    print(f"L={L:4d}  recall@5={np.mean(recalls):.3f}  evals={np.mean(evals):7.1f}"
          f"  ({np.mean(evals) / len(bundle.items):.1%} of items)")
