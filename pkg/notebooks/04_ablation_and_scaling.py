# %% [markdown]
# # Ablations and scaling
#
# How the relevance-vector length `d` and the degree `M` change the
# recall/evaluation trade-off, and how the evaluations needed for 0.9
# recall grow with the number of items.

# %%
from relgraph import BuildParams, build_graph
from relgraph.datagen import GeneratorConfig, generate_bundle
from relgraph.evaluation import (
    RPGMethod,
    ablation_run,
    compute_ground_truth,
    recall_at_budget,
    scalability_experiment,
)
from relgraph.relevance import compute_relevance_vectors, sample_train_queries

# %%
b = generate_bundle(GeneratorConfig(kind="tree_ensemble", n_items=5000, n_train=1000,
                                    n_test=100, n_pairwise=16, seed=0))
truth = compute_ground_truth(b.model, b.items, b.test_queries, 5)
budgets = [16, 32, 64, 128, 256]


def vectors(d):
    return compute_relevance_vectors(b.model, b.items, b.train_queries,
                                     sample_train_queries(1000, d, 0))


by_d = ablation_run("d", [10, 100, 1000],
                    lambda d: RPGMethod(build_graph(vectors(d)), b.model, b.items),
                    budgets, b.test_queries, truth)
for d, curve in by_d.items():
    print(f"d={d:5d}  recall@5 at 250 evals: {recall_at_budget(curve, 250):.3f}")

# %% [markdown]
# Longer relevance vectors help, with diminishing returns past ~100.

# %%
v100 = vectors(100)
by_m = ablation_run("M", [4, 8, 16],
                    lambda M: RPGMethod(build_graph(v100, BuildParams(M=M)), b.model, b.items),
                    budgets, b.test_queries, truth)
for M, curve in by_m.items():
    print(f"M={M:3d}  recall@5 at 400 evals: {recall_at_budget(curve, 400):.3f}")

# %% [markdown]
# Scaling on the L2 bundle: fit `evals ~ size ** alpha` at 0.9 recall.

# %%
full = generate_bundle(GeneratorConfig(kind="l2", n_items=30_000, n_train=1000, n_test=50,
                                       seed=0))
sample = sample_train_queries(1000, 100, 0)


def setup(n):
    items = full.items[:n]
    vecs = compute_relevance_vectors(full.model, items, full.train_queries, sample)
    return (RPGMethod(build_graph(vecs), full.model, items), full.test_queries,
            compute_ground_truth(full.model, items, full.test_queries, 5))


report = scalability_experiment(setup, [1000, 3000, 10_000, 30_000])
for n, e in zip(report.sizes, report.evals):
    print(f"|S|={n:6d}  evals for 0.9 recall: {e:.0f}")
print(f"alpha = {report.alpha:.3f}")
