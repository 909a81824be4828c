"""Synthetic datasets: Gaussian-mixture items/queries and random relevance models."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .io import load_matrix, save_matrix
from .models import (
    DotModel,
    L2Model,
    Layer,
    MLPModel,
    PairwiseFeatureMap,
    RelevanceModel,
    TreeEnsembleModel,
    assemble_features,
    load_model,
    save_model,
)

BUNDLE_FILES = {
    "items": "items.rpgm",
    "train_queries": "train_queries.rpgm",
    "test_queries": "test_queries.rpgm",
    "model": "model.json",
}


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "l2"
    n_items: int = 1000
    n_train: int = 200
    n_test: int = 100
    query_dim: int = 16
    item_dim: int = 16
    n_clusters: int = 10
    cluster_spread: float = 3.0
    n_pairwise: int = 0
    n_trees: int = 50
    depth: int = 5
    hidden: tuple[int, ...] = (32,)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("l2", "dot", "mlp", "tree_ensemble"):
            raise InputError(f"unknown model kind {self.kind!r}")
        for name in ("n_items", "n_train", "n_test", "query_dim", "item_dim", "n_clusters"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.kind in ("l2", "dot") and self.query_dim != self.item_dim:
            raise InputError(f"{self.kind} bundles need query_dim == item_dim")
        if self.kind in ("l2", "dot") and self.n_pairwise:
            raise InputError(f"{self.kind} models take no pairwise features")
        if self.n_pairwise > self.query_dim * self.item_dim:
            raise InputError("more pairwise features than (query, item) index pairs")
        if self.kind == "tree_ensemble" and (self.n_trees < 1 or self.depth < 1):
            raise InputError("tree ensembles need n_trees >= 1 and depth >= 1")


@dataclass
class DatasetBundle:
    items: np.ndarray
    train_queries: np.ndarray
    test_queries: np.ndarray
    model: RelevanceModel


def gaussian_mixture(n: int, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``n`` points: a uniformly chosen center plus unit Gaussian noise."""
    labels = rng.integers(0, centers.shape[0], size=n)
    return (centers[labels] + rng.standard_normal((n, centers.shape[1]))).astype(np.float32)


def random_pairwise_map(query_dim: int, item_dim: int, n: int,
                        rng: np.random.Generator) -> PairwiseFeatureMap:
    flat = rng.choice(query_dim * item_dim, size=n, replace=False)
    return PairwiseFeatureMap(tuple((int(f // item_dim), int(f % item_dim)) for f in flat))


def random_mlp(query_dim: int, item_dim: int, hidden, feature_map: PairwiseFeatureMap,
               rng: np.random.Generator) -> MLPModel:
    """He-initialised ReLU network with an identity output layer."""
    sizes = [query_dim + item_dim + len(feature_map), *hidden, 1]
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        b = rng.standard_normal(n_out) * 0.1
        act = "identity" if i == len(sizes) - 2 else "relu"
        layers.append(Layer(w, b, act))
    return MLPModel(query_dim, item_dim, layers, feature_map)


def random_tree_ensemble(query_dim: int, item_dim: int, n_trees: int, depth: int,
                         feature_map: PairwiseFeatureMap, queries: np.ndarray,
                         items: np.ndarray, rng: np.random.Generator) -> TreeEnsembleModel:
    """Complete trees of the given depth with data-driven split thresholds.

    Each split feature is drawn uniformly from the assembled features; its
    threshold is that feature's value on a random (query, item) pair, so
    splits fall inside the data distribution.
    """
    n_features = query_dim + item_dim + len(feature_map)
    trees = []
    for _ in range(n_trees):
        nodes = []
        n_internal = 2 ** depth - 1
        for i in range(2 ** (depth + 1) - 1):
            if i < n_internal:
                f = int(rng.integers(n_features))
                x = assemble_features(queries[rng.integers(len(queries))],
                                      items[rng.integers(len(items))], feature_map)
                nodes.append({"feature": f, "threshold": float(x[f]),
                              "left": 2 * i + 1, "right": 2 * i + 2})
            else:
                nodes.append({"leaf": float(rng.standard_normal())})
        trees.append(nodes)
    return TreeEnsembleModel(query_dim, item_dim, trees, feature_map)


def generate_bundle(config: GeneratorConfig) -> DatasetBundle:
    """Draw items, train/test queries and a model, all from ``config.seed``.

    For ``l2``/``dot`` kinds queries and items share one mixture (the
    nearest-neighbour setting); otherwise they come from separate mixtures.
    """
    rng = np.random.default_rng(config.seed)
    c = config
    item_centers = rng.standard_normal((c.n_clusters, c.item_dim)) * c.cluster_spread
    if c.kind in ("l2", "dot"):
        query_centers = item_centers
    else:
        query_centers = rng.standard_normal((c.n_clusters, c.query_dim)) * c.cluster_spread
    items = gaussian_mixture(c.n_items, item_centers, rng)
    train = gaussian_mixture(c.n_train, query_centers, rng)
    test = gaussian_mixture(c.n_test, query_centers, rng)
    if c.kind == "l2":
        model = L2Model(c.item_dim)
    elif c.kind == "dot":
        model = DotModel(c.item_dim)
    else:
        fmap = random_pairwise_map(c.query_dim, c.item_dim, c.n_pairwise, rng)
        if c.kind == "mlp":
            model = random_mlp(c.query_dim, c.item_dim, c.hidden, fmap, rng)
        else:
            model = random_tree_ensemble(c.query_dim, c.item_dim, c.n_trees, c.depth, fmap,
                                         train, items, rng)
    return DatasetBundle(items, train, test, model)


def write_bundle(bundle: DatasetBundle, directory: str | os.PathLike) -> dict[str, Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in BUNDLE_FILES.items()}
    save_matrix(paths["items"], bundle.items)
    save_matrix(paths["train_queries"], bundle.train_queries)
    save_matrix(paths["test_queries"], bundle.test_queries)
    save_model(bundle.model, paths["model"])
    return paths


def read_bundle(directory: str | os.PathLike) -> DatasetBundle:
    d = Path(directory)
    return DatasetBundle(
        items=load_matrix(d / BUNDLE_FILES["items"]),
        train_queries=load_matrix(d / BUNDLE_FILES["train_queries"]),
        test_queries=load_matrix(d / BUNDLE_FILES["test_queries"]),
        model=load_model(d / BUNDLE_FILES["model"]),
    )
