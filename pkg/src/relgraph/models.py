"""Query-item relevance models.

Every model maps a (query, item) pair of float32 feature vectors to a float64
relevance score. Four concrete kinds are loadable from JSON model files:

* ``l2``            -- ``-||q - v||^2`` (query and item share one space)
* ``dot``           -- ``<q, v>``
* ``mlp``           -- a ReLU/identity feed-forward network
* ``tree_ensemble`` -- a sum of binary regression trees

``mlp`` and ``tree_ensemble`` consume the *assembled* feature vector
``concat(q, v, products)`` where ``products[k] = q[i_k] * v[j_k]`` for each
configured pairwise pair ``(i_k, j_k)``.

Scores of a pair are computed by the same scalar kernel whether the pair is
scored alone or as part of a batch, so a score never depends on the batch it
was computed in.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numba
import numpy as np

from .errors import ConfigurationError, InputError, LoadError, NumericError
from .parallel import map_ordered

MODEL_KINDS = ("l2", "dot", "mlp", "tree_ensemble")
ACTIVATIONS = {"identity": 0, "relu": 1}


# ---------------------------------------------------------------------------
# Feature vectors
# ---------------------------------------------------------------------------


def as_feature_vector(values, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate and convert ``values`` to a 1-D float32 feature vector."""
    vec = np.ascontiguousarray(values, dtype=np.float32)
    if vec.ndim != 1:
        raise InputError(f"{name}: expected a 1-D vector, got shape {vec.shape}")
    if dim is not None and vec.shape[0] != dim:
        raise InputError(f"{name}: expected length {dim}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise InputError(f"{name}: contains non-finite values")
    return vec


def as_feature_matrix(values, dim: int | None = None, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``values`` to a C-contiguous float32 matrix."""
    mat = np.ascontiguousarray(values, dtype=np.float32)
    if mat.ndim == 1 and dim == 0:
        mat = mat.reshape(-1, 0)
    if mat.ndim != 2:
        raise InputError(f"{name}: expected a 2-D matrix, got shape {mat.shape}")
    if dim is not None and mat.shape[1] != dim:
        raise InputError(f"{name}: expected {dim} columns, got {mat.shape[1]}")
    if not np.all(np.isfinite(mat)):
        bad = np.unique(np.nonzero(~np.isfinite(mat))[0])[:10]
        raise InputError(f"{name}: non-finite values in rows {bad.tolist()}")
    return mat


@dataclass(frozen=True)
class PairwiseFeatureMap:
    """Pairs ``(query_dim, item_dim)`` whose products extend the model input."""

    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def validate(self, query_dim: int, item_dim: int) -> None:
        for k, (qi, vi) in enumerate(self.pairs):
            if not (0 <= qi < query_dim and 0 <= vi < item_dim):
                raise ConfigurationError(
                    f"pairwise[{k}] = ({qi}, {vi}) out of range for "
                    f"query_dim={query_dim}, item_dim={item_dim}"
                )

    def index_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        arr = np.asarray(self.pairs, dtype=np.int64)
        return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])


def assemble_features(query, item, feature_map: PairwiseFeatureMap | None = None) -> np.ndarray:
    """Return ``concat(query, item, products)`` as a float64 vector.

    >>> assemble_features([1, 2], [3, 4], PairwiseFeatureMap([(0, 1)])).tolist()
    [1.0, 2.0, 3.0, 4.0, 4.0]
    """
    q = as_feature_vector(query, name="query")
    v = as_feature_vector(item, name="item")
    feature_map = feature_map or PairwiseFeatureMap()
    feature_map.validate(q.shape[0], v.shape[0])
    pq, pv = feature_map.index_arrays()
    out = np.empty(q.shape[0] + v.shape[0] + len(pq), dtype=np.float64)
    _assemble(q, v, pq, pv, out)
    return out


# ---------------------------------------------------------------------------
# Scalar kernels (one pair at a time, float64 accumulation)
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _assemble(q, v, pq, pv, out):
    nq = q.shape[0]
    nv = v.shape[0]
    for j in range(nq):
        out[j] = np.float64(q[j])
    for j in range(nv):
        out[nq + j] = np.float64(v[j])
    for k in range(pq.shape[0]):
        out[nq + nv + k] = np.float64(q[pq[k]]) * np.float64(v[pv[k]])


@numba.njit(cache=True, nogil=True)
def _l2_scores(q, items, out):
    for r in range(items.shape[0]):
        acc = 0.0
        for j in range(q.shape[0]):
            diff = np.float64(q[j]) - np.float64(items[r, j])
            acc += diff * diff
        out[r] = 0.0 - acc  # +0.0, not -0.0, for an exact match


@numba.njit(cache=True, nogil=True)
def _dot_scores(q, items, out):
    for r in range(items.shape[0]):
        acc = 0.0
        for j in range(q.shape[0]):
            acc += np.float64(q[j]) * np.float64(items[r, j])
        out[r] = acc


@numba.njit(cache=True)
def _mlp_forward(x, weights, w_off, b_off, n_in, n_out, act, buf_a, buf_b):
    cur = buf_a
    nxt = buf_b
    for j in range(x.shape[0]):
        cur[j] = x[j]
    for layer in range(n_in.shape[0]):
        wo = w_off[layer]
        bo = b_off[layer]
        ni = n_in[layer]
        for o in range(n_out[layer]):
            acc = weights[bo + o]
            row = wo + o * ni
            for i in range(ni):
                acc += weights[row + i] * cur[i]
            if act[layer] == 1 and acc < 0.0:
                acc = 0.0
            nxt[o] = acc
        cur, nxt = nxt, cur
    return cur[0]


@numba.njit(cache=True, nogil=True)
def _mlp_scores(q, items, pq, pv, weights, w_off, b_off, n_in, n_out, act, width, out):
    x = np.empty(q.shape[0] + items.shape[1] + pq.shape[0], dtype=np.float64)
    buf_a = np.empty(width, dtype=np.float64)
    buf_b = np.empty(width, dtype=np.float64)
    for r in range(items.shape[0]):
        _assemble(q, items[r], pq, pv, x)
        out[r] = _mlp_forward(x, weights, w_off, b_off, n_in, n_out, act, buf_a, buf_b)


@numba.njit(cache=True)
def _tree_value(x, root, feature, threshold, left, right, value):
    node = root
    while feature[node] >= 0:
        if x[feature[node]] < threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return value[node]


@numba.njit(cache=True, nogil=True)
def _tree_scores(q, items, pq, pv, roots, feature, threshold, left, right, value, out):
    x = np.empty(q.shape[0] + items.shape[1] + pq.shape[0], dtype=np.float64)
    for r in range(items.shape[0]):
        _assemble(q, items[r], pq, pv, x)
        acc = 0.0
        for t in range(roots.shape[0]):
            acc += _tree_value(x, roots[t], feature, threshold, left, right, value)
        out[r] = acc


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class RelevanceModel:
    """Base class for deterministic, immutable relevance models.

    Subclasses implement :meth:`_score_rows`, which scores one validated
    float32 query against a validated float32 item matrix.
    """

    kind: str = ""

    def __init__(self, query_dim: int, item_dim: int):
        if query_dim < 0 or item_dim < 0:
            raise ConfigurationError("dimensions must be non-negative")
        self.query_dim = int(query_dim)
        self.item_dim = int(item_dim)

    def score(self, query, items) -> np.ndarray:
        """Score one query against every row of ``items`` (float64 array)."""
        q = as_feature_vector(query, self.query_dim, "query")
        v = as_feature_matrix(items, self.item_dim, "items")
        return self.score_unchecked(q, v)

    def score_unchecked(self, query: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Like :meth:`score` but trusts that inputs are already validated."""
        out = np.empty(items.shape[0], dtype=np.float64)
        if items.shape[0]:
            self._score_rows(query, items, out)
            if not np.all(np.isfinite(out)):
                row = int(np.nonzero(~np.isfinite(out))[0][0])
                try:
                    self._raise_non_finite(query, items[row])
                except NumericError as exc:
                    raise NumericError(f"item row {row}: {exc}") from exc
        return out

    def score_matrix(self, queries, items) -> np.ndarray:
        """Return the ``len(queries) x len(items)`` matrix of relevance values."""
        qs = as_feature_matrix(queries, self.query_dim, "queries")
        v = as_feature_matrix(items, self.item_dim, "items")
        rows = map_ordered(lambda q: self.score_unchecked(q, v), qs)
        return np.array(rows, dtype=np.float64).reshape(qs.shape[0], v.shape[0])

    def evaluate(self, query, item) -> float:
        v = as_feature_vector(item, self.item_dim, "item")
        return float(self.score(query, v.reshape(1, -1))[0])

    def _score_rows(self, query, items, out):  # pragma: no cover - abstract
        raise NotImplementedError

    def _raise_non_finite(self, query, item):
        raise NumericError(f"{self.kind} model produced a non-finite score")

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError(f"{type(self).__name__} cannot be serialized")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(query_dim={self.query_dim}, item_dim={self.item_dim})"


def evaluate(model: RelevanceModel, query, item) -> float:
    """Relevance of ``item`` for ``query`` under ``model``."""
    return model.evaluate(query, item)


class L2Model(RelevanceModel):
    """Negative squared Euclidean distance between query and item."""

    kind = "l2"

    def __init__(self, dim: int):
        super().__init__(dim, dim)

    def _score_rows(self, query, items, out):
        _l2_scores(query, items, out)

    def to_dict(self):
        return {"type": "l2", "query_dim": self.query_dim, "item_dim": self.item_dim}


class DotModel(RelevanceModel):
    kind = "dot"

    def __init__(self, dim: int):
        super().__init__(dim, dim)

    def _score_rows(self, query, items, out):
        _dot_scores(query, items, out)

    def to_dict(self):
        return {"type": "dot", "query_dim": self.query_dim, "item_dim": self.item_dim}


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"


class MLPModel(RelevanceModel):
    """Feed-forward network ``y = act(W x + b)`` per layer, scalar output."""

    kind = "mlp"

    def __init__(self, query_dim: int, item_dim: int, layers: Sequence[Layer],
                 feature_map: PairwiseFeatureMap | None = None):
        super().__init__(query_dim, item_dim)
        self.feature_map = feature_map or PairwiseFeatureMap()
        self.feature_map.validate(query_dim, item_dim)
        self.layers = tuple(
            Layer(np.array(l.weights, dtype=np.float64), np.array(l.bias, dtype=np.float64),
                  l.activation)
            for l in layers
        )
        if not self.layers:
            raise ConfigurationError("layers: at least one layer is required")
        expected = query_dim + item_dim + len(self.feature_map)
        for idx, layer in enumerate(self.layers):
            path = f"layers[{idx}]"
            if layer.weights.ndim != 2:
                raise ConfigurationError(f"{path}.weights: expected a 2-D array")
            n_out, n_in = layer.weights.shape
            if n_in != expected:
                raise ConfigurationError(
                    f"{path}.weights: expected {expected} input columns, got {n_in}")
            if layer.bias.shape != (n_out,):
                raise ConfigurationError(
                    f"{path}.bias: expected length {n_out}, got {layer.bias.shape}")
            if layer.activation not in ACTIVATIONS:
                raise ConfigurationError(f"{path}.activation: unknown {layer.activation!r}")
            if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
                raise ConfigurationError(f"{path}: non-finite parameters")
            expected = n_out
        if expected != 1:
            raise ConfigurationError(
                f"layers[{len(self.layers) - 1}]: final layer must have one output, got {expected}")

        self._pq, self._pv = self.feature_map.index_arrays()
        self._n_in = np.array([l.weights.shape[1] for l in self.layers], dtype=np.int64)
        self._n_out = np.array([l.weights.shape[0] for l in self.layers], dtype=np.int64)
        self._act = np.array([ACTIVATIONS[l.activation] for l in self.layers], dtype=np.int64)
        chunks, w_off, b_off, pos = [], [], [], 0
        for l in self.layers:
            w_off.append(pos)
            chunks.append(l.weights.ravel())
            pos += l.weights.size
            b_off.append(pos)
            chunks.append(l.bias)
            pos += l.bias.size
        self._weights = np.concatenate(chunks)
        self._w_off = np.array(w_off, dtype=np.int64)
        self._b_off = np.array(b_off, dtype=np.int64)
        self._width = int(max(self._n_in.max(), self._n_out.max()))
        for arr in (self._weights, self._n_in, self._n_out, self._act, self._w_off, self._b_off):
            arr.setflags(write=False)

    def _score_rows(self, query, items, out):
        _mlp_scores(query, items, self._pq, self._pv, self._weights, self._w_off,
                    self._b_off, self._n_in, self._n_out, self._act, self._width, out)

    def _raise_non_finite(self, query, item):
        x = assemble_features(query, item, self.feature_map)
        with np.errstate(all="ignore"):
            for idx, layer in enumerate(self.layers):
                x = layer.weights @ x + layer.bias
                if layer.activation == "relu":
                    x = np.maximum(x, 0.0)
                if not np.all(np.isfinite(x)):
                    raise NumericError(f"mlp model: non-finite activation in layer {idx}")
        raise NumericError("mlp model: non-finite output")

    def to_dict(self):
        return {
            "type": "mlp",
            "query_dim": self.query_dim,
            "item_dim": self.item_dim,
            "pairwise": [list(p) for p in self.feature_map.pairs],
            "layers": [
                {"weights": l.weights.tolist(), "bias": l.bias.tolist(),
                 "activation": l.activation}
                for l in self.layers
            ],
        }


class TreeEnsembleModel(RelevanceModel):
    """Sum of binary regression trees.

    Each tree is a list of node dicts: split nodes
    ``{"feature", "threshold", "left", "right"}`` and leaves ``{"leaf": value}``;
    node 0 is the root. A sample goes left when ``x[feature] < threshold``.
    """

    kind = "tree_ensemble"

    def __init__(self, query_dim: int, item_dim: int, trees: Sequence[Sequence[dict]],
                 feature_map: PairwiseFeatureMap | None = None):
        super().__init__(query_dim, item_dim)
        self.feature_map = feature_map or PairwiseFeatureMap()
        self.feature_map.validate(query_dim, item_dim)
        self.n_features = query_dim + item_dim + len(self.feature_map)
        self.trees = tuple(tuple(dict(n) for n in t) for t in trees)
        if not self.trees:
            raise ConfigurationError("trees: at least one tree is required")

        feature, threshold, left, right, value, roots = [], [], [], [], [], []
        for t, nodes in enumerate(self.trees):
            self._check_tree(t, nodes)
            base = len(feature)
            roots.append(base)
            for node in nodes:
                if "leaf" in node:
                    feature.append(-1)
                    threshold.append(0.0)
                    left.append(-1)
                    right.append(-1)
                    value.append(float(node["leaf"]))
                else:
                    feature.append(int(node["feature"]))
                    threshold.append(float(node["threshold"]))
                    left.append(base + int(node["left"]))
                    right.append(base + int(node["right"]))
                    value.append(0.0)
        self._pq, self._pv = self.feature_map.index_arrays()
        self._roots = np.array(roots, dtype=np.int64)
        self._feature = np.array(feature, dtype=np.int64)
        self._threshold = np.array(threshold, dtype=np.float64)
        self._left = np.array(left, dtype=np.int64)
        self._right = np.array(right, dtype=np.int64)
        self._value = np.array(value, dtype=np.float64)
        for arr in (self._roots, self._feature, self._threshold, self._left, self._right,
                    self._value):
            arr.setflags(write=False)

    def _check_tree(self, t: int, nodes: Sequence[dict]) -> None:
        path = f"trees[{t}].nodes"
        if not nodes:
            raise ConfigurationError(f"{path}: empty tree")
        n = len(nodes)
        seen = [False] * n
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            node = nodes[i]
            if "leaf" in node:
                if not math.isfinite(float(node["leaf"])):
                    raise ConfigurationError(f"{path}[{i}].leaf: non-finite value")
                continue
            for key in ("feature", "threshold", "left", "right"):
                if key not in node:
                    raise ConfigurationError(f"{path}[{i}].{key}: missing")
            f = int(node["feature"])
            if not 0 <= f < self.n_features:
                raise ConfigurationError(
                    f"{path}[{i}].feature: {f} outside assembled length {self.n_features}")
            if not math.isfinite(float(node["threshold"])):
                raise ConfigurationError(f"{path}[{i}].threshold: non-finite value")
            for key in ("left", "right"):
                c = int(node[key])
                if not 0 < c < n:
                    raise ConfigurationError(f"{path}[{i}].{key}: invalid child index {c}")
                if seen[c]:
                    raise ConfigurationError(
                        f"{path}[{i}].{key}: node {c} has more than one parent")
                seen[c] = True
                stack.append(c)
        if not all(seen):
            raise ConfigurationError(f"{path}: node {seen.index(False)} unreachable from root")

    def _score_rows(self, query, items, out):
        _tree_scores(query, items, self._pq, self._pv, self._roots, self._feature,
                     self._threshold, self._left, self._right, self._value, out)

    def tree_scores(self, query, item) -> np.ndarray:
        """Per-tree contributions for one pair (their sum is the score)."""
        x = assemble_features(query, item, self.feature_map)
        return np.array([
            _tree_value(x, r, self._feature, self._threshold, self._left, self._right,
                        self._value)
            for r in self._roots
        ])

    def _raise_non_finite(self, query, item):
        parts = self.tree_scores(query, item)
        total = 0.0
        for t, p in enumerate(parts):
            total += float(p)
            if not math.isfinite(total):
                raise NumericError(f"tree_ensemble model: score overflow at tree {t}")
        raise NumericError("tree_ensemble model: non-finite output")

    def to_dict(self):
        return {
            "type": "tree_ensemble",
            "query_dim": self.query_dim,
            "item_dim": self.item_dim,
            "pairwise": [list(p) for p in self.feature_map.pairs],
            "trees": [{"nodes": [dict(n) for n in t]} for t in self.trees],
        }


class FunctionModel(RelevanceModel):
    """Wraps an arbitrary Python callable ``fn(query, items) -> scores``.

    Useful for black-box scorers and instrumentation; ``fn`` must be
    deterministic and must not mutate its inputs.
    """

    kind = "function"

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 query_dim: int, item_dim: int):
        super().__init__(query_dim, item_dim)
        self.fn = fn

    def _score_rows(self, query, items, out):
        out[:] = np.asarray(self.fn(query, items), dtype=np.float64)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def _require(obj: dict, key: str, kind, path: str = ""):
    if key not in obj:
        raise LoadError(f"{path}{key}: required field missing")
    val = obj[key]
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise LoadError(f"{path}{key}: expected an integer")
    elif not isinstance(val, kind):
        raise LoadError(f"{path}{key}: expected {getattr(kind, '__name__', kind)}")
    return val


def model_from_dict(spec: dict) -> RelevanceModel:
    """Build and validate a model from its JSON-compatible description."""
    if not isinstance(spec, dict):
        raise LoadError("model: expected a JSON object")
    kind = _require(spec, "type", str)
    if kind not in MODEL_KINDS:
        raise LoadError(f"type: unknown model type {kind!r}")
    qd = _require(spec, "query_dim", int)
    vd = _require(spec, "item_dim", int)
    if qd < 0 or vd < 0:
        raise LoadError("query_dim/item_dim: must be non-negative")
    raw_pairs = spec.get("pairwise", [])
    if not isinstance(raw_pairs, list):
        raise LoadError("pairwise: expected an array")
    for k, p in enumerate(raw_pairs):
        if (not isinstance(p, list) or len(p) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in p)):
            raise LoadError(f"pairwise[{k}]: expected [q_idx, i_idx]")
    fmap = PairwiseFeatureMap(tuple(tuple(p) for p in raw_pairs))
    try:
        if kind in ("l2", "dot"):
            if qd != vd:
                raise LoadError(f"item_dim: {kind} model requires query_dim == item_dim")
            if raw_pairs:
                raise LoadError(f"pairwise: not supported by {kind} models")
            return L2Model(qd) if kind == "l2" else DotModel(qd)
        if kind == "mlp":
            layers = []
            for idx, l in enumerate(_require(spec, "layers", list)):
                path = f"layers[{idx}]."
                if not isinstance(l, dict):
                    raise LoadError(f"layers[{idx}]: expected an object")
                w = _require(l, "weights", list, path)
                b = _require(l, "bias", list, path)
                act = l.get("activation", "identity")
                try:
                    w_arr = np.array(w, dtype=np.float64)
                    b_arr = np.array(b, dtype=np.float64)
                except (TypeError, ValueError) as exc:
                    raise LoadError(f"{path}weights/bias: not numeric arrays ({exc})") from exc
                layers.append(Layer(w_arr, b_arr, act))
            return MLPModel(qd, vd, layers, fmap)
        trees = []
        for t, tree in enumerate(_require(spec, "trees", list)):
            if not isinstance(tree, dict):
                raise LoadError(f"trees[{t}]: expected an object")
            nodes = _require(tree, "nodes", list, f"trees[{t}].")
            for i, node in enumerate(nodes):
                if not isinstance(node, dict):
                    raise LoadError(f"trees[{t}].nodes[{i}]: expected an object")
            trees.append(nodes)
        return TreeEnsembleModel(qd, vd, trees, fmap)
    except ConfigurationError as exc:
        raise LoadError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise LoadError(f"model: {exc}") from exc


def load_model(path: str | os.PathLike) -> RelevanceModel:
    """Load a model file; all invariants are checked here, not at scoring time."""
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise LoadError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(spec)


def save_model(model: RelevanceModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")
