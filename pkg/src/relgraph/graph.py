"""Layered proximity graphs over item vectors (HNSW-style construction).

Vertices are inserted one at a time. Each vertex draws a top level from a
geometric law; on every layer it belongs to, it is linked to neighbors chosen
among the results of a beam search over the vertices already present. Layer 0
holds every item and caps degrees at ``2 * M``; upper layers cap at ``M``.

Distances are Euclidean, accumulated in float64; equal distances are ordered
by ascending item id so builds are reproducible bit for bit.
"""
from __future__ import annotations

import heapq
import math
import os
import struct
from collections import deque
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InputError, LoadError, VersionError
from .relevance import RelevanceVectors

GRAPH_MAGIC = b"RPGG"
GRAPH_VERSION = 1
SELECTION_MODES = ("simple", "heuristic")
MAX_LEVEL = 255  # top level is stored as u8


@dataclass(frozen=True)
class BuildParams:
    M: int = 8
    ef_construction: int = 100
    level_multiplier: float | None = None  # defaults to 1 / ln(M)
    seed: int = 0
    neighbor_selection: str = "heuristic"

    def __post_init__(self):
        if self.M < 2:
            raise InputError(f"M must be >= 2, got {self.M}")
        if self.ef_construction < self.M:
            raise InputError(
                f"ef_construction ({self.ef_construction}) must be >= M ({self.M})")
        if self.neighbor_selection not in SELECTION_MODES:
            raise InputError(f"unknown neighbor_selection {self.neighbor_selection!r}")
        if self.level_multiplier is None:
            object.__setattr__(self, "level_multiplier", 1.0 / math.log(self.M))
        if not self.level_multiplier > 0:
            raise InputError("level_multiplier must be positive")

    def degree_cap(self, layer: int) -> int:
        return 2 * self.M if layer == 0 else self.M


def level_from_uniform(u: float, level_multiplier: float) -> int:
    """``floor(-ln(u) * level_multiplier)`` for ``u`` in ``(0, 1]``."""
    if not 0.0 < u <= 1.0:
        raise InputError(f"u must lie in (0, 1], got {u}")
    return min(int(math.floor(-math.log(u) * level_multiplier)), MAX_LEVEL)


def assign_level(rng: np.random.Generator, level_multiplier: float) -> int:
    return level_from_uniform(1.0 - rng.random(), level_multiplier)


def draw_levels(num_items: int, params: BuildParams) -> np.ndarray:
    """Top level for every item, drawn in id order from ``params.seed``.

    Item 0 is lifted to the highest drawn level so that it can serve as the
    fixed search entry point on the top layer.
    """
    rng = np.random.default_rng(params.seed)
    levels = np.array([assign_level(rng, params.level_multiplier) for _ in range(num_items)],
                      dtype=np.int64)
    if num_items:
        levels[0] = levels.max()
    return levels


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _dist(vectors, a, b):
    acc = 0.0
    for j in range(vectors.shape[1]):
        t = np.float64(vectors[a, j]) - np.float64(vectors[b, j])
        acc += t * t
    return np.sqrt(acc)


@numba.njit(cache=True)
def _search_layer(vectors, base, eps, ef, layer, adj, cnt, row_start, visited, tag):
    """Beam search for ``base`` on one layer; returns (ids, dists) ascending."""
    cand = [(0.0, np.int64(0))]
    cand.pop()
    res = [(0.0, np.int64(0))]  # max-heap via (-dist, -id)
    res.pop()
    for e in eps:
        if visited[e] == tag:
            continue
        visited[e] = tag
        d = _dist(vectors, base, e)
        heapq.heappush(cand, (d, e))
        heapq.heappush(res, (-d, -e))
    while len(res) > ef:
        heapq.heappop(res)
    while len(cand) > 0:
        d, c = heapq.heappop(cand)
        wd = -res[0][0]
        wid = -res[0][1]
        if d > wd or (d == wd and c > wid):
            break
        r = row_start[c] + layer
        for k in range(cnt[r]):
            e = np.int64(adj[r, k])
            if visited[e] == tag:
                continue
            visited[e] = tag
            de = _dist(vectors, base, e)
            wd = -res[0][0]
            wid = -res[0][1]
            if len(res) < ef or de < wd or (de == wd and e < wid):
                heapq.heappush(cand, (de, e))
                heapq.heappush(res, (-de, -e))
                if len(res) > ef:
                    heapq.heappop(res)
    m = len(res)
    ids = np.empty(m, dtype=np.int64)
    dists = np.empty(m, dtype=np.float64)
    for i in range(m - 1, -1, -1):
        nd, nid = heapq.heappop(res)
        ids[i] = -nid
        dists[i] = -nd
    return ids, dists


@numba.njit(cache=True)
def _select(vectors, ids, dists, m, heuristic, out):
    """Pick up to ``m`` of the (ascending-sorted) candidates into ``out``."""
    k = 0
    for i in range(ids.shape[0]):
        if k >= m:
            break
        if heuristic:
            keep = True
            for j in range(k):
                if _dist(vectors, ids[i], out[j]) < dists[i]:
                    keep = False
                    break
            if not keep:
                continue
        out[k] = ids[i]
        k += 1
    return k


@numba.njit(cache=True)
def _sort_candidates(ids, dists):
    order = np.argsort(ids, kind="mergesort")
    ids = ids[order]
    dists = dists[order]
    order = np.argsort(dists, kind="mergesort")
    return ids[order], dists[order]


@numba.njit(cache=True)
def _insert(vectors, v, levels, row_start, adj, cnt, state, m, ef, heuristic, visited, tagbox):
    lv = levels[v]
    if state[2] == 0:
        state[0] = v
        state[1] = lv
        state[2] = 1
        return
    top = state[1]
    eps = np.empty(1, dtype=np.int64)
    eps[0] = state[0]
    for layer in range(top, lv, -1):
        tagbox[0] += 1
        ids, _ = _search_layer(vectors, v, eps, 1, layer, adj, cnt, row_start, visited,
                               tagbox[0])
        eps = ids[:1].copy()
    sel = np.empty(m, dtype=np.int64)
    for layer in range(min(lv, top), -1, -1):
        tagbox[0] += 1
        ids, dists = _search_layer(vectors, v, eps, ef, layer, adj, cnt, row_start, visited,
                                   tagbox[0])
        k = _select(vectors, ids, dists, m, heuristic, sel)
        r = row_start[v] + layer
        for j in range(k):
            adj[r, j] = sel[j]
        cnt[r] = k
        cap = 2 * m if layer == 0 else m
        for j in range(k):
            n = sel[j]
            rn = row_start[n] + layer
            c = cnt[rn]
            if c < cap:
                adj[rn, c] = v
                cnt[rn] = c + 1
                continue
            cids = np.empty(c + 1, dtype=np.int64)
            cd = np.empty(c + 1, dtype=np.float64)
            for t in range(c):
                cids[t] = adj[rn, t]
                cd[t] = _dist(vectors, n, cids[t])
            cids[c] = v
            cd[c] = _dist(vectors, n, v)
            cids, cd = _sort_candidates(cids, cd)
            kept = np.empty(cap, dtype=np.int64)
            k2 = _select(vectors, cids, cd, cap, heuristic, kept)
            for t in range(k2):
                adj[rn, t] = kept[t]
            cnt[rn] = k2
        eps = ids
    if lv > top:
        state[0] = v
        state[1] = lv
    state[2] += 1


@numba.njit(cache=True)
def _insert_all(vectors, order, levels, row_start, adj, cnt, state, m, ef, heuristic,
                visited, tagbox):
    for i in range(order.shape[0]):
        _insert(vectors, order[i], levels, row_start, adj, cnt, state, m, ef, heuristic,
                visited, tagbox)


# ---------------------------------------------------------------------------
# Graph object
# ---------------------------------------------------------------------------


@dataclass
class ProximityGraph:
    """Layered adjacency lists.

    The neighbors of vertex ``v`` on layer ``l`` are
    ``adj[row_start[v] + l, :cnt[row_start[v] + l]]``; vertex ``v`` exists on
    layers ``0 .. levels[v]`` (``levels[v] == -1`` while not yet inserted).
    """

    levels: np.ndarray
    row_start: np.ndarray
    adj: np.ndarray
    cnt: np.ndarray
    entry_vertex: int
    params: BuildParams
    _state: np.ndarray = field(default=None, repr=False)
    _pending_levels: np.ndarray = field(default=None, repr=False)

    @classmethod
    def empty(cls, num_items: int, params: BuildParams,
              levels: np.ndarray | None = None) -> "ProximityGraph":
        """An empty graph with levels pre-drawn for ``num_items`` vertices."""
        if levels is None:
            levels = draw_levels(num_items, params)
        levels = np.asarray(levels, dtype=np.int64)
        row_start = np.zeros(num_items, dtype=np.int64)
        if num_items:
            row_start[1:] = np.cumsum(levels + 1)[:-1]
        rows = int((levels + 1).sum())
        g = cls(
            levels=np.full(num_items, -1, dtype=np.int64),
            row_start=row_start,
            adj=np.full((rows, 2 * params.M), -1, dtype=np.int32),
            cnt=np.zeros(rows, dtype=np.int32),
            entry_vertex=-1,
            params=params,
        )
        g._state = np.array([-1, -1, 0], dtype=np.int64)
        g._pending_levels = levels
        return g

    @property
    def num_items(self) -> int:
        return int(self.levels.shape[0])

    @property
    def num_layers(self) -> int:
        return int(self.levels.max()) + 1 if self.num_items else 0

    @property
    def M(self) -> int:
        return self.params.M

    def neighbors(self, layer: int, v: int) -> np.ndarray:
        if not 0 <= layer <= self.levels[v]:
            raise InputError(f"vertex {v} is not present on layer {layer}")
        r = self.row_start[v] + layer
        return self.adj[r, : self.cnt[r]]

    def layer_vertices(self, layer: int) -> np.ndarray:
        return np.nonzero(self.levels >= layer)[0]

    def layer_adjacency(self, layer: int) -> dict[int, list[int]]:
        return {int(v): self.neighbors(layer, v).tolist() for v in self.layer_vertices(layer)}

    def mean_degree(self, layer: int = 0) -> float:
        verts = self.layer_vertices(layer)
        if not len(verts):
            return 0.0
        return float(self.cnt[self.row_start[verts] + layer].mean())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProximityGraph):
            return NotImplemented
        if self.num_items != other.num_items or self.entry_vertex != other.entry_vertex:
            return False
        if self.params != other.params or not np.array_equal(self.levels, other.levels):
            return False
        return all(
            np.array_equal(self.neighbors(l, v), other.neighbors(l, v))
            for v in range(self.num_items) for l in range(self.levels[v] + 1)
        )


def _as_vectors(vectors) -> np.ndarray:
    if isinstance(vectors, RelevanceVectors):
        vectors = vectors.matrix
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise InputError(f"expected a 2-D vector matrix, got shape {vectors.shape}")
    return vectors


def insert_vertex(graph: ProximityGraph, vertex: int, vectors, params: BuildParams | None = None,
                  ) -> ProximityGraph:
    """Insert one vertex in place (and return the graph).

    ``params`` defaults to the graph's own build parameters.
    """
    params = params or graph.params
    vectors = _as_vectors(vectors)
    if not 0 <= vertex < graph.num_items or vertex >= vectors.shape[0]:
        raise InputError(f"vertex {vertex} has no vector / is outside the graph")
    if graph.levels[vertex] >= 0:
        raise InputError(f"vertex {vertex} is already in the graph")
    _insert_many(graph, np.array([vertex], dtype=np.int64), vectors, params)
    return graph


def _insert_many(graph: ProximityGraph, order: np.ndarray, vectors: np.ndarray,
                 params: BuildParams) -> None:
    full_levels = graph._pending_levels
    graph.levels[order] = full_levels[order]
    visited = np.zeros(graph.num_items, dtype=np.int32)
    tagbox = np.zeros(1, dtype=np.int64)
    _insert_all(vectors, order, full_levels, graph.row_start, graph.adj, graph.cnt,
                graph._state, params.M, params.ef_construction,
                params.neighbor_selection == "heuristic", visited, tagbox)
    graph.entry_vertex = int(graph._state[0])


def build_graph(vectors, params: BuildParams | None = None) -> ProximityGraph:
    """Insert every row of ``vectors`` in id order; the entry vertex is item 0."""
    params = params or BuildParams()
    vectors = _as_vectors(vectors)
    n = vectors.shape[0]
    if n < 1:
        raise InputError("cannot build a graph over zero items")
    if not np.all(np.isfinite(vectors)):
        raise InputError("vectors contain non-finite values")
    graph = ProximityGraph.empty(n, params)
    _insert_many(graph, np.arange(n, dtype=np.int64), vectors, params)
    graph.entry_vertex = 0
    return graph


def build_item_feature_graph(item_features, params: BuildParams | None = None) -> ProximityGraph:
    """Graph over L2-normalised raw item features (the item-based baseline)."""
    return build_graph(normalize_rows(item_features), params)


def normalize_rows(matrix) -> np.ndarray:
    feats = np.asarray(matrix, dtype=np.float64)
    if feats.ndim != 2:
        raise InputError(f"expected a 2-D feature matrix, got shape {feats.shape}")
    norms = np.linalg.norm(feats, axis=1)
    zero = np.nonzero(norms == 0)[0]
    if len(zero):
        raise InputError(f"items with zero-norm features: {zero[:20].tolist()}")
    return (feats / norms[:, None]).astype(np.float32)


def select_neighbors(candidates, M: int, mode: str = "simple", vectors=None,
                     base: int | None = None) -> list[int]:
    """Choose at most ``M`` neighbors from ``(id, similarity)`` candidates.

    ``simple`` keeps the ``M`` most similar. ``heuristic`` walks candidates
    from most to least similar and drops any that lies closer to an already
    kept neighbor than to the base vertex; it needs the candidate ``vectors``
    (rows indexed by id).
    """
    if mode not in SELECTION_MODES:
        raise InputError(f"unknown mode {mode!r}")
    ranked = sorted(((int(i), float(s)) for i, s in candidates), key=lambda c: (-c[1], c[0]))
    ids = np.array([i for i, _ in ranked], dtype=np.int64)
    if mode == "simple":
        return ids[:M].tolist()
    if vectors is None:
        raise InputError("heuristic selection needs the candidate vectors")
    dists = np.array([-s for _, s in ranked], dtype=np.float64)
    out = np.empty(M, dtype=np.int64)
    k = _select(_as_vectors(vectors), ids, dists, M, True, out)
    return out[:k].tolist()


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    problems: list[str]
    reachable: int
    num_items: int

    @property
    def ok(self) -> bool:
        return not self.problems

    @property
    def connected(self) -> bool:
        return self.reachable == self.num_items


def validate_graph(graph: ProximityGraph, max_problems: int = 50) -> ValidationReport:
    """Check degree caps, layer nesting, ids and self-loops; measure reachability.

    Structural violations are collected in ``problems``. Reachability of
    layer 0 from the entry vertex is reported but never counted as a problem.
    """
    problems: list[str] = []
    n = graph.num_items
    levels = graph.levels
    if n == 0:
        return ValidationReport(["graph has no vertices"], 0, 0)
    if (levels < 0).any():
        problems.append(f"{int((levels < 0).sum())} vertices were never inserted")
    if not 0 <= graph.entry_vertex < n:
        problems.append(f"entry vertex {graph.entry_vertex} is not a valid id")
    elif levels[graph.entry_vertex] != levels.max():
        problems.append(f"entry vertex {graph.entry_vertex} is not on the top layer")
    for v in range(n):
        for layer in range(levels[v] + 1):
            nb = graph.neighbors(layer, v)
            cap = graph.params.degree_cap(layer)
            if len(nb) > cap:
                problems.append(f"vertex {v} layer {layer}: degree {len(nb)} > {cap}")
            if (nb < 0).any() or (nb >= n).any():
                problems.append(f"vertex {v} layer {layer}: invalid neighbor id")
                continue
            if (nb == v).any():
                problems.append(f"vertex {v} layer {layer}: self-loop")
            if len(np.unique(nb)) != len(nb):
                problems.append(f"vertex {v} layer {layer}: duplicate neighbors")
            if (levels[nb] < layer).any():
                problems.append(f"vertex {v} layer {layer}: neighbor missing from layer")
        if len(problems) >= max_problems:
            break
    reachable = _reachable(graph) if not problems else 0
    return ValidationReport(problems, reachable, n)


def _reachable(graph: ProximityGraph) -> int:
    seen = np.zeros(graph.num_items, dtype=bool)
    seen[graph.entry_vertex] = True
    queue = deque([graph.entry_vertex])
    while queue:
        v = queue.popleft()
        for u in graph.neighbors(0, v):
            if not seen[u]:
                seen[u] = True
                queue.append(int(u))
    return int(seen.sum())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_HEAD = struct.Struct("<4sIIIII")
_TRAILER = struct.Struct("<IdQB")


def graph_to_bytes(graph: ProximityGraph) -> bytes:
    n = graph.num_items
    parts = [_HEAD.pack(GRAPH_MAGIC, GRAPH_VERSION, graph.M, n, graph.num_layers,
                        graph.entry_vertex)]
    parts.append(graph.levels.astype(np.uint8).tobytes())
    for layer in range(graph.num_layers):
        for v in graph.layer_vertices(layer):
            nb = graph.neighbors(layer, v)
            parts.append(struct.pack("<H", len(nb)))
            parts.append(nb.astype("<u4").tobytes())
    p = graph.params
    parts.append(_TRAILER.pack(p.ef_construction, p.level_multiplier, p.seed & (2**64 - 1),
                               SELECTION_MODES.index(p.neighbor_selection)))
    return b"".join(parts)


def graph_from_bytes(raw: bytes, source: str = "<bytes>") -> ProximityGraph:
    if len(raw) < _HEAD.size:
        raise LoadError(f"{source}: truncated header")
    magic, version, m, n, num_layers, entry = _HEAD.unpack_from(raw)
    if magic != GRAPH_MAGIC:
        raise LoadError(f"{source}: bad magic {magic!r}, expected {GRAPH_MAGIC!r}")
    if version != GRAPH_VERSION:
        raise VersionError(f"{source}: unsupported graph version {version}")
    pos = _HEAD.size
    try:
        levels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos).astype(np.int64)
        pos += n
        if n and int(levels.max()) + 1 != num_layers:
            raise LoadError(f"{source}: num_layers disagrees with vertex levels")
        adjacency = []
        for layer in range(num_layers):
            for v in np.nonzero(levels >= layer)[0]:
                (k,) = struct.unpack_from("<H", raw, pos)
                pos += 2
                nb = np.frombuffer(raw, dtype="<u4", count=k, offset=pos)
                pos += 4 * k
                adjacency.append((layer, int(v), nb))
        ef, mult, seed, sel = _TRAILER.unpack_from(raw, pos)
        pos += _TRAILER.size
    except (struct.error, ValueError) as exc:
        raise LoadError(f"{source}: truncated or corrupt graph data ({exc})") from exc
    if pos != len(raw):
        raise LoadError(f"{source}: {len(raw) - pos} trailing bytes")
    if sel >= len(SELECTION_MODES):
        raise LoadError(f"{source}: unknown neighbor selection code {sel}")
    try:
        params = BuildParams(M=m, ef_construction=ef, level_multiplier=mult, seed=seed,
                             neighbor_selection=SELECTION_MODES[sel])
    except InputError as exc:
        raise LoadError(f"{source}: {exc}") from exc
    graph = ProximityGraph.empty(n, params, levels=levels)
    graph.levels[:] = levels
    for layer, v, nb in adjacency:
        if len(nb) > 2 * m:
            raise LoadError(f"{source}: vertex {v} layer {layer} exceeds the degree cap")
        r = graph.row_start[v] + layer
        graph.adj[r, : len(nb)] = nb
        graph.cnt[r] = len(nb)
    graph.entry_vertex = int(entry)
    graph._state[:] = (entry, num_layers - 1, n)
    return graph


def save_graph(graph: ProximityGraph, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(graph_to_bytes(graph))


def load_graph(path: str | os.PathLike) -> ProximityGraph:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise LoadError(f"cannot read graph file {path}: {exc}") from exc
    return graph_from_bytes(raw, str(path))
