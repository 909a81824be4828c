"""Command-line interface: ``relgraph {gen,build,search,eval,ablate,scaling}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 a ``--assert`` failed.
"""
from __future__ import annotations

import argparse
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import (
    build_top_scored,
    embed_query,
    embedding_rerank_search,
    factorize_relevance_matrix,
    load_embeddings,
    save_embeddings,
    top_scored_search,
)
from .datagen import GeneratorConfig, generate_bundle, write_bundle
from .errors import InputError, RelgraphError
from .evaluation import (
    EmbedRerankMethod,
    ExhaustiveMethod,
    RPGMethod,
    RPGPlusMethod,
    TopScoredMethod,
    ablation_run,
    compute_ground_truth,
    geometric_budgets,
    recall_at_budget,
    scalability_experiment,
    sweep_curve,
    write_curve_csv,
    write_scaling_csv,
)
from .graph import (
    BuildParams,
    build_graph,
    build_item_feature_graph,
    load_graph,
    save_graph,
    validate_graph,
)
from .io import load_matrix
from .models import load_model
from .relevance import compute_relevance_vectors, sample_train_queries
from .search import EvalLedger, SearchParams, exhaustive_topk, rpg_plus_entry, search_topk

METHODS = ("rpg", "rpg+", "top-scored", "item-graph", "embed-rerank", "exhaustive")
EXIT_USAGE, EXIT_DATA, EXIT_ASSERT = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# ---------------------------------------------------------------------------
# Shared loading helpers
# ---------------------------------------------------------------------------


@dataclass
class _Data:
    model: object
    items: np.ndarray
    train: np.ndarray | None
    test: np.ndarray | None


def _load_data(args, need_train=False, need_test=False) -> _Data:
    for flag in ("items", "model"):
        if getattr(args, flag, None) is None:
            raise UsageError(f"--{flag.replace('_', '-')} is required")
    if need_train and args.train_queries is None:
        raise UsageError("--train-queries is required")
    if need_test and args.test_queries is None:
        raise UsageError("--test-queries is required")
    model = load_model(args.model)
    items = load_matrix(args.items)
    train = load_matrix(args.train_queries) if getattr(args, "train_queries", None) else None
    test = load_matrix(args.test_queries) if getattr(args, "test_queries", None) else None
    if items.shape[1] != model.item_dim:
        raise InputError(f"items have {items.shape[1]} columns, model expects {model.item_dim}")
    for name, mat in (("train queries", train), ("test queries", test)):
        if mat is not None and mat.shape[1] != model.query_dim:
            raise InputError(
                f"{name} have {mat.shape[1]} columns, model expects {model.query_dim}")
    return _Data(model, items, train, test)


def _check_disjoint_paths(args) -> None:
    tr, te = getattr(args, "train_queries", None), getattr(args, "test_queries", None)
    if tr and te and Path(tr).resolve() == Path(te).resolve():
        raise UsageError("--train-queries and --test-queries must be different files")


def _build_params(args) -> BuildParams:
    return BuildParams(M=args.M, ef_construction=args.ef_construction, seed=args.seed,
                       neighbor_selection=args.selection)


def _relevance_graph(data: _Data, args, d: int | None = None, params=None):
    d = args.d if d is None else d
    sample = sample_train_queries(len(data.train), d, args.seed)
    vectors = compute_relevance_vectors(data.model, data.items, data.train, sample)
    return build_graph(vectors, params or _build_params(args))


def _embeddings(data: _Data, args):
    if getattr(args, "embeddings", None):
        emb = load_embeddings(args.embeddings)
        if emb.item_factors.shape[0] != len(data.items):
            raise InputError("embedding item count does not match --items")
        return emb
    if data.train is None:
        raise UsageError("--train-queries (or --embeddings) is required for embedding methods")
    rank = min(args.rank, len(data.items), len(data.train))
    F = data.model.score_matrix(data.train, data.items).T
    return factorize_relevance_matrix(F, rank)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    qd = args.query_dim if args.query_dim is not None else args.dim
    vd = args.item_dim if args.item_dim is not None else args.dim
    cfg = GeneratorConfig(kind=args.kind, n_items=args.n_items, n_train=args.n_train,
                          n_test=args.n_test, query_dim=qd, item_dim=vd,
                          n_clusters=args.clusters, cluster_spread=args.spread,
                          n_pairwise=args.pairwise, n_trees=args.trees, depth=args.depth,
                          hidden=tuple(args.hidden), seed=args.seed)
    paths = write_bundle(generate_bundle(cfg), args.out)
    for role, path in paths.items():
        print(f"{role}\t{path}")
    return 0


def cmd_build(args) -> int:
    _check_disjoint_paths(args)
    params = _build_params(args)
    if args.method == "item-graph":
        feats = load_matrix(args.item_features or args.items)
        graph = build_item_feature_graph(feats, params)
        build_evals = 0
    else:
        data = _load_data(args, need_train=True)
        graph = _relevance_graph(data, args, params=params)
        build_evals = len(data.items) * args.d
        if args.embeddings_out:
            save_embeddings(_embeddings(data, args), args.embeddings_out)
    save_graph(graph, args.out)
    report = validate_graph(graph)
    print(f"items\t{graph.num_items}")
    print(f"layers\t{graph.num_layers}")
    print(f"mean_degree_layer0\t{graph.mean_degree(0):.4f}")
    print(f"build_model_evaluations\t{build_evals}")
    print(f"reachable_layer0\t{report.reachable}/{graph.num_items}")
    if not report.ok:
        print("validation problems:", *report.problems, sep="\n  ", file=sys.stderr)
        return EXIT_DATA
    return 0


def cmd_search(args) -> int:
    _check_disjoint_paths(args)
    data = _load_data(args, need_test=True)
    method = "exhaustive" if args.exhaustive else args.method
    if args.entry_from_embeddings:
        method = "rpg+"
        args.embeddings = args.entry_from_embeddings
    graph = None
    if method in ("rpg", "rpg+", "item-graph"):
        if args.graph is None:
            raise UsageError(f"--graph is required for method {method}")
        graph = load_graph(args.graph)
        if graph.num_items != len(data.items):
            raise InputError(f"graph {args.graph} has {graph.num_items} vertices but "
                             f"--items has {len(data.items)} rows")
    index = emb = None
    if method == "top-scored":
        if data.train is None:
            raise UsageError("--train-queries is required for top-scored")
        index = build_top_scored(data.model, data.items, data.train)
    if method in ("rpg+", "embed-rerank"):
        emb = _embeddings(data, args)
    K, L = args.k, max(args.beam, args.k)
    N = max(args.n or L, K)
    for qi, q in enumerate(data.test):
        if method == "exhaustive":
            res = exhaustive_topk(data.model, data.items, q, K)
        elif method in ("rpg", "item-graph"):
            res = search_topk(graph, data.model, data.items, q, SearchParams(K=K, L=L))
        elif method == "top-scored":
            res = top_scored_search(index, data.model, data.items, q, min(N, len(data.items)), K)
        else:
            ledger = EvalLedger(data.model, data.items, q)
            w, _ = embed_query(data.model, data.items, emb, q, min(args.probes, len(data.items)),
                               args.seed + qi, ledger)
            if method == "rpg+":
                params = SearchParams(K=K, L=L, entry_override=rpg_plus_entry(emb, w))
                res = search_topk(graph, data.model, data.items, q, params, ledger)
            else:
                res = embedding_rerank_search(emb, w, data.model, data.items, q,
                                              min(N, len(data.items)), K, ledger)
        hits = " ".join(f"{i}:{s!r}" for i, s in res.hits)
        print(f"{qi}\t{hits}\tunique_evals={res.unique_evals}")
    return 0


def _make_methods(names, data: _Data, args, graph=None):
    methods = []
    emb = None
    for name in names:
        if name == "rpg":
            g = graph if graph is not None else (
                load_graph(args.graph) if args.graph else _relevance_graph(data, args))
            graph = g
            if g.num_items != len(data.items):
                raise InputError("graph and --items disagree on the number of items")
            methods.append(RPGMethod(g, data.model, data.items))
        elif name == "rpg+":
            if graph is None:
                graph = load_graph(args.graph) if args.graph else _relevance_graph(data, args)
            emb = emb if emb is not None else _embeddings(data, args)
            methods.append(RPGPlusMethod(graph, data.model, data.items, emb, args.probes,
                                         args.seed))
        elif name == "item-graph":
            feats = load_matrix(args.item_features) if args.item_features else data.items
            g = build_item_feature_graph(feats, _build_params(args))
            methods.append(RPGMethod(g, data.model, data.items, label="item-graph"))
        elif name == "top-scored":
            if data.train is None:
                raise UsageError("--train-queries is required for top-scored")
            idx = build_top_scored(data.model, data.items, data.train)
            methods.append(TopScoredMethod(idx, data.model, data.items))
        elif name == "embed-rerank":
            emb = emb if emb is not None else _embeddings(data, args)
            methods.append(EmbedRerankMethod(emb, data.model, data.items, args.probes,
                                             args.seed))
        elif name == "exhaustive":
            methods.append(ExhaustiveMethod(data.model, data.items))
        else:
            raise UsageError(f"unknown method {name!r}")
    return methods


_ASSERT_RE = re.compile(
    r"^(?:(?P<method>[\w+-]+):)?recall@(?P<k>\d+)>=(?P<target>[0-9.]+)"
    r"@budget=(?P<budget>[0-9.]+)$")


def _parse_assert(text: str):
    m = _ASSERT_RE.match(text.replace(" ", ""))
    if not m:
        raise UsageError(f"cannot parse --assert {text!r}; expected "
                         "[method:]recall@K>=X@budget=B")
    return m.group("method"), int(m.group("k")), float(m.group("target")), float(
        m.group("budget"))


def best_recall_within(curve, budget: float) -> float:
    """Best measured recall among points using at most ``budget`` evaluations."""
    ok = [p.recall for p in curve if p.mean_unique_evals <= budget]
    return max(ok) if ok else 0.0


def _default_budgets(args, n):
    return args.budgets or geometric_budgets(args.k, max(args.k, min(n, 1024)), 9)


def cmd_eval(args) -> int:
    _check_disjoint_paths(args)
    data = _load_data(args, need_test=True)
    asserts = [_parse_assert(a) for a in args.assert_]
    names = [m.strip() for m in args.method.split(",") if m.strip()]
    if any(n in ("rpg", "rpg+") for n in names) and not args.graph and data.train is None:
        raise UsageError("--train-queries or --graph is required for graph methods")
    truth = compute_ground_truth(data.model, data.items, data.test, args.k)
    methods = _make_methods(names, data, args)
    curves = {}
    for method in methods:
        budgets = [len(data.items)] if method.label == "exhaustive" else _default_budgets(
            args, len(data.items))
        curves[method.label] = sweep_curve(method, budgets, data.test, truth)
    points = [p for label in curves for p in curves[label]]
    write_curve_csv(points, args.out, args.k, args.seed)
    for p in points:
        print(f"{p.method}\t{p.param}\tevals={p.mean_unique_evals:.1f}\trecall={p.recall:.4f}")
    failed = False
    for method, k, target, budget in asserts:
        label = method or methods[0].label
        if k != args.k:
            raise UsageError(f"--assert uses K={k} but --k is {args.k}")
        if label not in curves:
            raise UsageError(f"--assert refers to method {label!r}, which was not evaluated")
        limit = budget * len(data.items) if budget <= 1 else budget
        got = best_recall_within(curves[label], limit)
        ok = got >= target
        failed |= not ok
        print(f"assert {label} recall@{k}>={target} within {limit:g} evals: "
              f"{'PASS' if ok else 'FAIL'} ({got:.4f})")
    return EXIT_ASSERT if failed else 0


def cmd_ablate(args) -> int:
    _check_disjoint_paths(args)
    data = _load_data(args, need_train=True, need_test=True)
    truth = compute_ground_truth(data.model, data.items, data.test, args.k)

    def make(value):
        if args.axis == "d":
            return RPGMethod(_relevance_graph(data, args, d=value), data.model, data.items)
        params = BuildParams(M=value, ef_construction=max(args.ef_construction, value),
                             seed=args.seed, neighbor_selection=args.selection)
        return RPGMethod(_relevance_graph(data, args, params=params), data.model, data.items)

    curves = ablation_run(args.axis, args.values, make, _default_budgets(args, len(data.items)),
                          data.test, truth)
    points = [p for v in args.values for p in curves[v]]
    write_curve_csv(points, args.out, args.k, args.seed)
    for v in args.values:
        budget = args.budget_fraction * len(data.items)
        print(f"{args.axis}={v}\trecall@{budget:g}evals="
              f"{recall_at_budget(curves[v], budget):.4f}")
    return 0


def cmd_scaling(args) -> int:
    _check_disjoint_paths(args)
    data = _load_data(args, need_train=True, need_test=True)
    if max(args.sizes) > len(data.items):
        raise InputError(f"largest size {max(args.sizes)} exceeds the {len(data.items)} items")

    def setup(n):
        sub = _Data(data.model, data.items[:n], data.train, data.test)
        method = RPGMethod(_relevance_graph(sub, args), data.model, sub.items)
        return method, data.test, compute_ground_truth(data.model, sub.items, data.test, args.k)

    report = scalability_experiment(setup, args.sizes, args.target_recall, args.k)
    write_scaling_csv(report, args.out, "rpg", args.k, args.seed)
    for n, e in zip(report.sizes, report.evals):
        print(f"size={n}\tevals={'saturated' if e is None else f'{e:.1f}'}")
    print(f"alpha={report.alpha:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _data_flags(p, train=True, test=True):
    p.add_argument("--items", help="item matrix (RPGM)")
    p.add_argument("--model", help="model file (JSON)")
    if train:
        p.add_argument("--train-queries", help="train query matrix (RPGM)")
    if test:
        p.add_argument("--test-queries", help="test query matrix (RPGM)")
    p.add_argument("--seed", type=int, default=0)


def _graph_flags(p):
    p.add_argument("--d", type=int, default=100, help="relevance vector length")
    p.add_argument("--M", type=int, default=8, help="max degree on upper layers")
    p.add_argument("--ef-construction", type=int, default=100)
    p.add_argument("--selection", choices=("simple", "heuristic"), default="heuristic")


def _baseline_flags(p):
    p.add_argument("--item-features", help="item feature matrix for item-graph")
    p.add_argument("--embeddings", help="embedding prefix written by build --embeddings-out")
    p.add_argument("--rank", type=int, default=16, help="SVD rank for embeddings")
    p.add_argument("--probes", type=int, default=32,
                   help="relevance evaluations used to embed each query")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="write a synthetic dataset bundle")
    p.add_argument("--kind", choices=("l2", "dot", "mlp", "tree_ensemble"), default="l2")
    p.add_argument("--n-items", type=int, default=1000)
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--dim", type=int, default=16, help="default for both dimensions")
    p.add_argument("--query-dim", type=int)
    p.add_argument("--item-dim", type=int)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--spread", type=float, default=3.0, help="cluster center scale")
    p.add_argument("--pairwise", type=int, default=0)
    p.add_argument("--trees", type=int, default=50)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--hidden", type=_int_list, default=[32])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build a graph file")
    _data_flags(p)
    _graph_flags(p)
    _baseline_flags(p)
    p.add_argument("--method", choices=("rpg", "item-graph"), default="rpg")
    p.add_argument("--embeddings-out", help="also write SVD embeddings with this prefix")
    p.add_argument("--out", required=True, help="graph file to write")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("search", help="answer test queries")
    _data_flags(p)
    _baseline_flags(p)
    p.add_argument("--graph")
    p.add_argument("--method", choices=METHODS, default="rpg")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--beam", type=int, default=64, help="beam width L")
    p.add_argument("--n", type=int, help="candidate count N for rerankers")
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--entry-from-embeddings", metavar="PREFIX",
                   help="RPG+: enter the graph at the best item by embedding")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="recall/evaluation curves to CSV")
    _data_flags(p)
    _graph_flags(p)
    _baseline_flags(p)
    p.add_argument("--graph")
    p.add_argument("--method", default="rpg",
                   help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--budgets", type=_int_list, help="L / N values to sweep")
    p.add_argument("--assert", dest="assert_", action="append", default=[],
                   metavar="SPEC", help="[method:]recall@K>=X@budget=B (B<=1: fraction of |S|)")
    p.add_argument("--out", required=True, help="CSV file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep curves over M or d")
    _data_flags(p)
    _graph_flags(p)
    p.add_argument("--axis", choices=("M", "d"), required=True)
    p.add_argument("--values", type=_int_list, required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--budgets", type=_int_list)
    p.add_argument("--budget-fraction", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("scaling", help="evaluations needed for a target recall vs |S|")
    _data_flags(p)
    _graph_flags(p)
    p.add_argument("--sizes", type=_int_list, required=True)
    p.add_argument("--target-recall", type=float, default=0.90)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scaling)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"relgraph: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RelgraphError, OSError) as exc:
        print(f"relgraph: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
