"""Top-K retrieval under black-box relevance models using proximity graphs
built on relevance vectors."""
from .baselines import (
    EmbeddingSet,
    TopScoredIndex,
    build_top_scored,
    embed_query,
    embedding_rerank_search,
    factorize_relevance_matrix,
    top_scored_search,
)
from .errors import (
    ConfigurationError,
    InputError,
    LoadError,
    NumericError,
    RelgraphError,
    VersionError,
)
from .graph import (
    BuildParams,
    ProximityGraph,
    build_graph,
    build_item_feature_graph,
    insert_vertex,
    load_graph,
    save_graph,
    select_neighbors,
    validate_graph,
)
from .io import load_matrix, save_matrix
from .models import (
    DotModel,
    FunctionModel,
    L2Model,
    MLPModel,
    PairwiseFeatureMap,
    RelevanceModel,
    TreeEnsembleModel,
    assemble_features,
    evaluate,
    load_model,
    save_model,
)
from .relevance import (
    RelevanceVectors,
    compute_relevance_vectors,
    item_similarity,
    sample_train_queries,
)
from .search import (
    EvalLedger,
    SearchParams,
    SearchResult,
    exhaustive_topk,
    explore,
    rpg_plus_entry,
    search_topk,
)

__version__ = "0.1.0"
