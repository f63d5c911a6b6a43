"""docql: cost-aware SPJ query engine over unstructured document collections.

A two-level embedding index retrieves the text segments relevant to each
attribute, a deterministic or HTTP-backed extractor pulls typed values out
of them, and a per-document planner orders filters and join transformations
to minimize extraction token cost.
"""

from .catalog import AttributeSpec, Catalog, Corpus, Document, Segment, TableSpec, TupleRecord, load_corpus
from .config import Config, load_config
from .embedding import HashedBagEmbedder, HttpEmbedder
from .executor import Engine, ResultRow, ResultSet, SessionReport, score_results
from .extract import ExtractionCache, HttpProvider, MockProvider, SidecarTruth
from .index import IndexBundle, VectorIndex, build_indexes
from .planner import STRATEGIES, make_strategy
from .queryparser import QuerySpec, parse_query
from .workload import (
    JoinWorkloadSpec,
    WorkloadSpec,
    generate_join_workload,
    generate_workload,
    ground_truth_rows,
)

__version__ = "0.1.0"

__all__ = [
    "AttributeSpec",
    "Catalog",
    "Config",
    "Corpus",
    "Document",
    "Engine",
    "ExtractionCache",
    "HashedBagEmbedder",
    "HttpEmbedder",
    "HttpProvider",
    "IndexBundle",
    "JoinWorkloadSpec",
    "MockProvider",
    "QuerySpec",
    "ResultRow",
    "ResultSet",
    "STRATEGIES",
    "Segment",
    "SessionReport",
    "SidecarTruth",
    "TableSpec",
    "TupleRecord",
    "VectorIndex",
    "WorkloadSpec",
    "build_indexes",
    "generate_join_workload",
    "generate_workload",
    "ground_truth_rows",
    "load_config",
    "load_corpus",
    "make_strategy",
    "parse_query",
    "score_results",
    "__version__",
]
