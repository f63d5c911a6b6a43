import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from docql.catalog import Catalog, load_corpus
from docql.embedding import HashedBagEmbedder
from docql.executor import Engine
from docql.extract import ExtractionCache, MockProvider
from docql.index import build_indexes


@pytest.fixture
def embedder():
    return HashedBagEmbedder(256)


def build_engine(records, truth, tables, embedder=None, **engine_kw):
    """Stand up a full engine over in-memory records with the mock provider."""
    embedder = embedder or HashedBagEmbedder(256)
    corpus = load_corpus(records)
    catalog = Catalog(corpus)
    for table in tables:
        catalog.register_table(table)
    bundle = build_indexes(corpus, embedder)
    provider = MockProvider(truth)
    return Engine(
        catalog=catalog,
        bundle=bundle,
        embedder=embedder,
        provider=provider,
        cache=ExtractionCache(),
        backoff=0.0,
        **engine_kw,
    )


@pytest.fixture
def engine_factory():
    return build_engine
