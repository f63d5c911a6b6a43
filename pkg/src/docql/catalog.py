"""Corpus, table schema, and extracted-tuple records.

The catalog owns everything the rest of the engine treats as ground truth:
the document collection, the table/attribute schema registered over it, and
the per-document tuple records produced by extraction. Corpus and schema are
immutable once loaded; tuple stores are append-only with last-writer-wins
per (doc_id, attribute).
"""

from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    CorpusFormatError,
    DuplicateId,
    EmptyDocument,
    InvalidSchema,
    UnknownCorpus,
)
from .tokens import Tokenizer, count_tokens, default_summarizer

DTYPES = ("number", "string", "categorical")


@dataclass
class Document:
    """A raw text unit: id, full text, token count, summary, embedding."""

    doc_id: str
    text: str
    token_count: int
    summary: str = ""
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if not self.text:
            raise EmptyDocument(f"document {self.doc_id!r} has no text")
        if self.token_count < 0:
            raise ValueError("token_count must be nonnegative")
        if self.embedding is not None:
            norm = float(np.linalg.norm(self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"document embedding norm {norm} != 1")


@dataclass
class Segment:
    """A contiguous span of a document, with its own embedding."""

    seg_id: str
    doc_id: str
    start: int
    end: int
    text: str
    token_count: int
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"segment {self.seg_id}: start > end")
        if self.token_count <= 0:
            raise ValueError(f"segment {self.seg_id}: token_count must be > 0")


@dataclass(frozen=True)
class AttributeSpec:
    """A named attribute extractable from documents of one table."""

    name: str
    description: str
    dtype: str
    table: str

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise InvalidSchema(f"attribute {self.name!r}: bad dtype {self.dtype!r}")
        if not self.description:
            raise InvalidSchema(f"attribute {self.name!r}: empty description")

    @property
    def key(self) -> tuple[str, str]:
        return (self.table, self.name)

    @property
    def query_text(self) -> str:
        """Text embedded when this attribute participates in retrieval."""
        return f"{self.name}: {self.description}"


@dataclass
class TableSpec:
    """A virtual table backed by a subset of the corpus.

    corpus_filter is either an explicit doc-id list or a glob pattern over
    doc ids.
    """

    name: str
    attributes: list[AttributeSpec]
    corpus_filter: list[str] | str = "*"

    def __post_init__(self):
        if not self.attributes:
            raise InvalidSchema(f"table {self.name!r} has zero attributes")
        seen = set()
        for attr in self.attributes:
            if attr.name in seen:
                raise InvalidSchema(f"table {self.name!r}: duplicate attribute {attr.name!r}")
            seen.add(attr.name)

    def attribute(self, name: str) -> AttributeSpec | None:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        return None


@dataclass
class TupleRecord:
    """Extracted values for one document, with per-attribute provenance."""

    doc_id: str
    values: dict[str, object] = field(default_factory=dict)
    provenance: dict[str, list[str]] = field(default_factory=dict)

    def validate(self, corpus_segments: Mapping[str, list[Segment]] | None = None) -> None:
        for attr, value in self.values.items():
            if value is not None and not self.provenance.get(attr):
                raise ValueError(f"{self.doc_id}/{attr}: non-NULL value without provenance")
        if corpus_segments is not None:
            owned = {s.seg_id for s in corpus_segments.get(self.doc_id, [])}
            for attr, seg_ids in self.provenance.items():
                missing = set(seg_ids) - owned
                if missing:
                    raise ValueError(f"{self.doc_id}/{attr}: provenance outside document: {missing}")


class Corpus:
    """Immutable ordered collection of Documents."""

    def __init__(self, name: str = "default"):
        self.name = name
        self._docs: dict[str, Document] = {}

    def add(self, doc: Document) -> None:
        if doc.doc_id in self._docs:
            raise DuplicateId(f"duplicate doc_id {doc.doc_id!r}")
        self._docs[doc.doc_id] = doc

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __iter__(self) -> Iterator[Document]:
        return iter(self._docs.values())

    def get(self, doc_id: str) -> Document:
        return self._docs[doc_id]

    def ids(self) -> list[str]:
        return list(self._docs.keys())

    def stats(self) -> dict[str, float]:
        n = len(self._docs)
        total = sum(d.token_count for d in self)
        return {
            "documents": n,
            "total_tokens": total,
            "avg_tokens": total / n if n else 0.0,
        }

    def resolve_filter(self, corpus_filter: list[str] | str) -> list[str]:
        """Resolve an id-list or glob pattern to concrete doc ids, in corpus order."""
        if isinstance(corpus_filter, str):
            return [d for d in self._docs if fnmatch.fnmatchcase(d, corpus_filter)]
        wanted = set(corpus_filter)
        unknown = wanted - set(self._docs)
        if unknown:
            raise UnknownCorpus(f"corpus_filter names unknown documents: {sorted(unknown)}")
        return [d for d in self._docs if d in wanted]


def load_corpus(
    source: str | Path | Iterable[dict],
    tokenizer: Tokenizer | None = None,
    summarizer=default_summarizer,
    name: str = "default",
) -> Corpus:
    """Load a corpus from a directory of .txt files, a JSONL file, or a record stream.

    Records need {"id": str, "text": str}. Duplicate ids and empty texts are
    rejected outright rather than skipped, so a bad corpus fails loudly.
    """
    corpus = Corpus(name)

    def make(doc_id: str, text: str) -> Document:
        if not text:
            raise EmptyDocument(f"document {doc_id!r} has no text")
        return Document(
            doc_id=doc_id,
            text=text,
            token_count=count_tokens(text, tokenizer),
            summary=summarizer(text),
        )

    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.is_dir():
            for file in sorted(path.glob("*.txt")):
                corpus.add(make(file.stem, file.read_text(encoding="utf-8")))
        else:
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
                    if "id" not in rec or "text" not in rec:
                        raise CorpusFormatError(f"{path}: line {lineno}: record needs id and text")
                    corpus.add(make(str(rec["id"]), rec["text"]))
    else:
        for rec in source:
            corpus.add(make(str(rec["id"]), rec["text"]))

    return corpus


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Persist documents as line-delimited records (text round-trips byte-equal)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            rec = {
                "id": doc.doc_id,
                "text": doc.text,
                "token_count": doc.token_count,
                "summary": doc.summary,
            }
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def load_saved_corpus(path: str | Path, name: str = "default") -> Corpus:
    """Reload a corpus persisted by save_corpus, preserving token counts."""
    corpus = Corpus(name)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
            corpus.add(
                Document(
                    doc_id=rec["id"],
                    text=rec["text"],
                    token_count=rec["token_count"],
                    summary=rec.get("summary", ""),
                )
            )
    return corpus


class Catalog:
    """Registry of tables over one corpus; shared by parser and executor."""

    def __init__(self, corpus: Corpus | None = None):
        self.corpus = corpus
        self.tables: dict[str, TableSpec] = {}

    def register_table(self, spec: TableSpec) -> TableSpec:
        if self.corpus is None:
            raise UnknownCorpus("no corpus loaded")
        if spec.name in self.tables:
            raise InvalidSchema(f"table {spec.name!r} already registered")
        doc_ids = self.corpus.resolve_filter(spec.corpus_filter)
        if not doc_ids:
            raise InvalidSchema(f"table {spec.name!r}: corpus_filter matches no documents")
        self.tables[spec.name] = spec
        return spec

    def table(self, name: str) -> TableSpec:
        if name not in self.tables:
            raise UnknownCorpus(f"unknown table {name!r}")
        return self.tables[name]

    def table_doc_ids(self, name: str) -> list[str]:
        return self.corpus.resolve_filter(self.table(name).corpus_filter)

    def resolve_attribute(self, name: str, tables: list[str]) -> AttributeSpec:
        """Resolve a possibly qualified attribute name against candidate tables."""
        if "." in name:
            tbl, attr = name.split(".", 1)
            if tbl not in self.tables or tbl not in tables:
                raise UnknownCorpus(f"unknown table {tbl!r}")
            spec = self.tables[tbl].attribute(attr)
            if spec is None:
                raise UnknownCorpus(f"table {tbl!r} has no attribute {attr!r}")
            return spec
        matches = [
            self.tables[t].attribute(name)
            for t in tables
            if self.tables.get(t) and self.tables[t].attribute(name)
        ]
        if not matches:
            raise UnknownCorpus(f"unknown attribute {name!r}")
        if len(matches) > 1:
            raise UnknownCorpus(f"ambiguous attribute {name!r}; qualify with table name")
        return matches[0]


def save_schema(catalog: Catalog, path: str | Path) -> None:
    payload = {
        "corpus": catalog.corpus.name if catalog.corpus else None,
        "tables": [
            {
                "name": t.name,
                "corpus_filter": t.corpus_filter,
                "attributes": [
                    {"name": a.name, "description": a.description, "dtype": a.dtype}
                    for a in t.attributes
                ],
            }
            for t in catalog.tables.values()
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_schema(path: str | Path, corpus: Corpus) -> Catalog:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    catalog = Catalog(corpus)
    for trec in payload["tables"]:
        attrs = [
            AttributeSpec(
                name=arec["name"],
                description=arec["description"],
                dtype=arec["dtype"],
                table=trec["name"],
            )
            for arec in trec["attributes"]
        ]
        catalog.register_table(
            TableSpec(name=trec["name"], attributes=attrs, corpus_filter=trec["corpus_filter"])
        )
    return catalog
