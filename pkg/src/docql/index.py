"""Two-level embedding index with evidence-augmented segment retrieval.

Level one indexes document summaries and filters whole documents against a
query embedding with threshold tau. Level two indexes segments produced by
sentence splitting plus greedy semantic merging; per-attribute retrieval
unions the segments within distance gamma_i of each evidence center, where
evidence centers are k-means centers of the segments that actually carried
the attribute in sampled documents.

All distances are Euclidean over L2-normalized vectors, so they rank
identically to cosine similarity. Search is an exact linear scan; an ANN
structure can be slotted in behind VectorIndex without touching callers.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import AttributeSpec, Corpus, Document, Segment
from .embedding import Embedder, normalize
from .errors import CalibrationFailed, DimMismatch, EvidenceUnavailable, ProviderError
from .tokens import Tokenizer, count_tokens

TAU_MARGIN = 0.1
GAMMA_MARGIN = 0.1
DEFAULT_GAMMA = 0.5
DEFAULT_MERGE_THRESHOLD = 0.75
INITIAL_TAU = 1.2


_SENTENCE_END = re.compile(r"[.!?]+(?:\s+|$)")


def split_sentences(text: str) -> list[tuple[int, int, str]]:
    """Split on ./?/! followed by whitespace; spans cover the text exactly."""
    spans: list[tuple[int, int, str]] = []
    start = 0
    for match in _SENTENCE_END.finditer(text):
        end = match.end()
        spans.append((start, end, text[start:end]))
        start = end
    if start < len(text):
        spans.append((start, len(text), text[start:]))
    # fold wordless spans (stray whitespace/punctuation) into their predecessor
    folded: list[tuple[int, int, str]] = []
    for span in spans:
        if folded and not re.search(r"\w", span[2]):
            ps, _, _ = folded[-1]
            folded[-1] = (ps, span[1], text[ps : span[1]])
        else:
            folded.append(span)
    return folded


def segment_document(
    doc: Document,
    embedder: Embedder,
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD,
    tokenizer: Tokenizer | None = None,
) -> list[Segment]:
    """Sentence-split then greedily merge adjacent semantically similar sentences.

    Two consecutive sentences stay in one segment when the cosine similarity
    of their embeddings exceeds merge_threshold (threshold 1.0 therefore
    merges nothing). Segment spans are non-overlapping, ordered, and cover
    the document.
    """
    sentences = split_sentences(doc.text)
    if not sentences:
        raise ValueError(f"document {doc.doc_id!r} has no sentences")
    vectors = [embedder.embed(s[2]) for s in sentences]

    runs: list[tuple[int, int]] = []  # [start_sentence, end_sentence) index ranges
    run_start = 0
    for i in range(1, len(sentences)):
        sim = float(np.dot(vectors[i - 1].astype(np.float64), vectors[i].astype(np.float64)))
        if sim > merge_threshold:
            continue
        runs.append((run_start, i))
        run_start = i
    runs.append((run_start, len(sentences)))

    segments = []
    for idx, (lo, hi) in enumerate(runs):
        start = sentences[lo][0]
        end = sentences[hi - 1][1]
        text = doc.text[start:end]
        segments.append(
            Segment(
                seg_id=f"{doc.doc_id}#s{idx}",
                doc_id=doc.doc_id,
                start=start,
                end=end,
                text=text,
                token_count=count_tokens(text, tokenizer),
                embedding=embedder.embed(text),
            )
        )
    return segments


class VectorIndex:
    """Exact linear-scan index over (id, unit vector) entries.

    Segment-level entries use ids of the form "<doc_id>#s<i>", which is how
    per-document scans recover the owning document after a reload.
    """

    def __init__(self, level: str, dim: int, embedder_id: str):
        self.level = level
        self.dim = dim
        self.embedder_id = embedder_id
        self._ids: list[str] = []
        self._rows: dict[str, int] = {}
        self._vectors: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None
        self._by_doc: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, entry_id: str, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise DimMismatch(f"vector for {entry_id!r} has dim {vec.shape}, index dim {self.dim}")
        if entry_id in self._rows:
            raise ValueError(f"duplicate index id {entry_id!r}")
        self._rows[entry_id] = len(self._ids)
        self._ids.append(entry_id)
        self._vectors.append(vec)
        self._matrix = None
        if self.level == "segment":
            doc_id = entry_id.rsplit("#", 1)[0]
            self._by_doc.setdefault(doc_id, []).append(len(self._ids) - 1)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = (
                np.stack(self._vectors).astype(np.float64)
                if self._vectors
                else np.zeros((0, self.dim))
            )
        return self._matrix

    def vector(self, entry_id: str) -> np.ndarray:
        return self._vectors[self._rows[entry_id]]

    def ids(self) -> list[str]:
        return list(self._ids)

    def query(self, vector: np.ndarray, max_dist: float) -> list[tuple[str, float]]:
        """All entries with Euclidean distance strictly below max_dist."""
        if not self._ids:
            return []
        dists = np.linalg.norm(self.matrix - np.asarray(vector, dtype=np.float64), axis=1)
        hits = np.flatnonzero(dists < max_dist)
        return [(self._ids[i], float(dists[i])) for i in hits]

    def query_doc(self, doc_id: str, vector: np.ndarray, max_dist: float) -> list[tuple[str, float]]:
        """Like query(), restricted to one document's segment entries."""
        rows = self._by_doc.get(doc_id, [])
        if not rows:
            return []
        sub = self.matrix[rows]
        dists = np.linalg.norm(sub - np.asarray(vector, dtype=np.float64), axis=1)
        return [(self._ids[rows[i]], float(dists[i])) for i in np.flatnonzero(dists < max_dist)]

    def nearest(self, vector: np.ndarray, k: int = 1) -> list[tuple[str, float]]:
        if not self._ids:
            return []
        dists = np.linalg.norm(self.matrix - np.asarray(vector, dtype=np.float64), axis=1)
        order = np.lexsort((np.arange(len(dists)), dists))[:k]
        return [(self._ids[i], float(dists[i])) for i in order]

    def distance(self, entry_id: str, vector: np.ndarray) -> float:
        row = self._rows[entry_id]
        return float(
            np.linalg.norm(self.matrix[row] - np.asarray(vector, dtype=np.float64))
        )

    # persistence: one JSON header line, then per-entry records of
    # (uint16 id length, id utf8, dim float32 little-endian values)
    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            header = {
                "dim": self.dim,
                "count": len(self._ids),
                "level": self.level,
                "embedder_id": self.embedder_id,
            }
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for entry_id, vec in zip(self._ids, self._vectors):
                raw = entry_id.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(vec.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            index = cls(header["level"], header["dim"], header["embedder_id"])
            for _ in range(header["count"]):
                (id_len,) = struct.unpack("<H", fh.read(2))
                entry_id = fh.read(id_len).decode("utf-8")
                vec = np.frombuffer(fh.read(4 * header["dim"]), dtype="<f4").copy()
                index.add(entry_id, vec)
        return index


@dataclass
class IndexBundle:
    """Everything built by build_indexes: both indexes plus the segment store."""

    doc_index: VectorIndex
    seg_index: VectorIndex
    segments: dict[str, list[Segment]]  # doc_id -> ordered segments

    def segment(self, seg_id: str) -> Segment:
        doc_id = seg_id.rsplit("#", 1)[0]
        for seg in self.segments[doc_id]:
            if seg.seg_id == seg_id:
                return seg
        raise KeyError(seg_id)


def build_indexes(
    corpus: Corpus,
    embedder: Embedder,
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD,
    tokenizer: Tokenizer | None = None,
) -> IndexBundle:
    """Build the document-level (summary) and segment-level indexes."""
    doc_index = VectorIndex("document", embedder.dim, embedder.embedder_id)
    seg_index = VectorIndex("segment", embedder.dim, embedder.embedder_id)
    segments: dict[str, list[Segment]] = {}
    for doc in corpus:
        summary = doc.summary or doc.text
        doc_index.add(doc.doc_id, embedder.embed(summary))
        segs = segment_document(doc, embedder, merge_threshold, tokenizer)
        segments[doc.doc_id] = segs
        for seg in segs:
            seg_index.add(seg.seg_id, seg.embedding)
    return IndexBundle(doc_index=doc_index, seg_index=seg_index, segments=segments)


def query_embedding(attrs: Sequence[AttributeSpec], embedder: Embedder) -> np.ndarray:
    """Normalized mean of the attributes' "name: description" embeddings."""
    if not attrs:
        raise ValueError("query embedding needs at least one attribute")
    stacked = np.stack([embedder.embed(a.query_text).astype(np.float64) for a in attrs])
    return normalize(stacked.mean(axis=0))


def retrieve_documents(doc_index: VectorIndex, query_vec: np.ndarray, tau: float) -> list[str]:
    """Document ids whose summary embedding lies strictly within tau."""
    return [doc_id for doc_id, _ in doc_index.query(query_vec, tau)]


def calibrate_tau(query_vec: np.ndarray, relevant_embeddings: Sequence[np.ndarray]) -> float:
    """Max distance from the query to any relevant sampled document, plus margin."""
    if not len(relevant_embeddings):
        raise CalibrationFailed("no relevant documents in sample")
    q = np.asarray(query_vec, dtype=np.float64)
    worst = max(float(np.linalg.norm(np.asarray(e, dtype=np.float64) - q)) for e in relevant_embeddings)
    return worst + TAU_MARGIN


def calibrate_gamma(
    embeddings: Sequence[np.ndarray], default_gamma: float = DEFAULT_GAMMA
) -> tuple[float, bool]:
    """Max pairwise distance among evidence embeddings plus margin.

    Fewer than two embeddings cannot produce a pairwise distance; fall back
    to the configured default and flag it.
    """
    n = len(embeddings)
    if n < 2:
        return default_gamma, True
    pts = [np.asarray(e, dtype=np.float64) for e in embeddings]
    worst = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            worst = max(worst, float(np.linalg.norm(pts[i] - pts[j])))
    return worst + GAMMA_MARGIN, False


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 50) -> np.ndarray:
    """Plain Lloyd k-means with farthest-point seeding; centers re-normalized.

    Deterministic for a fixed seed: the first center is drawn by the seeded
    RNG and every later seed is the point farthest from its nearest chosen
    center (ties to the lowest index).
    """
    import random

    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    k = min(k, n)
    if k == 0:
        raise ValueError("kmeans needs at least one point")

    rng = random.Random(seed)
    chosen = [rng.randrange(n)]
    min_dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
    centers = pts[chosen].copy()

    assign = np.full(n, -1)
    for _ in range(max_iter):
        dists = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
        new_assign = np.argmin(dists, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = pts[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:  # re-seed an empty cluster with the worst-served point
                centers[j] = pts[int(np.argmax(dists.min(axis=1)))]

    normed = np.zeros_like(centers)
    for j in range(k):
        norm = float(np.linalg.norm(centers[j]))
        normed[j] = centers[j] / norm if norm > 0 else centers[j]
    return normed.astype(np.float32)


@dataclass
class EvidenceSet:
    """Cluster-center embeddings standing in for "what relevant segments look like"."""

    attribute: AttributeSpec
    centers: np.ndarray  # (k, dim) unit rows
    source: str  # "sampled" | "synthesized"

    @property
    def k(self) -> int:
        return len(self.centers)


def collect_evidence(
    attr: AttributeSpec,
    provenance_segments: Sequence[Segment],
    embedder: Embedder,
    provider=None,
    k: int = 3,
    synth_count: int = 20,
    seed: int = 0,
) -> EvidenceSet:
    """Cluster provenance-segment embeddings into at most k evidence centers.

    With no provenance at all, ask the extractor provider to synthesize
    exemplar segments instead (and mark the evidence as such).
    """
    if provenance_segments:
        vectors = [
            seg.embedding if seg.embedding is not None else embedder.embed(seg.text)
            for seg in provenance_segments
        ]
        source = "sampled"
    else:
        if provider is None:
            raise EvidenceUnavailable(f"{attr.name}: no provenance and no provider to synthesize")
        try:
            texts = provider.synthesize_exemplars(attr, synth_count)
        except ProviderError as exc:
            raise EvidenceUnavailable(f"{attr.name}: synthesis failed: {exc}") from exc
        if not texts:
            raise EvidenceUnavailable(f"{attr.name}: provider returned no exemplars")
        vectors = [embedder.embed(t) for t in texts]
        source = "synthesized"
    centers = kmeans(np.stack(vectors), k=min(k, len(vectors)), seed=seed)
    return EvidenceSet(attribute=attr, centers=centers, source=source)


@dataclass
class ThresholdState:
    """Calibrated retrieval thresholds for one query session."""

    tau: float = INITIAL_TAU
    gamma: dict[tuple[str, str], float] = field(default_factory=dict)
    gamma_fallback: set = field(default_factory=set)
    calibrated: bool = False

    def gamma_for(self, attr: AttributeSpec) -> float:
        return self.gamma.get(attr.key, DEFAULT_GAMMA)


def retrieve_segments(
    bundle: IndexBundle,
    doc_id: str,
    evidence: EvidenceSet,
    gamma: float,
) -> tuple[list[Segment], int]:
    """Union of per-evidence-center matches within one document, deduplicated.

    Returns the matched segments in document order plus their summed token
    count, which is exactly the planner's extraction-cost input for this
    (document, attribute) pair.
    """
    hit_ids: set[str] = set()
    for center in evidence.centers:
        for seg_id, _ in bundle.seg_index.query_doc(doc_id, center, gamma):
            hit_ids.add(seg_id)
    ordered = [seg for seg in bundle.segments.get(doc_id, []) if seg.seg_id in hit_ids]
    return ordered, sum(seg.token_count for seg in ordered)


@dataclass
class RetrievalResult:
    """Outcome of two-level retrieval for a query over one table."""

    doc_ids: list[str]
    per_attr_segments: dict[tuple[str, tuple[str, str]], tuple[list[str], int]] = field(
        default_factory=dict
    )


def save_threshold_state(
    path: str | Path, state: ThresholdState, evidence: dict[tuple[str, str], EvidenceSet]
) -> None:
    """One structured text record per attribute, plus one for tau."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "tau", "tau": state.tau, "calibrated": state.calibrated}) + "\n")
        for key in sorted(state.gamma):
            ev = evidence.get(key)
            rec = {
                "record": "attribute",
                "table": key[0],
                "attribute": key[1],
                "gamma": state.gamma[key],
                "fallback": key in state.gamma_fallback,
                "evidence_source": ev.source if ev else None,
                "centers": [[round(float(x), 7) for x in c] for c in ev.centers] if ev else [],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
