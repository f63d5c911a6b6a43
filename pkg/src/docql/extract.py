"""Attribute extraction via pluggable providers, with caching and token audit.

Two providers ship in-tree: an HTTP chat-completion style client for real
deployments, and a deterministic mock that reads a sidecar truth file and
answers correctly iff any supplied segment overlaps the recorded value span.
The mock makes retrieval quality directly observable in end-to-end tests.

Every provider call lands in the session's audit log; cache hits add zero
tokens and no audit entries, so the audit sum is the query's true LLM cost.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .catalog import AttributeSpec, Document, Segment, TupleRecord
from .errors import CorpusFormatError, ProviderError
from .tokens import Tokenizer, count_tokens

DEFAULT_PROMPT_BUDGET = 1_000_000


@dataclass
class ExtractionRequest:
    doc_id: str
    attribute: AttributeSpec
    segments: list[Segment]
    prompt_budget: int = DEFAULT_PROMPT_BUDGET

    def __post_init__(self):
        for seg in self.segments:
            if seg.doc_id != self.doc_id:
                raise ValueError(f"segment {seg.seg_id} does not belong to {self.doc_id}")
        while self.segments and sum(s.token_count for s in self.segments) > self.prompt_budget:
            self.segments = self.segments[:-1]


@dataclass
class ExtractionResult:
    value: object  # typed value or None
    provenance: list[str]
    input_tokens: int
    output_tokens: int
    warning: str | None = None


@dataclass
class ProviderReply:
    """Raw provider output before parsing; JSON with a single value field."""

    raw_output: str


class ExtractorProvider(Protocol):
    name: str

    def extract(self, request: ExtractionRequest, prompt: str) -> ProviderReply: ...

    def synthesize_exemplars(self, attr: AttributeSpec, count: int) -> list[str]: ...


@dataclass(frozen=True)
class TruthEntry:
    value: object
    span_start: int
    span_end: int


class SidecarTruth:
    """Ground truth mapping (doc_id, attribute) -> (value, char span)."""

    def __init__(self):
        self._entries: dict[tuple[str, str], TruthEntry] = {}

    def set(self, doc_id: str, attribute: str, value: object, span_start: int, span_end: int):
        self._entries[(doc_id, attribute)] = TruthEntry(value, span_start, span_end)

    def get(self, doc_id: str, attribute: str) -> TruthEntry | None:
        return self._entries.get((doc_id, attribute))

    def attributes_of(self, doc_id: str) -> list[str]:
        return [attr for (d, attr) in self._entries if d == doc_id]

    def __len__(self) -> int:
        return len(self._entries)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (doc_id, attribute), entry in self._entries.items():
                rec = {
                    "doc_id": doc_id,
                    "attribute": attribute,
                    "value": entry.value,
                    "span_start": entry.span_start,
                    "span_end": entry.span_end,
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SidecarTruth":
        truth = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
                truth.set(
                    rec["doc_id"], rec["attribute"], rec["value"],
                    rec["span_start"], rec["span_end"],
                )
        return truth


class MockProvider:
    """Deterministic extractor backed by sidecar truth.

    Answers with the recorded value iff any supplied segment overlaps the
    recorded span; otherwise NULL. Provenance is the set of overlapping
    segments.
    """

    name = "mock"

    def __init__(self, truth: SidecarTruth):
        self.truth = truth
        self.calls = 0

    def extract(self, request: ExtractionRequest, prompt: str) -> ProviderReply:
        self.calls += 1
        entry = self.truth.get(request.doc_id, request.attribute.name)
        value = None
        supporting: list[str] = []
        if entry is not None:
            for seg in request.segments:
                if seg.start < entry.span_end and entry.span_start < seg.end:
                    supporting.append(seg.seg_id)
            if supporting:
                value = entry.value
        return ProviderReply(raw_output=json.dumps({"value": value, "segments": supporting}))

    def synthesize_exemplars(self, attr: AttributeSpec, count: int) -> list[str]:
        return [
            f"Representative mention {i} of {attr.name}: {attr.description}."
            for i in range(count)
        ]


class HttpProvider:
    """Chat-completion style HTTP extractor.

    POST {model, messages:[...]} and expects the assistant content to be a
    JSON object with a single "value" field (optionally "segments"). URL,
    model, and key come from configuration or the DOCQL_PROVIDER_URL /
    DOCQL_MODEL / DOCQL_API_KEY environment variables.
    """

    name = "http"

    def __init__(self, url: str, model: str, api_key: str | None = None, timeout: float = 60.0):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def _post(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        try:
            resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise ProviderError(f"provider transport error: {exc}") from exc

    def extract(self, request: ExtractionRequest, prompt: str) -> ProviderReply:
        return ProviderReply(raw_output=self._post(prompt))

    def synthesize_exemplars(self, attr: AttributeSpec, count: int) -> list[str]:
        prompt = (
            f"Write {count} short, varied example sentences in which the attribute "
            f"'{attr.name}' ({attr.description}) appears with a concrete value. "
            'Reply with a JSON array of strings.'
        )
        raw = self._post(prompt)
        try:
            texts = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProviderError(f"unparseable exemplar reply: {exc}") from exc
        if not isinstance(texts, list):
            raise ProviderError("exemplar reply is not a JSON array")
        return [str(t) for t in texts][:count]


@dataclass
class AuditRecord:
    seq: int
    timestamp: float
    doc_id: str
    attribute: str
    input_tokens: int
    output_tokens: int


class AuditLog:
    """Append-only record of every provider call, ordered by sequence number.

    With logical_clock=True (the default for mock/deterministic runs) the
    timestamp field is the sequence number, which keeps the serialized log
    byte-identical across runs.
    """

    def __init__(self, logical_clock: bool = True):
        self.logical_clock = logical_clock
        self._records: list[AuditRecord] = []
        self._lock = threading.Lock()

    def record(self, doc_id: str, attribute: str, input_tokens: int, output_tokens: int) -> None:
        with self._lock:
            seq = len(self._records)
            stamp = float(seq) if self.logical_clock else time.time()
            self._records.append(
                AuditRecord(seq, stamp, doc_id, attribute, input_tokens, output_tokens)
            )

    @property
    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    @property
    def calls(self) -> int:
        return len(self._records)

    def total_input_tokens(self) -> int:
        return sum(r.input_tokens for r in self._records)

    def total_output_tokens(self) -> int:
        return sum(r.output_tokens for r in self._records)

    def total_tokens(self) -> int:
        return self.total_input_tokens() + self.total_output_tokens()

    def calls_for(self, doc_id: str | None = None, attribute: str | None = None) -> list[AuditRecord]:
        return [
            r
            for r in self._records
            if (doc_id is None or r.doc_id == doc_id)
            and (attribute is None or r.attribute == attribute)
        ]

    def dump_jsonl(self) -> str:
        lines = []
        for r in self._records:
            lines.append(
                json.dumps(
                    {
                        "timestamp": r.timestamp,
                        "doc_id": r.doc_id,
                        "attribute": r.attribute,
                        "input_tokens": r.input_tokens,
                        "output_tokens": r.output_tokens,
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")


class ExtractionCache:
    """Cross-query cache keyed by (doc_id, table, attribute).

    Thread-safe with per-key single-flight: two concurrent misses on one key
    produce exactly one provider call.
    """

    def __init__(self):
        self._store: dict[tuple, ExtractionResult] = {}
        self._locks: dict[tuple, threading.Lock] = {}
        self._mutex = threading.Lock()

    def __len__(self) -> int:
        return len(self._store)

    def lookup(self, key: tuple) -> ExtractionResult | None:
        with self._mutex:
            return self._store.get(key)

    def __contains__(self, key: tuple) -> bool:
        with self._mutex:
            return key in self._store

    def get_or_compute(
        self, key: tuple, compute: Callable[[], ExtractionResult]
    ) -> tuple[ExtractionResult, bool]:
        """Return (result, was_hit)."""
        with self._mutex:
            if key in self._store:
                return self._store[key], True
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            with self._mutex:
                if key in self._store:
                    return self._store[key], True
            result = compute()
            with self._mutex:
                self._store[key] = result
            return result, False


def cache_key(doc_id: str, attr: AttributeSpec) -> tuple:
    return (doc_id, attr.table, attr.name)


def build_prompt(attr: AttributeSpec, segments: list[Segment]) -> str:
    header = (
        f"Extract the value of attribute '{attr.name}' ({attr.description}). "
        'Reply with a JSON object {"value": ...} holding exactly one value, '
        "or null if the text does not state it.\n\n"
    )
    return header + "\n".join(seg.text for seg in segments)


def _parse_reply(raw: str, attr: AttributeSpec) -> tuple[object, list[str], str | None]:
    """Parse provider output into (value, named segment ids, warning)."""
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError:
        return None, [], f"unparseable provider output: {raw[:80]!r}"
    named: list[str] = []
    if isinstance(payload, dict):
        value = payload.get("value")
        named = [str(s) for s in payload.get("segments", [])]
    else:
        value = payload
    if isinstance(value, (list, dict)):
        return None, named, "provider returned multiple values; one value per attribute"
    if value is None:
        return None, named, None
    if attr.dtype == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            try:
                value = float(value) if "." in str(value) else int(value)
            except (TypeError, ValueError):
                return None, named, f"non-numeric value {value!r} for numeric attribute"
        return value, named, None
    return str(value), named, None


def extract_attribute(
    request: ExtractionRequest,
    provider: ExtractorProvider,
    cache: ExtractionCache,
    audit: AuditLog,
    tokenizer: Tokenizer | None = None,
    max_attempts: int = 3,
    backoff: float = 0.2,
) -> ExtractionResult:
    """Extract one attribute from one document's retrieved segments.

    Cache hits return the stored result and add no tokens. An empty segment
    list yields NULL at zero cost without a provider call (and without
    polluting the cache, since a later query may retrieve better segments).
    """
    key = cache_key(request.doc_id, request.attribute)
    hit = cache.lookup(key)
    if hit is not None:
        return hit
    if not request.segments:
        return ExtractionResult(value=None, provenance=[], input_tokens=0, output_tokens=0)

    def compute() -> ExtractionResult:
        prompt = build_prompt(request.attribute, request.segments)
        last_error: Exception | None = None
        for attempt in range(max_attempts):
            try:
                reply = provider.extract(request, prompt)
                break
            except ProviderError as exc:
                last_error = exc
                if attempt + 1 < max_attempts and backoff > 0:
                    time.sleep(backoff * (2**attempt))
        else:
            raise ProviderError(f"{key}: provider failed after {max_attempts} attempts: {last_error}")

        value, named, warning = _parse_reply(reply.raw_output, request.attribute)
        supplied = [seg.seg_id for seg in request.segments]
        provenance = [s for s in named if s in supplied]
        if value is not None and not provenance:
            provenance = supplied
        input_tokens = count_tokens(prompt, tokenizer)
        output_tokens = count_tokens(reply.raw_output, tokenizer)
        audit.record(request.doc_id, request.attribute.name, input_tokens, output_tokens)
        return ExtractionResult(
            value=value,
            provenance=provenance,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            warning=warning,
        )

    result, _ = cache.get_or_compute(key, compute)
    return result


def extract_for_sample(
    doc: Document,
    attrs: list[AttributeSpec],
    segments: list[Segment],
    provider: ExtractorProvider,
    cache: ExtractionCache,
    audit: AuditLog,
    tokenizer: Tokenizer | None = None,
) -> tuple[TupleRecord, dict[str, list[str]]]:
    """Sampling-phase extraction: the whole document is read per attribute.

    Returns the extracted tuple plus per-attribute provenance segment ids,
    which the index module turns into retrieval evidence.
    """
    record = TupleRecord(doc_id=doc.doc_id)
    provenance: dict[str, list[str]] = {}
    for attr in attrs:
        request = ExtractionRequest(doc_id=doc.doc_id, attribute=attr, segments=list(segments))
        result = extract_attribute(request, provider, cache, audit, tokenizer)
        record.values[attr.name] = result.value
        if result.value is not None:
            record.provenance[attr.name] = list(result.provenance)
            provenance[attr.name] = list(result.provenance)
    return record, provenance
