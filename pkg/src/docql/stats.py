"""Sampling, selectivity estimation, and per-document cost measurement.

Selectivities use Laplace (+1/+2) smoothing over the non-NULL sampled
values, which keeps every estimate strictly inside (0, 1) so priority
scores stay finite and orderings stay total. NULL-valued samples are
excluded from the denominator: a NULL means extraction failed, not that
the predicate was false.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .catalog import AttributeSpec, TupleRecord
from .extract import ExtractionCache, cache_key
from .index import EvidenceSet, IndexBundle, ThresholdState, retrieve_segments
from .queryparser import Op, Predicate, canon

DEFAULT_SAMPLE_RATE = 0.05


@dataclass
class SamplePlan:
    rate: float = DEFAULT_SAMPLE_RATE
    seed: int = 0
    sampled_ids: list[str] = field(default_factory=list)


def sample_documents(doc_ids: Sequence[str], plan: SamplePlan) -> list[str]:
    """Uniform sample without replacement, size max(1, round(rate * n))."""
    if not doc_ids:
        return []
    size = max(1, round(plan.rate * len(doc_ids)))
    size = min(size, len(doc_ids))
    rng = random.Random(plan.seed)
    sampled = rng.sample(list(doc_ids), size)
    plan.sampled_ids = sampled
    return sampled


def split_sample(
    records: Iterable[TupleRecord], attrs: Sequence[AttributeSpec]
) -> tuple[list[str], list[str]]:
    """Partition sampled docs into (relevant, irrelevant-by-all-NULL)."""
    relevant: list[str] = []
    irrelevant: list[str] = []
    names = [a.name for a in attrs]
    for rec in records:
        if all(rec.values.get(name) is None for name in names):
            irrelevant.append(rec.doc_id)
        else:
            relevant.append(rec.doc_id)
    return relevant, irrelevant


@dataclass
class FilterStats:
    predicate: Predicate
    selectivity: float
    sample_support: int
    flagged: bool = False


def estimate_selectivity(predicate: Predicate, records: Iterable[TupleRecord]) -> FilterStats:
    """Smoothed satisfaction frequency over non-NULL sampled values."""
    usable = 0
    satisfied = 0
    for rec in records:
        value = rec.values.get(predicate.attribute.name)
        if value is None:
            continue
        usable += 1
        if predicate.evaluate(value):
            satisfied += 1
    if usable == 0:
        return FilterStats(predicate, selectivity=0.5, sample_support=0, flagged=True)
    p = (satisfied + 1) / (usable + 2)
    return FilterStats(predicate, selectivity=min(max(p, 0.0), 1.0), sample_support=usable)


def estimate_in_selectivity(
    values: Iterable[object],
    join_attr: AttributeSpec,
    records: Iterable[TupleRecord],
) -> FilterStats:
    """Selectivity of a synthesized IN filter, from the target table's sample.

    An empty driving-side value set degenerates to the smoothing floor; the
    executor short-circuits that case before any target-side extraction.
    """
    canon_values = {canon(v) for v in values}
    literals = tuple(dict.fromkeys(values)) or ("",)
    pred = Predicate(join_attr, Op.IN, literals, synthetic=True)
    usable = 0
    matched = 0
    for rec in records:
        value = rec.values.get(join_attr.name)
        if value is None:
            continue
        usable += 1
        if canon(value) in canon_values:
            matched += 1
    if usable == 0:
        return FilterStats(pred, selectivity=0.5, sample_support=0, flagged=True)
    p = (matched + 1) / (usable + 2)
    return FilterStats(pred, selectivity=p, sample_support=usable)


@dataclass
class DocCostVector:
    """Per-document extraction cost (tokens of retrieved segments) per attribute."""

    doc_id: str
    per_attribute_cost: dict[tuple[str, str], int] = field(default_factory=dict)

    def cost(self, attr: AttributeSpec) -> int:
        return self.per_attribute_cost.get(attr.key, 0)


def attr_retrieval(
    doc_id: str,
    attrs: Sequence[AttributeSpec],
    bundle: IndexBundle,
    evidence: dict[tuple[str, str], EvidenceSet],
    thresholds: ThresholdState,
    cache: ExtractionCache | None = None,
) -> tuple[DocCostVector, dict[tuple[str, str], list[str]]]:
    """One retrieval pass over a document: per-attribute segment lists plus
    their token sums (the planner's cost inputs). Never touches the provider.

    Attributes already in the extraction cache cost nothing: their values
    are a lookup away, so no segments are fetched for them.
    """
    vec = DocCostVector(doc_id=doc_id)
    segments: dict[tuple[str, str], list[str]] = {}
    for attr in attrs:
        if cache is not None and cache_key(doc_id, attr) in cache:
            vec.per_attribute_cost[attr.key] = 0
            segments[attr.key] = []
            continue
        ev = evidence.get(attr.key)
        if ev is None:
            vec.per_attribute_cost[attr.key] = 0
            segments[attr.key] = []
            continue
        segs, total = retrieve_segments(bundle, doc_id, ev, thresholds.gamma_for(attr))
        vec.per_attribute_cost[attr.key] = total
        segments[attr.key] = [s.seg_id for s in segs]
    return vec, segments


def measure_costs(
    doc_id: str,
    attrs: Sequence[AttributeSpec],
    bundle: IndexBundle,
    evidence: dict[tuple[str, str], EvidenceSet],
    thresholds: ThresholdState,
    cache: ExtractionCache | None = None,
) -> DocCostVector:
    """Per-attribute extraction cost for one document (see attr_retrieval)."""
    vec, _ = attr_retrieval(doc_id, attrs, bundle, evidence, thresholds, cache)
    return vec
