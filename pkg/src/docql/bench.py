"""Benchmark harness comparing ordering strategies on synthetic workloads.

One corpus/index build is shared across all runs of a workload; every
(query, strategy) run gets a fresh extraction cache so no strategy coasts
on another's extractions. Sampling uses the same seed across strategies, so
the sampling spend is identical and differences isolate the ordering under
test.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .catalog import Catalog, load_corpus
from .embedding import Embedder, HashedBagEmbedder
from .executor import Engine, score_results
from .extract import ExtractionCache, MockProvider
from .index import IndexBundle, build_indexes
from .queryparser import parse_query
from .report import BenchRow
from .workload import GeneratedWorkload, ground_truth_rows

DEFAULT_STRATEGIES = ("quest", "exhaust", "avg-cost", "selectivity", "random")


@dataclass
class QueryRun:
    group: str
    query: str
    strategy: str
    tokens: int
    calls: int
    wall_ms: float
    f1: float
    join_mode: str = "transform"


@dataclass
class BenchResult:
    runs: list[QueryRun] = field(default_factory=list)

    def rows(self) -> list[BenchRow]:
        keyed: dict[tuple[str, str], list[QueryRun]] = {}
        for run in self.runs:
            keyed.setdefault((run.group, run.strategy), []).append(run)
        rows = []
        for (group, strategy), runs in sorted(keyed.items()):
            n = len(runs)
            rows.append(
                BenchRow(
                    group=group,
                    strategy=strategy,
                    mean_tokens=sum(r.tokens for r in runs) / n,
                    mean_calls=sum(r.calls for r in runs) / n,
                    mean_wall_ms=sum(r.wall_ms for r in runs) / n,
                    f1=sum(r.f1 for r in runs) / n,
                )
            )
        return rows

    def mean_tokens(self, strategy: str, group: str | None = None) -> float:
        runs = [
            r for r in self.runs
            if r.strategy == strategy and (group is None or r.group == group)
        ]
        return sum(r.tokens for r in runs) / len(runs) if runs else 0.0


@dataclass
class BenchHarness:
    """Built once per workload; reusable across strategies and queries."""

    workload: GeneratedWorkload
    catalog: Catalog
    bundle: IndexBundle
    embedder: Embedder
    sample_rate: float
    seed: int

    @classmethod
    def build(
        cls,
        workload: GeneratedWorkload,
        embedder: Embedder | None = None,
        sample_rate: float = 0.05,
        seed: int = 0,
        merge_threshold: float = 0.75,
    ) -> "BenchHarness":
        embedder = embedder or HashedBagEmbedder(256)
        corpus = load_corpus(workload.records)
        catalog = Catalog(corpus)
        for table in workload.tables:
            catalog.register_table(table)
        bundle = build_indexes(corpus, embedder, merge_threshold)
        return cls(
            workload=workload,
            catalog=catalog,
            bundle=bundle,
            embedder=embedder,
            sample_rate=sample_rate,
            seed=seed,
        )

    def engine(self) -> Engine:
        """Fresh engine (fresh cache) sharing the prebuilt index."""
        return Engine(
            catalog=self.catalog,
            bundle=self.bundle,
            embedder=self.embedder,
            provider=MockProvider(self.workload.truth),
            cache=ExtractionCache(),
            sample_rate=self.sample_rate,
            seed=self.seed,
            backoff=0.0,
        )

    def run_query(self, query_text: str, strategy: str, join_mode: str = "transform",
                  group: str = "?") -> QueryRun:
        engine = self.engine()
        spec = parse_query(query_text, self.catalog)
        truth_rows = ground_truth_rows(spec, self.workload.truth, self.catalog)
        started = time.perf_counter()
        result, report = engine.execute_query(
            spec, strategy=strategy, seed=self.seed, join_mode=join_mode
        )
        wall_ms = (time.perf_counter() - started) * 1000.0
        _, _, f1 = score_results(result.canonical(), truth_rows)
        return QueryRun(
            group=group,
            query=query_text,
            strategy=strategy,
            tokens=report.total_tokens,
            calls=report.provider_calls,
            wall_ms=wall_ms,
            f1=f1,
            join_mode=join_mode,
        )

    def run_all(self, strategies=DEFAULT_STRATEGIES, join_modes: dict | None = None) -> BenchResult:
        """Every (query, strategy) combination; join_modes maps a strategy
        label to a join execution mode (used for the pushdown baseline)."""
        result = BenchResult()
        join_modes = join_modes or {}
        for query in self.workload.queries:
            for strategy in strategies:
                mode = join_modes.get(strategy, "transform")
                real_strategy = "quest" if strategy == "pushdown" else strategy
                run = self.run_query(query.text, real_strategy, join_mode=mode, group=query.group)
                run.strategy = strategy
                result.runs.append(run)
        return result
