"""Command-line surface: index, query, bench, gen.

Exit codes: 0 success, 2 validation/parse errors, 3 provider failure,
4 token budget exceeded.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .bench import DEFAULT_STRATEGIES, BenchHarness
from .catalog import Catalog, Corpus, load_corpus, load_saved_corpus, load_schema, save_corpus, save_schema
from .config import Config, load_config, save_config
from .embedding import Embedder, HashedBagEmbedder, HttpEmbedder
from .errors import (
    DocqlError,
    ParseError,
    ProviderError,
    ValidationError,
)
from .executor import Engine
from .extract import ExtractionCache, HttpProvider, MockProvider, SidecarTruth
from .index import IndexBundle, VectorIndex, build_indexes, save_threshold_state
from .report import (
    format_table,
    render_per_doc_cost_figure,
    render_report_figures,
    write_report_csv,
)
from .workload import (
    JoinWorkloadSpec,
    WorkloadSpec,
    generate_join_workload,
    generate_workload,
)

EXIT_VALIDATION = 2
EXIT_PROVIDER = 3
EXIT_BUDGET = 4


def _load_corpus_any(path: str | Path) -> Corpus:
    p = Path(path)
    if p.is_dir():
        return load_corpus(p)
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                saved = "token_count" in json.loads(line)
                break
        else:
            raise ValidationError(f"{p}: empty corpus file")
    return load_saved_corpus(p) if saved else load_corpus(p)


def _make_embedder(config: Config) -> Embedder:
    if config.embedder == "hash":
        return HashedBagEmbedder(config.dim)
    import os

    return HttpEmbedder(config.embedder_url, config.dim, api_key=os.environ.get("DOCQL_API_KEY"))


def _make_provider(config: Config):
    if config.provider == "mock":
        return MockProvider(SidecarTruth.load(config.sidecar))
    import os

    return HttpProvider(
        config.provider_url, config.model or "default", api_key=os.environ.get("DOCQL_API_KEY")
    )


def _save_bundle(bundle: IndexBundle, index_dir: Path) -> None:
    index_dir.mkdir(parents=True, exist_ok=True)
    bundle.doc_index.save(index_dir / "doc_index.bin")
    bundle.seg_index.save(index_dir / "seg_index.bin")
    with open(index_dir / "segments.jsonl", "w", encoding="utf-8") as fh:
        for doc_id in bundle.segments:
            for seg in bundle.segments[doc_id]:
                fh.write(
                    json.dumps(
                        {
                            "seg_id": seg.seg_id,
                            "doc_id": seg.doc_id,
                            "start": seg.start,
                            "end": seg.end,
                            "token_count": seg.token_count,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def _load_bundle(index_dir: Path, corpus: Corpus) -> IndexBundle:
    from .catalog import Segment

    doc_index = VectorIndex.load(index_dir / "doc_index.bin")
    seg_index = VectorIndex.load(index_dir / "seg_index.bin")
    segments: dict[str, list[Segment]] = {}
    with open(index_dir / "segments.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            doc = corpus.get(rec["doc_id"])
            seg = Segment(
                seg_id=rec["seg_id"],
                doc_id=rec["doc_id"],
                start=rec["start"],
                end=rec["end"],
                text=doc.text[rec["start"] : rec["end"]],
                token_count=rec["token_count"],
                embedding=seg_index.vector(rec["seg_id"]),
            )
            segments.setdefault(rec["doc_id"], []).append(seg)
    return IndexBundle(doc_index=doc_index, seg_index=seg_index, segments=segments)


def build_engine_from_config(config: Config, use_artifacts: bool = True) -> Engine:
    corpus = _load_corpus_any(config.corpus)
    catalog = load_schema(config.schema, corpus)
    embedder = _make_embedder(config)
    index_dir = config.index_dir
    if use_artifacts and (index_dir / "doc_index.bin").exists():
        bundle = _load_bundle(index_dir, corpus)
    else:
        bundle = build_indexes(corpus, embedder, config.merge_threshold)
    return Engine(
        catalog=catalog,
        bundle=bundle,
        embedder=embedder,
        provider=_make_provider(config),
        cache=ExtractionCache(),
        sample_rate=config.sample_rate,
        evidence_k=config.evidence_k,
        initial_tau=config.initial_tau,
        default_gamma=config.default_gamma,
        seed=config.seed,
        workers=config.workers,
    )


@click.group()
@click.option("--config", "config_path", default=None, type=click.Path(), help="Config JSON path.")
@click.pass_context
def main(ctx, config_path):
    """Cost-aware SPJ queries over unstructured document collections."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


def _require_config(ctx) -> Config:
    path = ctx.obj.get("config_path")
    if path is None:
        raise ValidationError("this command needs --config pointing at a config JSON")
    return load_config(path)


def _fail(exc: Exception, code: int):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@main.command()
@click.pass_context
def index(ctx):
    """Build and persist the catalog, summaries, and both vector indexes."""
    try:
        config = _require_config(ctx)
        corpus = _load_corpus_any(config.corpus)
        catalog = load_schema(config.schema, corpus)
        embedder = _make_embedder(config)
        bundle = build_indexes(corpus, embedder, config.merge_threshold)
        index_dir = config.index_dir
        index_dir.mkdir(parents=True, exist_ok=True)
        save_corpus(corpus, index_dir / "documents.jsonl")
        save_schema(catalog, index_dir / "tables.json")
        _save_bundle(bundle, index_dir)
    except (ValidationError, ParseError, DocqlError) as exc:
        _fail(exc, EXIT_VALIDATION)
    n_segments = sum(len(v) for v in bundle.segments.values())
    import hashlib

    manifest = {
        "documents": len(corpus),
        "segments": n_segments,
        "embedder": embedder.embedder_id,
        "files": {
            f.name: hashlib.sha256(f.read_bytes()).hexdigest()
            for f in sorted(index_dir.iterdir())
            if f.is_file() and f.name != "manifest.json"
        },
    }
    (index_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    click.echo(f"documents: {len(corpus)}, segments: {n_segments}")
    click.echo(f"artifacts: {index_dir}")


@main.command()
@click.argument("query_text")
@click.option("--strategy", default="quest",
              type=click.Choice(["quest", "selectivity", "avg-cost", "random", "exhaust", "eager"]))
@click.option("--explain", is_flag=True, help="Print plans from priors; no provider calls.")
@click.option("--seed", default=None, type=int)
@click.option("--budget", default=None, type=int, help="Hard token ceiling for the session.")
@click.option("--join-mode", default="transform", type=click.Choice(["transform", "pushdown"]))
@click.option("--out", "out_dir", default=None, type=click.Path(), help="Write results/report here.")
@click.option("--in-selectivity", default=0.5, type=float,
              help="Assumed IN selectivity for EXPLAIN join cost models.")
@click.pass_context
def query(ctx, query_text, strategy, explain, seed, budget, join_mode, out_dir, in_selectivity):
    """Execute one query (or EXPLAIN it) against the configured corpus.

    QUERY_TEXT of "-" reads the query from stdin.
    """
    try:
        if query_text.strip() == "-":
            query_text = click.get_text_stream("stdin").read().strip()
        config = _require_config(ctx)
        engine = build_engine_from_config(config)
        if explain:
            click.echo(engine.explain(query_text, assumed_in_selectivity=in_selectivity))
            return
        eager = strategy == "eager"
        result, report = engine.execute_query(
            query_text,
            strategy="quest" if eager else strategy,
            seed=config.seed if seed is None else seed,
            budget=budget if budget is not None else config.budget,
            join_mode=join_mode,
            eager=eager,
        )
    except (ValidationError, ParseError) as exc:
        _fail(exc, EXIT_VALIDATION)
    except ProviderError as exc:
        _fail(exc, EXIT_PROVIDER)
    except DocqlError as exc:
        _fail(exc, EXIT_VALIDATION)

    for row in result.rows:
        click.echo(json.dumps(row.cells, sort_keys=True, default=str))
    summary = {
        "tuples": report.tuples,
        "tokens_in": report.tokens_in,
        "tokens_out": report.tokens_out,
        "provider_calls": report.provider_calls,
        "wall_ms": round(report.wall_ms, 1),
        "partial": report.partial,
    }
    click.echo(f"# report {json.dumps(summary, sort_keys=True)}", err=True)
    for warning in report.warnings:
        click.echo(f"# warning: {warning}", err=True)

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
            for row in result.rows:
                fh.write(json.dumps({"cells": row.cells, "docs": list(row.docs)},
                                    sort_keys=True, default=str) + "\n")
        session = {
            "strategy": report.strategy,
            "tuples": report.tuples,
            "tokens_in": report.tokens_in,
            "tokens_out": report.tokens_out,
            "provider_calls": report.provider_calls,
            "wall_ms": report.wall_ms,
            "partial": report.partial,
            "warnings": report.warnings,
            "per_doc_cost": report.per_doc_cost,
        }
        (out / "report.json").write_text(json.dumps(session, indent=2, sort_keys=True) + "\n")
        if report.audit is not None:
            (out / "audit.jsonl").write_text(report.audit.dump_jsonl())
        for table_name, (thresholds, evidence) in report.table_states.items():
            save_threshold_state(out / f"thresholds_{table_name}.jsonl", thresholds, evidence)
        if report.per_doc_cost:
            render_per_doc_cost_figure(report.per_doc_cost, out / "per_doc_cost.png")

    if report.partial and (budget is not None or config.budget is not None):
        click.echo("# budget exceeded; results are partial", err=True)
        sys.exit(EXIT_BUDGET)


@main.command()
@click.option("--workload", "workload_kind", default="all",
              type=click.Choice(["single", "join", "all"]))
@click.option("--docs", default=200, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--queries-per-group", default=3, type=int)
@click.option("--out", "out_dir", default="bench_out", type=click.Path())
@click.option("--strategies", default=",".join(DEFAULT_STRATEGIES))
@click.pass_context
def bench(ctx, workload_kind, docs, seed, queries_per_group, out_dir, strategies):
    """Generate synthetic workloads, run the strategy zoo, write CSV + figures."""
    strategy_list = [s.strip() for s in strategies.split(",") if s.strip()]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_runs = []
    try:
        if workload_kind in ("single", "all"):
            spec = WorkloadSpec(n_docs=docs, seed=seed, queries_per_group=queries_per_group)
            harness = BenchHarness.build(generate_workload(spec), seed=seed)
            all_runs.extend(harness.run_all(strategy_list).runs)
        if workload_kind in ("join", "all"):
            for group, coverage in (("E1", 0.15), ("E2", 0.45), ("E3", 0.85)):
                jspec = JoinWorkloadSpec(team_coverage=coverage, seed=seed, group=group)
                harness = BenchHarness.build(generate_join_workload(jspec), sample_rate=0.2, seed=seed)
                result = harness.run_all(
                    strategies=["quest", "pushdown"], join_modes={"pushdown": "pushdown"}
                )
                all_runs.extend(result.runs)
    except (ValidationError, ParseError) as exc:
        _fail(exc, EXIT_VALIDATION)
    except ProviderError as exc:
        _fail(exc, EXIT_PROVIDER)

    from .bench import BenchResult

    rows = BenchResult(runs=all_runs).rows()
    write_report_csv(rows, out / "report.csv")
    figures = render_report_figures(rows, out)
    click.echo(format_table(rows))
    click.echo(f"# wrote {out / 'report.csv'} and {', '.join(str(f) for f in figures)}", err=True)


@main.command()
@click.option("--kind", default="single", type=click.Choice(["single", "join"]))
@click.option("--docs", default=200, type=int)
@click.option("--pad-tokens", default=0, type=int)
@click.option("--attributes", default=5, type=int)
@click.option("--asymmetry", default="random", type=click.Choice(["off", "random", "alternating"]))
@click.option("--coverage", default=0.3, type=float, help="Join workloads: IN coverage of teams.")
@click.option("--queries-per-group", default=3, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_dir", default="workload_out", type=click.Path())
def gen(kind, docs, pad_tokens, attributes, asymmetry, coverage, queries_per_group, seed, out_dir):
    """Generate a synthetic corpus, sidecar truth, schema, and query set."""
    try:
        if kind == "single":
            workload = generate_workload(
                WorkloadSpec(
                    n_docs=docs,
                    pad_tokens=pad_tokens,
                    n_attributes=attributes,
                    cost_asymmetry=asymmetry,
                    queries_per_group=queries_per_group,
                    seed=seed,
                )
            )
        else:
            workload = generate_join_workload(
                JoinWorkloadSpec(n_players=docs, team_coverage=coverage, seed=seed)
            )
    except ValidationError as exc:
        _fail(exc, EXIT_VALIDATION)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for rec in workload.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    workload.truth.save(out / "sidecar.jsonl")

    corpus = load_corpus(workload.records)
    catalog = Catalog(corpus)
    for table in workload.tables:
        catalog.register_table(table)
    save_schema(catalog, out / "tables.json")

    (out / "queries.json").write_text(
        json.dumps(
            [{"text": q.text, "group": q.group, "n_filters": q.n_filters} for q in workload.queries],
            indent=2,
        )
        + "\n"
    )
    save_config(
        Config(
            corpus=str(out / "corpus.jsonl"),
            schema=str(out / "tables.json"),
            sidecar=str(out / "sidecar.jsonl"),
            out_dir=str(out),
            seed=seed,
        ),
        out / "config.json",
    )
    click.echo(
        f"documents: {len(workload.records)}, queries: {len(workload.queries)}, "
        f"truth entries: {len(workload.truth)}"
    )
    click.echo(f"artifacts: {out}")


if __name__ == "__main__":
    main()
