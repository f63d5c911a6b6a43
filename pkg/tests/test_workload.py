import pytest

from conftest import build_engine

from docql.catalog import Catalog, load_corpus
from docql.errors import ValidationError
from docql.queryparser import parse_query
from docql.workload import (
    JoinWorkloadSpec,
    WorkloadSpec,
    generate_join_workload,
    generate_workload,
    ground_truth_rows,
)


def test_swde_like_token_average_exact():
    spec = WorkloadSpec(
        n_docs=200, pad_tokens=416, n_attributes=3, cost_asymmetry="off", seed=1,
    )
    wl = generate_workload(spec)
    corpus = load_corpus(wl.records)
    stats = corpus.stats()
    assert stats["documents"] == 200
    assert stats["avg_tokens"] == 416.0
    assert all(d.token_count == 416 for d in corpus)


def test_planted_selectivity_within_3_sigma():
    p = 0.3
    spec = WorkloadSpec(
        n_docs=400, n_attributes=1, selectivities=[p], cost_asymmetry="off", seed=5,
    )
    wl = generate_workload(spec)
    name, _, threshold, _ = __import__("docql.workload", fromlist=["NUMERIC_ATTRS"]).NUMERIC_ATTRS[0]
    hits = 0
    for i in range(spec.n_docs):
        entry = wl.truth.get(f"player_{i:04d}", name)
        hits += entry.value > threshold
    sigma = (p * (1 - p) / spec.n_docs) ** 0.5
    assert abs(hits / spec.n_docs - p) <= 3 * sigma


def test_alternating_cost_asymmetry_contract():
    spec = WorkloadSpec(n_docs=8, n_attributes=2, cost_asymmetry="alternating", seed=3,
                        asymmetry_factor=4)
    wl = generate_workload(spec)
    # odd docs carry note sentences for the first attribute, even docs none
    for i in range(8):
        text = wl.records[i]["text"]
        notes = text.count("age value") - 1  # one real value sentence
        if i % 2 == 1:
            assert notes >= spec.asymmetry_factor
        else:
            assert notes == 0


def test_measured_costs_reflect_asymmetry():
    spec = WorkloadSpec(n_docs=6, n_attributes=1, cost_asymmetry="alternating", seed=3,
                        asymmetry_factor=5)
    wl = generate_workload(spec)
    engine = build_engine(wl.records, wl.truth, wl.tables, sample_rate=0.4, seed=2)
    from docql.queryparser import parse_query as parse

    spec_q = parse("SELECT name FROM players WHERE age > 35", engine.catalog)
    ctx = engine._prepare_table(
        engine.catalog.table("players"), spec_q.where,
        spec_q.select_attrs + spec_q.where_attrs(), 2,
        __import__("docql.executor", fromlist=["QuerySession"]).QuerySession("quest", None),
    )
    age = next(a for a in ctx.attrs if a.name == "age")
    sampled = set(ctx.sample_ids)  # cached -> cost 0, not informative here
    heavy = [ctx.cost_vectors[d].cost(age) for d in ctx.doc_ids
             if int(d[-4:]) % 2 == 1 and d not in sampled]
    light = [ctx.cost_vectors[d].cost(age) for d in ctx.doc_ids
             if int(d[-4:]) % 2 == 0 and d not in sampled]
    assert heavy and light
    assert min(heavy) > 3 * max(light)


def test_invalid_specs_rejected():
    with pytest.raises(ValidationError):
        generate_workload(WorkloadSpec(n_docs=0))
    with pytest.raises(ValidationError):
        generate_workload(WorkloadSpec(selectivities=[1.5]))
    with pytest.raises(ValidationError):
        generate_workload(WorkloadSpec(cost_asymmetry="bogus"))
    with pytest.raises(ValidationError):
        generate_join_workload(JoinWorkloadSpec(team_coverage=0.0))


def test_queries_have_expected_filter_counts():
    spec = WorkloadSpec(n_docs=10, n_attributes=5, seed=8, queries_per_group=4)
    wl = generate_workload(spec)
    by_group = {}
    for q in wl.queries:
        by_group.setdefault(q.group, []).append(q)
    assert len(by_group["C1"]) == 4
    assert all(q.n_filters == 1 for q in by_group["C1"])
    assert all(2 <= q.n_filters <= 3 for q in by_group["C2"])
    assert all(q.n_filters >= 4 for q in by_group["C3"])


def test_generated_queries_parse():
    spec = WorkloadSpec(n_docs=5, n_attributes=5, seed=8, queries_per_group=3)
    wl = generate_workload(spec)
    corpus = load_corpus(wl.records)
    catalog = Catalog(corpus)
    for table in wl.tables:
        catalog.register_table(table)
    for q in wl.queries:
        parse_query(q.text, catalog)


def test_ground_truth_single_table_hand_check():
    spec = WorkloadSpec(n_docs=12, n_attributes=1, selectivities=[0.5], seed=4,
                        cost_asymmetry="off")
    wl = generate_workload(spec)
    corpus = load_corpus(wl.records)
    catalog = Catalog(corpus)
    for table in wl.tables:
        catalog.register_table(table)
    from docql.workload import NUMERIC_ATTRS

    name, _, threshold, _ = NUMERIC_ATTRS[0]
    q = parse_query(f"SELECT name FROM players WHERE {name} > {threshold}", catalog)
    rows = ground_truth_rows(q, wl.truth, catalog)
    expected = sorted(
        (("players.name", wl.truth.get(f"player_{i:04d}", "name").value.casefold()),)
        for i in range(12)
        if wl.truth.get(f"player_{i:04d}", name).value > threshold
    )
    assert rows == [tuple(r) for r in expected]


def test_join_workload_coverage_controls_in_selectivity():
    for coverage in (0.15, 0.5, 0.9):
        spec = JoinWorkloadSpec(n_players=60, n_teams=20, team_coverage=coverage, seed=6)
        wl = generate_join_workload(spec)
        survivors = set()
        for i in range(spec.n_players):
            age = wl.truth.get(f"player_{i:04d}", "age").value
            stars = wl.truth.get(f"player_{i:04d}", "all_stars").value
            if age > 35 and stars > 12:
                survivors.add(wl.truth.get(f"player_{i:04d}", "team").value)
        fraction = len(survivors) / spec.n_teams
        assert fraction <= coverage + 0.05
