"""End-to-end query execution.

Pipeline per table: embed the query attributes, retrieve candidate
documents, sample ~5% of them for whole-document extraction, calibrate the
document threshold and per-attribute segment thresholds from the sample,
collect retrieval evidence, estimate filter selectivities, then walk the
surviving documents one by one -- measuring that document's extraction
costs, ordering its filters under the chosen strategy, and evaluating with
short-circuiting and lazy extraction. Joins execute the cheaper side fully,
fold the join into an IN filter on the other side, and re-run the filter
ordering there; multi-join queries extend the running result left-deep,
choosing the next table adjacent to it by transformed cost.

Everything the provider is asked costs tokens exactly once (the cache
absorbs repeats), and the per-session audit log is the ground truth for
what a query cost.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .catalog import AttributeSpec, Catalog, TableSpec
from .embedding import Embedder
from .errors import (
    BudgetExceeded,
    CalibrationFailed,
    EmptyJoinInput,
    PlannerError,
    ProviderError,
)
from .extract import (
    AuditLog,
    ExtractionCache,
    ExtractionRequest,
    ExtractorProvider,
    cache_key,
    extract_attribute,
    extract_for_sample,
)
from .index import (
    DEFAULT_GAMMA,
    INITIAL_TAU,
    EvidenceSet,
    IndexBundle,
    RetrievalResult,
    ThresholdState,
    calibrate_gamma,
    calibrate_tau,
    collect_evidence,
    kmeans,
    query_embedding,
    retrieve_documents,
    retrieve_segments,
)
from .planner import (
    JoinSide,
    OrderingStrategy,
    choose_first_edge,
    choose_next_table,
    make_strategy,
    node_probability,
    order_expression,
    plan_cost_plan1,
    plan_cost_transform,
    plan_single_join,
    priority_score,
    transform_join_to_in,
    tree_expected_cost,
)
from .queryparser import (
    ExpressionNode,
    NodeKind,
    Predicate,
    QuerySpec,
    canon,
    leaves,
    parse_query,
    split_by_table,
)
from .stats import (
    DocCostVector,
    FilterStats,
    SamplePlan,
    attr_retrieval,
    estimate_in_selectivity,
    estimate_selectivity,
    measure_costs,
    sample_documents,
    split_sample,
)
from .tokens import Tokenizer, count_tokens


@dataclass
class ResultRow:
    """One output tuple: projected cells plus source documents per table."""

    cells: dict[str, object]  # "table.attr" -> value
    docs: tuple[tuple[str, str], ...]  # ((table, doc_id), ...)

    def canonical(self) -> tuple:
        return tuple(sorted((k, canon(v)) for k, v in self.cells.items()))


@dataclass
class ResultSet:
    rows: list[ResultRow] = field(default_factory=list)
    per_doc_cost: dict[str, int] = field(default_factory=dict)

    def canonical(self) -> list[tuple]:
        return sorted(row.canonical() for row in self.rows)


@dataclass
class SessionReport:
    strategy: str
    tuples: int = 0
    tokens_in: int = 0
    tokens_out: int = 0
    provider_calls: int = 0
    wall_ms: float = 0.0
    per_doc_cost: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    partial: bool = False
    explain: str | None = None
    audit: AuditLog | None = None
    table_states: dict[str, tuple[ThresholdState, dict]] = field(default_factory=dict)

    @property
    def total_tokens(self) -> int:
        return self.tokens_in + self.tokens_out


@dataclass
class TableContext:
    """Everything a table needs after retrieval, sampling, and calibration."""

    table: TableSpec
    tree: ExpressionNode | None
    attrs: list[AttributeSpec]
    doc_ids: list[str]  # refined candidate set, corpus order
    sample_ids: list[str]
    sample_records: list
    thresholds: ThresholdState
    evidence: dict[tuple[str, str], EvidenceSet]
    filter_stats: dict[int, FilterStats]  # keyed by id(predicate)
    avg_costs: dict[tuple[str, str], float]
    cost_vectors: dict[str, DocCostVector]
    planning_costs: dict[str, dict[tuple[str, str], float]] = field(default_factory=dict)
    retrieval: RetrievalResult = field(default_factory=lambda: RetrievalResult(doc_ids=[]))

    def planning_cost(self, doc_id: str, attr: AttributeSpec) -> float:
        return self.planning_costs.get(doc_id, {}).get(attr.key, 0.0)


class QuerySession:
    """Mutable per-query state: audit, warnings, budget, timers."""

    def __init__(self, strategy: str, budget: int | None, logical_clock: bool = True):
        self.audit = AuditLog(logical_clock=logical_clock)
        self.strategy = strategy
        self.budget = budget
        self.warnings: list[str] = []
        self.partial = False
        self.started = time.perf_counter()
        self.table_states: dict[str, tuple[ThresholdState, dict]] = {}

    def charge_check(self) -> None:
        if self.budget is not None and self.audit.total_tokens() > self.budget:
            raise BudgetExceeded(
                f"budget {self.budget} tokens exceeded ({self.audit.total_tokens()})"
            )

    def report(self, tuples: int, per_doc: dict[str, int], explain: str | None = None) -> SessionReport:
        return SessionReport(
            strategy=self.strategy,
            tuples=tuples,
            tokens_in=self.audit.total_input_tokens(),
            tokens_out=self.audit.total_output_tokens(),
            provider_calls=self.audit.calls,
            wall_ms=(time.perf_counter() - self.started) * 1000.0,
            per_doc_cost=per_doc,
            warnings=list(self.warnings),
            partial=self.partial,
            explain=explain,
            audit=self.audit,
            table_states=dict(self.table_states),
        )


class Engine:
    """Binds catalog, index, provider, cache, and configuration together."""

    def __init__(
        self,
        catalog: Catalog,
        bundle: IndexBundle,
        embedder: Embedder,
        provider: ExtractorProvider,
        cache: ExtractionCache | None = None,
        tokenizer: Tokenizer | None = None,
        sample_rate: float = 0.05,
        evidence_k: int = 3,
        initial_tau: float = INITIAL_TAU,
        default_gamma: float = DEFAULT_GAMMA,
        seed: int = 0,
        workers: int = 1,
        backoff: float = 0.2,
    ):
        self.catalog = catalog
        self.bundle = bundle
        self.embedder = embedder
        self.provider = provider
        self.cache = cache if cache is not None else ExtractionCache()
        self.tokenizer = tokenizer
        self.sample_rate = sample_rate
        self.evidence_k = evidence_k
        self.initial_tau = initial_tau
        self.default_gamma = default_gamma
        self.seed = seed
        self.workers = max(1, workers)
        self.backoff = backoff
        self._overheads: dict[tuple[str, str], int] = {}

    # -- public entry points ---------------------------------------------

    def execute_query(
        self,
        query: QuerySpec | str,
        strategy: str | OrderingStrategy = "quest",
        seed: int | None = None,
        budget: int | None = None,
        join_mode: str = "transform",
        eager: bool = False,
    ) -> tuple[ResultSet, SessionReport]:
        spec = parse_query(query, self.catalog) if isinstance(query, str) else query
        seed = self.seed if seed is None else seed
        strat = strategy if isinstance(strategy, OrderingStrategy) else make_strategy(strategy, seed)
        session = QuerySession(strategy=strat.name if not eager else "eager", budget=budget)
        try:
            if len(spec.tables) == 1:
                result = self._execute_single(spec, strat, seed, session, eager)
            else:
                result = self._execute_join_pipeline(spec, strat, seed, session, join_mode, eager)
        except BudgetExceeded as exc:
            session.partial = True
            session.warnings.append(str(exc))
            result = ResultSet()
        report = session.report(tuples=len(result.rows), per_doc=result.per_doc_cost)
        return result, report

    def explain(self, query: QuerySpec | str, assumed_in_selectivity: float = 0.5) -> str:
        """Render plans from provider-free priors (no sampling, no extraction)."""
        spec = parse_query(query, self.catalog) if isinstance(query, str) else query
        return self._explain(spec, assumed_in_selectivity)

    # -- table preparation -------------------------------------------------

    def _prepare_table(
        self,
        table: TableSpec,
        tree: ExpressionNode | None,
        needed_attrs: list[AttributeSpec],
        seed: int,
        session: QuerySession,
    ) -> TableContext:
        table_docs = set(self.catalog.table_doc_ids(table.name))
        q_vec = query_embedding(needed_attrs, self.embedder)
        candidates = [
            d for d in retrieve_documents(self.bundle.doc_index, q_vec, self.initial_tau)
            if d in table_docs
        ]

        thresholds = ThresholdState(tau=self.initial_tau)
        evidence: dict[tuple[str, str], EvidenceSet] = {}
        sample_records = []
        provenance_maps: list[dict[str, list[str]]] = []
        sample_ids: list[str] = []

        if candidates:
            plan = SamplePlan(rate=self.sample_rate, seed=seed)
            sample_ids = sample_documents(candidates, plan)
            for doc_id in sample_ids:
                doc = self.catalog.corpus.get(doc_id)
                record, prov = extract_for_sample(
                    doc,
                    needed_attrs,
                    self.bundle.segments[doc_id],
                    self.provider,
                    self.cache,
                    session.audit,
                    self.tokenizer,
                )
                sample_records.append(record)
                provenance_maps.append(prov)
                session.charge_check()

            relevant, _ = split_sample(sample_records, needed_attrs)
            try:
                tau = calibrate_tau(
                    q_vec, [self.bundle.doc_index.vector(d) for d in relevant]
                )
                thresholds.tau = tau
                thresholds.calibrated = True
                candidates = [
                    d for d in candidates if self.bundle.doc_index.distance(d, q_vec) < tau
                ]
            except CalibrationFailed:
                session.warnings.append(
                    f"{table.name}: no relevant documents in sample; keeping initial tau"
                )

        for attr in needed_attrs if candidates else []:
            seg_ids: list[str] = []
            for prov in provenance_maps:
                seg_ids.extend(prov.get(attr.name, []))
            segs = [self.bundle.segment(s) for s in dict.fromkeys(seg_ids)]
            if segs:
                evidence[attr.key] = collect_evidence(
                    attr, segs, self.embedder, self.provider, k=self.evidence_k, seed=seed
                )
                gamma, fallback = calibrate_gamma(
                    [s.embedding for s in segs], self.default_gamma
                )
            else:
                try:
                    evidence[attr.key] = self._synthesized_evidence(attr, seed, session)
                    gamma, fallback = self.default_gamma, True
                except ProviderError as exc:
                    session.warnings.append(f"{attr.name}: evidence unavailable: {exc}")
                    gamma, fallback = self.default_gamma, True
            thresholds.gamma[attr.key] = gamma
            if fallback:
                thresholds.gamma_fallback.add(attr.key)

        filter_stats: dict[int, FilterStats] = {}
        if tree is not None:
            for pred in leaves(tree):
                filter_stats[id(pred)] = estimate_selectivity(pred, sample_records)

        cost_vectors: dict[str, DocCostVector] = {}
        retrieval = RetrievalResult(doc_ids=list(candidates))
        for doc_id in candidates:
            vec, seg_lists = attr_retrieval(
                doc_id, needed_attrs, self.bundle, evidence, thresholds, self.cache
            )
            cost_vectors[doc_id] = vec
            for attr_key, seg_ids in seg_lists.items():
                retrieval.per_attr_segments[(doc_id, attr_key)] = (
                    seg_ids,
                    vec.per_attribute_cost.get(attr_key, 0),
                )
        # planning cost = segment tokens plus the fixed prompt/response
        # overhead an actual extraction call would add (zero-cost attributes
        # stay free: no segments means no call, cached means no call)
        planning_costs: dict[str, dict[tuple[str, str], float]] = {}
        for doc_id in candidates:
            row: dict[tuple[str, str], float] = {}
            for attr in needed_attrs:
                raw = cost_vectors[doc_id].cost(attr)
                row[attr.key] = float(raw + self._call_overhead(attr)) if raw > 0 else 0.0
            planning_costs[doc_id] = row
        avg_costs: dict[tuple[str, str], float] = {}
        for attr in needed_attrs:
            if candidates:
                avg_costs[attr.key] = sum(
                    planning_costs[d][attr.key] for d in candidates
                ) / len(candidates)
            else:
                avg_costs[attr.key] = 0.0

        session.table_states[table.name] = (thresholds, evidence)
        return TableContext(
            table=table,
            tree=tree,
            attrs=needed_attrs,
            doc_ids=candidates,
            sample_ids=sample_ids,
            sample_records=sample_records,
            thresholds=thresholds,
            evidence=evidence,
            filter_stats=filter_stats,
            avg_costs=avg_costs,
            cost_vectors=cost_vectors,
            planning_costs=planning_costs,
            retrieval=retrieval,
        )

    def _call_overhead(self, attr: AttributeSpec) -> int:
        """Tokens one extraction call costs beyond its segments: the prompt
        header plus a flat allowance for the response."""
        key = attr.key
        cached = self._overheads.get(key)
        if cached is None:
            from .extract import build_prompt

            cached = count_tokens(build_prompt(attr, []), self.tokenizer) + 12
            self._overheads[key] = cached
        return cached

    def _synthesized_evidence(self, attr, seed, session, count: int = 20) -> EvidenceSet:
        """Fallback evidence from provider-written exemplars, audited like any
        other provider interaction (doc_id empty: it belongs to no document)."""
        texts = self.provider.synthesize_exemplars(attr, count)
        if not texts:
            raise ProviderError(f"{attr.name}: provider returned no exemplars")
        session.audit.record(
            doc_id="",
            attribute=attr.name,
            input_tokens=count_tokens(attr.query_text, self.tokenizer),
            output_tokens=sum(count_tokens(t, self.tokenizer) for t in texts),
        )
        vectors = np.stack([self.embedder.embed(t) for t in texts])
        centers = kmeans(vectors, k=min(self.evidence_k, len(texts)), seed=seed)
        return EvidenceSet(attribute=attr, centers=centers, source="synthesized")

    # -- per-document evaluation -------------------------------------------

    def _doc_attr_value(self, ctx: TableContext, doc_id: str, attr: AttributeSpec, session) -> object:
        key = cache_key(doc_id, attr)
        hit = self.cache.lookup(key)
        if hit is not None:
            return hit.value
        stored = ctx.retrieval.per_attr_segments.get((doc_id, attr.key))
        if stored is not None:
            segs = [self.bundle.segment(s) for s in stored[0]]
        else:
            ev = ctx.evidence.get(attr.key)
            segs = []
            if ev is not None:
                segs, _ = retrieve_segments(
                    self.bundle, doc_id, ev, ctx.thresholds.gamma_for(attr)
                )
        request = ExtractionRequest(doc_id=doc_id, attribute=attr, segments=segs)
        result = extract_attribute(
            request, self.provider, self.cache, session.audit, self.tokenizer,
            backoff=self.backoff,
        )
        session.charge_check()
        return result.value

    def _evaluate_tree(
        self,
        ctx: TableContext,
        doc_id: str,
        tree: ExpressionNode,
        session: QuerySession,
        extracted: set[tuple[str, str]],
        dynamic: bool,
        prob_of,
        base_cost_of,
    ) -> bool:
        """Evaluate with short-circuiting; dynamic mode re-ranks pending siblings
        whenever an extraction zeroes another pending filter's cost."""

        def live_cost(pred: Predicate) -> float:
            if pred.attribute.key in extracted:
                return 0.0
            return base_cost_of(pred)

        def eval_node(node: ExpressionNode) -> bool:
            if node.kind is NodeKind.LEAF:
                value = self._doc_attr_value(ctx, doc_id, node.predicate.attribute, session)
                extracted.add(node.predicate.attribute.key)
                return node.predicate.evaluate(value)
            pending = list(node.children)
            while pending:
                if dynamic:
                    best_i, best_key = 0, None
                    for i, child in enumerate(pending):
                        cost, prob = tree_expected_cost(child, prob_of, live_cost)
                        key = (-priority_score(prob, cost, node.kind), cost, i)
                        if best_key is None or key < best_key:
                            best_key, best_i = key, i
                    child = pending.pop(best_i)
                else:
                    child = pending.pop(0)
                outcome = eval_node(child)
                if node.kind is NodeKind.AND and not outcome:
                    return False
                if node.kind is NodeKind.OR and outcome:
                    return True
            return node.kind is NodeKind.AND

        return eval_node(tree)

    def _evaluate_document(
        self,
        ctx: TableContext,
        doc_id: str,
        strategy: OrderingStrategy,
        session: QuerySession,
        select_attrs: list[AttributeSpec],
        global_tree: ExpressionNode | None,
        eager: bool,
        extra_attrs: list[AttributeSpec] = (),
    ) -> tuple[bool, dict[str, object]]:
        """Evaluate one document; on pass, extract the SELECT tail (and any
        extra attributes the join pipeline asks for)."""
        prob_of = lambda pred: ctx.filter_stats[id(pred)].selectivity
        prefix_attrs = _or_prefix(ctx.tree, select_attrs)
        prefix_keys = {a.key for a in prefix_attrs}

        def base_cost_of(pred: Predicate) -> float:
            if pred.attribute.key in prefix_keys:
                return 0.0  # extracted up front in every outcome
            return ctx.planning_cost(doc_id, pred.attribute)

        extracted: set[tuple[str, str]] = set()

        if eager:
            for attr in ctx.attrs:
                self._doc_attr_value(ctx, doc_id, attr, session)
                extracted.add(attr.key)

        passed = True
        if ctx.tree is not None:
            if eager:
                passed = self._evaluate_static_truth(ctx, doc_id, ctx.tree, session)
            else:
                for attr in prefix_attrs:
                    self._doc_attr_value(ctx, doc_id, attr, session)
                    extracted.add(attr.key)
                tree = global_tree
                if tree is None:
                    tree = strategy.order(ctx.tree, prob_of, base_cost_of, doc_id)
                passed = self._evaluate_tree(
                    ctx, doc_id, tree, session, extracted,
                    dynamic=strategy.name == "quest",
                    prob_of=prob_of, base_cost_of=base_cost_of,
                )

        values: dict[str, object] = {}
        if passed:
            for attr in list(select_attrs) + list(extra_attrs):
                values[attr.name] = self._doc_attr_value(ctx, doc_id, attr, session)
        return passed, values

    def _evaluate_static_truth(self, ctx, doc_id, tree, session) -> bool:
        """Truth evaluation once everything is extracted (eager baseline)."""
        if tree.kind is NodeKind.LEAF:
            value = self._doc_attr_value(ctx, doc_id, tree.predicate.attribute, session)
            return tree.predicate.evaluate(value)
        outcomes = [self._evaluate_static_truth(ctx, doc_id, c, session) for c in tree.children]
        return all(outcomes) if tree.kind is NodeKind.AND else any(outcomes)

    # -- single-table execution ---------------------------------------------

    def _execute_single(
        self,
        spec: QuerySpec,
        strategy: OrderingStrategy,
        seed: int,
        session: QuerySession,
        eager: bool,
    ) -> ResultSet:
        table = spec.tables[0]
        needed = _dedup_attrs(spec.select_attrs + spec.where_attrs())
        ctx = self._prepare_table(table, spec.where, needed, seed, session)
        select_attrs = [a for a in spec.select_attrs if a.table == table.name]

        global_tree = None
        if ctx.tree is not None and not strategy.per_document and not eager:
            prob_of = lambda pred: ctx.filter_stats[id(pred)].selectivity
            prefix_keys = {a.key for a in _or_prefix(ctx.tree, select_attrs)}

            def avg_cost_of(pred: Predicate) -> float:
                if pred.attribute.key in prefix_keys:
                    return 0.0
                return ctx.avg_costs.get(pred.attribute.key, 0.0)

            global_tree = strategy.order(ctx.tree, prob_of, avg_cost_of)

        result = ResultSet()

        def run_one(doc_id: str):
            before = session.audit.total_tokens()
            try:
                passed, values = self._evaluate_document(
                    ctx, doc_id, strategy, session, select_attrs, global_tree, eager
                )
            except ProviderError as exc:
                session.warnings.append(f"{doc_id}: skipped after provider failure: {exc}")
                return doc_id, False, {}, 0
            return doc_id, passed, values, session.audit.total_tokens() - before

        outcomes = self._map_documents(run_one, ctx.doc_ids)
        for doc_id, passed, values, cost in outcomes:
            result.per_doc_cost[doc_id] = cost
            if passed:
                result.rows.append(
                    ResultRow(
                        cells={f"{table.name}.{a.name}": values.get(a.name) for a in select_attrs},
                        docs=((table.name, doc_id),),
                    )
                )
        return result

    def _map_documents(self, fn, doc_ids):
        if self.workers == 1:
            return [fn(d) for d in doc_ids]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, doc_ids))

    # -- join execution -------------------------------------------------------

    def _join_side(
        self, ctx: TableContext, join_attr: AttributeSpec
    ) -> JoinSide:
        """Collapse a table context into the planner's per-side cost inputs."""
        prob_of = lambda pred: ctx.filter_stats[id(pred)].selectivity
        units: list[ExpressionNode] = []
        if ctx.tree is not None:
            units = list(ctx.tree.children) if ctx.tree.kind is NodeKind.AND else [ctx.tree]
        unit_probs = [node_probability(u, prob_of) for u in units]
        unit_costs = {}
        join_cost = {}
        for doc_id in ctx.doc_ids:
            cost_of = lambda pred, d=doc_id: ctx.planning_cost(d, pred.attribute)
            unit_costs[doc_id] = [order_expression(u, prob_of, cost_of)[1] for u in units]
            join_cost[doc_id] = ctx.planning_cost(doc_id, join_attr)
        return JoinSide(
            table=ctx.table.name,
            doc_ids=list(ctx.doc_ids),
            unit_probs=unit_probs,
            unit_costs=unit_costs,
            join_attr_cost=join_cost,
        )

    def _execute_side_full(
        self,
        ctx: TableContext,
        join_attr: AttributeSpec,
        strategy: OrderingStrategy,
        session: QuerySession,
        select_attrs: list[AttributeSpec],
        result: ResultSet,
        eager: bool,
    ) -> list[tuple[str, object]]:
        """Run a side's filters then extract its join attribute from survivors.

        SELECT attributes stay lazy: they are extracted after the join for
        rows that survive matching.
        """
        survivors: list[tuple[str, object]] = []

        def run_one(doc_id: str):
            before = session.audit.total_tokens()
            try:
                passed, _ = self._evaluate_document(
                    ctx, doc_id, strategy, session, [], None, eager
                )
                value = None
                if passed:
                    value = self._doc_attr_value(ctx, doc_id, join_attr, session)
            except ProviderError as exc:
                session.warnings.append(f"{doc_id}: skipped after provider failure: {exc}")
                return doc_id, False, None, 0
            return doc_id, passed, value, session.audit.total_tokens() - before

        for doc_id, passed, value, cost in self._map_documents(run_one, ctx.doc_ids):
            result.per_doc_cost[doc_id] = result.per_doc_cost.get(doc_id, 0) + cost
            if passed and value is not None:
                survivors.append((doc_id, value))
        return survivors

    def _execute_join_pipeline(
        self,
        spec: QuerySpec,
        strategy: OrderingStrategy,
        seed: int,
        session: QuerySession,
        join_mode: str,
        eager: bool,
    ) -> ResultSet:
        graph = spec.join_graph
        if not graph.is_connected():
            raise PlannerError("join graph is not connected")

        per_table_tree = split_by_table(spec.where, [t.name for t in spec.tables])
        contexts: dict[str, TableContext] = {}
        join_attrs_of: dict[str, list[AttributeSpec]] = {t.name: [] for t in spec.tables}
        for edge in spec.joins:
            join_attrs_of[edge.left.table].append(edge.left)
            join_attrs_of[edge.right.table].append(edge.right)

        for table in spec.tables:
            tree = per_table_tree.get(table.name)
            needed = _dedup_attrs(
                [a for a in spec.select_attrs if a.table == table.name]
                + ([p.attribute for p in leaves(tree)] if tree is not None else [])
                + join_attrs_of[table.name]
            )
            contexts[table.name] = self._prepare_table(table, tree, needed, seed, session)

        result = ResultSet()
        if join_mode == "pushdown":
            return self._execute_pushdown(spec, contexts, strategy, session, result, eager)

        # adaptive left-deep: pick the cheapest first edge, then grow
        edge_inputs = []
        for edge in spec.joins:
            side_l = self._join_side(contexts[edge.left.table], edge.left)
            side_r = self._join_side(contexts[edge.right.table], edge.right)
            edge_inputs.append((edge, side_l, side_r))
        first_edge, choice = choose_first_edge(edge_inputs)

        drive_attr, target_attr = (
            (first_edge.left, first_edge.right)
            if choice.driving_table == first_edge.left.table
            else (first_edge.right, first_edge.left)
        )
        drive_ctx = contexts[choice.driving_table]
        target_ctx = contexts[choice.target_table]

        survivors = self._execute_side_full(
            drive_ctx, drive_attr, strategy, session, spec.select_attrs, result, eager
        )
        rows = [
            {"_tables": {choice.driving_table: doc_id}, "_join_values": {drive_attr.key: value}}
            for doc_id, value in survivors
        ]
        consumed = {choice.driving_table}
        remaining_edges = [e for e in spec.joins if e is not first_edge]

        rows = self._join_target(
            rows, target_ctx, drive_attr, target_attr, strategy, session, result, eager
        )
        consumed.add(choice.target_table)

        while remaining_edges:
            frontier = [
                e
                for e in remaining_edges
                if (e.left.table in consumed) != (e.right.table in consumed)
            ]
            if not frontier:
                raise PlannerError("join graph disconnected during execution")
            candidates = []
            for edge in frontier:
                inner, outer = (
                    (edge.left, edge.right)
                    if edge.left.table in consumed
                    else (edge.right, edge.left)
                )
                values = self._row_values(rows, contexts, inner, strategy, session, result, eager)
                ctx = contexts[outer.table]
                side = self._join_side(ctx, outer)
                stats = estimate_in_selectivity(values, outer, ctx.sample_records)
                candidates.append(((edge, inner, outer, values), side, stats.selectivity))
            (edge, inner, outer, values), _ = choose_next_table(candidates)
            rows = self._join_target(
                rows, contexts[outer.table], inner, outer, strategy, session, result, eager,
                known_values=values,
            )
            consumed.add(outer.table)
            remaining_edges = [e for e in remaining_edges if e is not edge]

        return self._project_rows(spec, contexts, rows, strategy, session, result, eager)

    def _row_values(self, rows, contexts, attr, strategy, session, result, eager) -> list[object]:
        """Exact value set of attr over the running result (extracting if needed)."""
        values = []
        for row in rows:
            if attr.key in row["_join_values"]:
                values.append(row["_join_values"][attr.key])
                continue
            doc_id = row["_tables"][attr.table]
            value = self._doc_attr_value(contexts[attr.table], doc_id, attr, session)
            row["_join_values"][attr.key] = value
            values.append(value)
        return [v for v in dict.fromkeys(values) if v is not None]

    def _join_target(
        self,
        rows,
        target_ctx: TableContext,
        drive_attr: AttributeSpec,
        target_attr: AttributeSpec,
        strategy: OrderingStrategy,
        session: QuerySession,
        result: ResultSet,
        eager: bool,
        known_values: list[object] | None = None,
    ):
        """Fold the join into an IN filter on the target side and execute it."""
        values = (
            known_values
            if known_values is not None
            else [v for v in dict.fromkeys(r["_join_values"][drive_attr.key] for r in rows) if v is not None]
        )
        try:
            in_pred = transform_join_to_in(values, target_attr)
        except EmptyJoinInput:
            session.warnings.append("driving side produced no join values; empty result")
            return []

        in_stats = estimate_in_selectivity(values, target_attr, target_ctx.sample_records)
        in_stats.predicate = in_pred
        target_ctx.filter_stats[id(in_pred)] = in_stats

        in_leaf = ExpressionNode.leaf(in_pred)
        combined = (
            ExpressionNode.combine(NodeKind.AND, [target_ctx.tree, in_leaf])
            if target_ctx.tree is not None
            else in_leaf
        )
        exec_ctx = replace(target_ctx, tree=combined)

        survivors = self._execute_side_full(
            exec_ctx, target_attr, strategy, session, [], result, eager
        )
        by_value: dict[object, list[str]] = {}
        for doc_id, value in survivors:
            by_value.setdefault(canon(value), []).append(doc_id)

        joined = []
        for row in rows:
            left_value = row["_join_values"].get(drive_attr.key)
            if left_value is None:
                continue
            for doc_id in by_value.get(canon(left_value), []):
                new_row = {
                    "_tables": {**row["_tables"], target_ctx.table.name: doc_id},
                    "_join_values": {
                        **row["_join_values"],
                        target_attr.key: left_value,
                    },
                }
                joined.append(new_row)
        return joined

    def _execute_pushdown(
        self, spec, contexts, strategy, session, result, eager
    ) -> ResultSet:
        """Classic plan: filter every table fully, extract join attributes from
        survivors, then hash-join. The baseline the transformed plans beat."""
        survivors: dict[str, list[tuple[str, dict]]] = {}
        for table in spec.tables:
            ctx = contexts[table.name]
            attrs = [a for a in ctx.attrs if any(
                e.left.key == a.key or e.right.key == a.key for e in spec.joins
            )]
            rows = []

            def run_one(doc_id, ctx=ctx, attrs=attrs):
                before = session.audit.total_tokens()
                try:
                    passed, _ = self._evaluate_document(
                        ctx, doc_id, strategy, session, [], None, eager
                    )
                    values = {}
                    if passed:
                        for attr in attrs:
                            values[attr.key] = self._doc_attr_value(ctx, doc_id, attr, session)
                except ProviderError as exc:
                    session.warnings.append(f"{doc_id}: skipped: {exc}")
                    return doc_id, False, {}, 0
                return doc_id, passed, values, session.audit.total_tokens() - before

            for doc_id, passed, values, cost in self._map_documents(run_one, ctx.doc_ids):
                result.per_doc_cost[doc_id] = result.per_doc_cost.get(doc_id, 0) + cost
                if passed:
                    rows.append((doc_id, values))
            survivors[table.name] = rows

        rows = [
            {"_tables": {spec.tables[0].name: doc_id}, "_join_values": dict(values)}
            for doc_id, values in survivors[spec.tables[0].name]
        ]
        consumed = {spec.tables[0].name}
        remaining = [e for e in spec.joins]
        while remaining:
            edge = next(
                (e for e in remaining if (e.left.table in consumed) != (e.right.table in consumed)),
                None,
            )
            if edge is None:
                raise PlannerError("join graph disconnected during execution")
            inner, outer = (
                (edge.left, edge.right) if edge.left.table in consumed else (edge.right, edge.left)
            )
            joined = []
            for row in rows:
                left_value = row["_join_values"].get(inner.key)
                if left_value is None:
                    continue
                for doc_id, values in survivors[outer.table]:
                    right_value = values.get(outer.key)
                    if right_value is None:
                        continue
                    if canon(left_value) == canon(right_value):
                        joined.append(
                            {
                                "_tables": {**row["_tables"], outer.table: doc_id},
                                "_join_values": {**row["_join_values"], **values},
                            }
                        )
            rows = joined
            consumed.add(outer.table)
            remaining.remove(edge)
        return self._project_rows(spec, contexts, rows, strategy, session, result, eager)

    def _project_rows(
        self, spec, contexts, rows, strategy, session, result, eager
    ) -> ResultSet:
        for row in rows:
            cells = {}
            for attr in spec.select_attrs:
                doc_id = row["_tables"][attr.table]
                cells[f"{attr.table}.{attr.name}"] = self._doc_attr_value(
                    contexts[attr.table], doc_id, attr, session
                )
            result.rows.append(
                ResultRow(
                    cells=cells,
                    docs=tuple(sorted(row["_tables"].items())),
                )
            )
        return result

    # -- explain ----------------------------------------------------------------

    def _explain(self, spec: QuerySpec, assumed_in_selectivity: float) -> str:
        lines = [f"query: {spec.to_sql()}", "stats: provider-free priors (p=0.5 per filter)"]
        prob_of = lambda pred: 0.5
        per_table_tree = (
            split_by_table(spec.where, [t.name for t in spec.tables])
            if len(spec.tables) > 1
            else {spec.tables[0].name: spec.where}
        )
        q_attrs = _dedup_attrs(
            spec.select_attrs
            + spec.where_attrs()
            + [e.left for e in spec.joins]
            + [e.right for e in spec.joins]
        )
        q_vec = query_embedding(q_attrs, self.embedder)
        # no sample to calibrate against: retrieve wide (recall-first), like
        # the pre-calibration document threshold
        thresholds = ThresholdState(tau=self.initial_tau)
        for attr in q_attrs:
            thresholds.gamma[attr.key] = self.initial_tau
        doc_ids_of: dict[str, list[str]] = {}
        vectors_of: dict[str, dict[str, DocCostVector]] = {}
        for table in spec.tables:
            tree = per_table_tree.get(table.name)
            table_attrs = [a for a in q_attrs if a.table == table.name]
            table_docs = set(self.catalog.table_doc_ids(table.name))
            doc_ids = [
                d for d in retrieve_documents(self.bundle.doc_index, q_vec, self.initial_tau)
                if d in table_docs
            ]
            doc_ids_of[table.name] = doc_ids
            evidence = {
                a.key: EvidenceSet(
                    attribute=a,
                    centers=np.stack([self.embedder.embed(a.query_text)]),
                    source="query",
                )
                for a in table_attrs
            }
            vectors_of[table.name] = {}
            for d in doc_ids:
                raw = measure_costs(d, table_attrs, self.bundle, evidence, thresholds, cache=None)
                padded = DocCostVector(d)
                for attr in table_attrs:
                    c = raw.cost(attr)
                    padded.per_attribute_cost[attr.key] = (
                        c + self._call_overhead(attr) if c > 0 else 0
                    )
                vectors_of[table.name][d] = padded
            lines.append(f"table {table.name}: {len(doc_ids)} candidate documents")
            if tree is None:
                continue
            for doc_id in doc_ids:
                vec = vectors_of[table.name][doc_id]
                cost_of = lambda pred, vec=vec: float(vec.cost(pred.attribute))
                root, cost, _ = order_expression(tree, prob_of, cost_of)
                units = root.children if root.kind is not NodeKind.LEAF else [root]
                rendered = []
                for unit in units:
                    ucost, uprob = tree_expected_cost(unit, prob_of, cost_of)
                    pr = priority_score(uprob, ucost, root.kind if root.kind is not NodeKind.LEAF else NodeKind.AND)
                    rendered.append(f"{unit.to_sql()} [priority={pr:.4g}]")
                lines.append(
                    f"  {doc_id}: expected_cost={cost:.1f} order: " + " -> ".join(rendered)
                )

        for edge in spec.joins:
            side_l = self._explain_side(edge.left, per_table_tree, doc_ids_of, vectors_of, prob_of)
            side_r = self._explain_side(edge.right, per_table_tree, doc_ids_of, vectors_of, prob_of)
            choice = plan_single_join(side_l, side_r)
            drive, target = (
                (side_l, side_r) if choice.driving_table == side_l.table else (side_r, side_l)
            )
            cost1 = plan_cost_plan1(side_l, side_r)
            cost2, d2, t2 = plan_cost_transform(side_l, side_r, assumed_in_selectivity)
            cost3, d3, t3 = plan_cost_transform(side_r, side_l, assumed_in_selectivity)
            mark2 = " <== chosen" if choice.kind == "PLAN2" else ""
            mark3 = " <== chosen" if choice.kind == "PLAN3" else ""
            lines.append(
                f"join {edge.left.table}.{edge.left.name} = {edge.right.table}.{edge.right.name} "
                f"(assumed IN selectivity {assumed_in_selectivity}):"
            )
            lines.append(f"  plan1 pushdown-then-join: {cost1:.1f}")
            lines.append(f"  plan2 drive {side_l.table}, IN on {side_r.table}: "
                         f"{cost2:.1f} ({d2:.1f} + {t2:.1f}){mark2}")
            lines.append(f"  plan3 drive {side_r.table}, IN on {side_l.table}: "
                         f"{cost3:.1f} ({d3:.1f} + {t3:.1f}){mark3}")
        return "\n".join(lines)

    def _explain_side(self, join_attr, per_table_tree, doc_ids_of, vectors_of, prob_of) -> JoinSide:
        table = join_attr.table
        tree = per_table_tree.get(table)
        units: list[ExpressionNode] = []
        if tree is not None:
            units = list(tree.children) if tree.kind is NodeKind.AND else [tree]
        unit_probs = [node_probability(u, prob_of) for u in units]
        unit_costs = {}
        join_cost = {}
        for doc_id in doc_ids_of[table]:
            vec = vectors_of[table][doc_id]
            cost_of = lambda pred, vec=vec: float(vec.cost(pred.attribute))
            unit_costs[doc_id] = [order_expression(u, prob_of, cost_of)[1] for u in units]
            join_cost[doc_id] = float(vec.cost(join_attr))
        return JoinSide(
            table=table,
            doc_ids=list(doc_ids_of[table]),
            unit_probs=unit_probs,
            unit_costs=unit_costs,
            join_attr_cost=join_cost,
        )


def score_results(
    result_rows: list[tuple],
    truth_rows: list[tuple],
) -> tuple[float, float, float]:
    """Precision/recall/F1 over canonicalized tuples.

    A returned tuple counts as correct only if every cell matches the truth.
    Empty result sets score precision 1 by convention; F1 is 0 when P+R is.
    """
    from collections import Counter

    got = Counter(result_rows)
    want = Counter(truth_rows)
    overlap = sum((got & want).values())
    precision = overlap / sum(got.values()) if got else 1.0
    recall = overlap / sum(want.values()) if want else 1.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return precision, recall, f1


def _dedup_attrs(attrs: list[AttributeSpec]) -> list[AttributeSpec]:
    seen: dict[tuple[str, str], AttributeSpec] = {}
    for attr in attrs:
        seen.setdefault(attr.key, attr)
    return list(seen.values())


def _or_prefix(
    tree: ExpressionNode | None, select_attrs: list[AttributeSpec]
) -> list[AttributeSpec]:
    """SELECT attributes that a pure-disjunction WHERE also filters on.

    They get extracted in every outcome (any filter passing needs them for
    output; all filters failing means their own filters ran), so pulling
    them to the front is free and zeroes their filters' residual cost.
    """
    if tree is None or tree.kind is not NodeKind.OR:
        return []
    where_keys = {p.attribute.key for p in leaves(tree)}
    return [a for a in select_attrs if a.key in where_keys]
