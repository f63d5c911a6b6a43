"""Instance-optimized filter ordering and join planning.

Filter ordering sorts by priority score -- (1-p)/c in conjunction context,
p/c in disjunction context -- which provably minimizes the expected token
cost for flat conjunctions/disjunctions. Mixed AND/OR trees are handled by
recursing bottom-up: each optimized sub-expression becomes a unit with an
aggregate (cost, probability) and units are sorted in their parent's
context, so the flattened order executes every sub-expression as a
contiguous block.

Join planning scores "filter side i fully, then turn the join into an IN
filter on the other side" for both driving choices using the first two cost
terms (side filter cost plus expected join-attribute extraction), picks the
cheaper driver, and synthesizes an IN predicate from the driving side's
extracted values. Classic filter-pushdown-then-join is never selected by
the planner (it cannot beat the transformed plans in expectation); its cost
model exists for EXPLAIN and the executor keeps it runnable as a baseline.

Zero-cost units (attribute already extracted) run first unconditionally:
their priority is undefined and a free filter can only help.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from itertools import permutations, product
from typing import Callable, Iterator, Sequence

from .catalog import AttributeSpec
from .errors import EmptyJoinInput, PlannerError
from .queryparser import ExpressionNode, NodeKind, Op, Predicate

ProbFn = Callable[[Predicate], float]
CostFn = Callable[[Predicate], float]


def priority_score(prob_true: float, cost: float, kind: NodeKind) -> float:
    """(1-p)/c under AND, p/c under OR; infinite when the unit is free."""
    if cost <= 0:
        return math.inf
    if kind is NodeKind.AND:
        return (1.0 - prob_true) / cost
    return prob_true / cost


def expected_cost_conjunction(
    costs: Sequence[float], probs: Sequence[float], select_costs: Sequence[float] = ()
) -> float:
    """Expected cost of a conjunction evaluated in the given order.

    Each filter is reached only while every earlier filter returned True;
    the SELECT tail is paid when all filters pass.
    """
    total = 0.0
    reach = 1.0
    for cost, prob in zip(costs, probs):
        total += cost * reach
        reach *= prob
    return total + sum(select_costs) * reach


def expected_cost_disjunction(
    costs: Sequence[float], probs: Sequence[float], select_costs: Sequence[float] = ()
) -> float:
    """Expected cost of a disjunction evaluated in the given order.

    Each filter is reached only while every earlier filter returned False;
    the SELECT tail is paid when any filter passes.
    """
    total = 0.0
    reach = 1.0
    for cost, prob in zip(costs, probs):
        total += cost * reach
        reach *= 1.0 - prob
    return total + sum(select_costs) * (1.0 - reach)


def sort_units(
    units: Sequence[tuple[float, float]], kind: NodeKind
) -> list[int]:
    """Order unit indexes by descending priority.

    Ties break toward lower cost, then original position, which keeps plans
    deterministic.
    """
    keyed = []
    for i, (prob, cost) in enumerate(units):
        keyed.append((-priority_score(prob, cost, kind), cost, i))
    keyed.sort()
    return [i for _, _, i in keyed]


def ordered_units_cost(units: Sequence[tuple[float, float]], kind: NodeKind) -> float:
    """Optimal expected cost of a flat unit list under the sort rule."""
    order = sort_units(units, kind)
    costs = [units[i][1] for i in order]
    probs = [units[i][0] for i in order]
    if kind is NodeKind.AND:
        return expected_cost_conjunction(costs, probs)
    return expected_cost_disjunction(costs, probs)


@dataclass
class PrioritizedFilter:
    """One execution unit: a leaf or a fully ordered sub-expression."""

    node: ExpressionNode
    cost: float
    prob_true: float
    priority: float


@dataclass
class OrderedPlan:
    """Per-document execution order with its expected cost."""

    doc_id: str
    root: ExpressionNode | None  # reordered tree (None for filterless queries)
    steps: list[PrioritizedFilter]
    expected_cost: float  # filters plus expected SELECT tail
    expected_filter_cost: float
    prob_true: float
    select_tail: list[AttributeSpec] = field(default_factory=list)
    prefix_attrs: list[AttributeSpec] = field(default_factory=list)

    def flat_predicates(self) -> list[Predicate]:
        from .queryparser import leaves

        return leaves(self.root) if self.root is not None else []


def node_probability(node: ExpressionNode, prob_of: ProbFn) -> float:
    """Probability the node evaluates True, assuming filter independence."""
    if node.kind is NodeKind.LEAF:
        return prob_of(node.predicate)
    child_probs = [node_probability(c, prob_of) for c in node.children]
    if node.kind is NodeKind.AND:
        return math.prod(child_probs)
    return 1.0 - math.prod(1.0 - p for p in child_probs)


def tree_expected_cost(
    node: ExpressionNode, prob_of: ProbFn, cost_of: CostFn
) -> tuple[float, float]:
    """(expected cost, prob True) of evaluating the node in its current child order."""
    if node.kind is NodeKind.LEAF:
        return float(cost_of(node.predicate)), float(prob_of(node.predicate))
    total = 0.0
    reach = 1.0
    probs = []
    for child in node.children:
        child_cost, child_prob = tree_expected_cost(child, prob_of, cost_of)
        total += child_cost * reach
        reach *= child_prob if node.kind is NodeKind.AND else (1.0 - child_prob)
        probs.append(child_prob)
    prob = math.prod(probs) if node.kind is NodeKind.AND else 1.0 - math.prod(1 - p for p in probs)
    return total, prob


def order_expression(
    tree: ExpressionNode, prob_of: ProbFn, cost_of: CostFn
) -> tuple[ExpressionNode, float, float]:
    """Optimal block-contiguous order: returns (reordered tree, cost, prob True).

    Bottom-up: optimize each child, collapse it to a (cost, prob) unit, then
    sort units in this node's context.
    """
    if tree.kind is NodeKind.LEAF:
        return tree, float(cost_of(tree.predicate)), float(prob_of(tree.predicate))
    optimized = [order_expression(c, prob_of, cost_of) for c in tree.children]
    units = [(prob, cost) for _, cost, prob in optimized]
    order = sort_units(units, tree.kind)
    children = [optimized[i][0] for i in order]
    costs = [optimized[i][1] for i in order]
    probs = [optimized[i][2] for i in order]
    if tree.kind is NodeKind.AND:
        cost = expected_cost_conjunction(costs, probs)
        prob = math.prod(probs)
    else:
        cost = expected_cost_disjunction(costs, probs)
        prob = 1.0 - math.prod(1.0 - p for p in probs)
    return ExpressionNode(tree.kind, children=children), cost, prob


def build_plan(
    doc_id: str,
    tree: ExpressionNode | None,
    prob_of: ProbFn,
    cost_of: CostFn,
    select_attrs: Sequence[AttributeSpec] = (),
    select_cost_of: Callable[[AttributeSpec], float] | None = None,
) -> OrderedPlan:
    """Assemble the per-document plan, including SELECT-tail placement.

    The tail covers SELECT attributes that the WHERE clause will not have
    extracted by the time it resolves. For a pure disjunction whose filters
    overlap the SELECT list, the overlapping attributes are forced to the
    front (they get extracted in every outcome anyway, and zeroing their
    filters' costs can only improve the order).
    """
    select_cost_of = select_cost_of or (lambda attr: 0.0)
    where_attr_keys = set()
    if tree is not None:
        from .queryparser import leaves

        where_attr_keys = {p.attribute.key for p in leaves(tree)}

    prefix: list[AttributeSpec] = []
    effective_cost_of = cost_of
    if tree is not None and tree.kind is NodeKind.OR:
        overlap = [a for a in select_attrs if a.key in where_attr_keys]
        if overlap:
            prefix = list(overlap)
            prefix_keys = {a.key for a in prefix}

            def effective_cost_of(pred: Predicate, _inner=cost_of, _keys=prefix_keys) -> float:
                return 0.0 if pred.attribute.key in _keys else _inner(pred)

    tail = [a for a in select_attrs if a.key not in where_attr_keys]
    tail_cost = sum(select_cost_of(a) for a in tail)

    if tree is None:
        return OrderedPlan(
            doc_id=doc_id,
            root=None,
            steps=[],
            expected_cost=tail_cost,
            expected_filter_cost=0.0,
            prob_true=1.0,
            select_tail=tail,
        )

    root, cost, prob = order_expression(tree, prob_of, effective_cost_of)
    prefix_cost = sum(select_cost_of(a) for a in prefix)
    steps = []
    top_units = root.children if root.kind is not NodeKind.LEAF else [root]
    for unit in top_units:
        unit_cost, unit_prob = tree_expected_cost(unit, prob_of, effective_cost_of)
        steps.append(
            PrioritizedFilter(
                node=unit,
                cost=unit_cost,
                prob_true=unit_prob,
                priority=priority_score(unit_prob, unit_cost, root.kind),
            )
        )
    return OrderedPlan(
        doc_id=doc_id,
        root=root,
        steps=steps,
        expected_cost=prefix_cost + cost + prob * tail_cost,
        expected_filter_cost=cost,
        prob_true=prob,
        select_tail=tail,
        prefix_attrs=prefix,
    )


def enumerate_block_orders(tree: ExpressionNode) -> Iterator[ExpressionNode]:
    """Every reordering of the tree that keeps sub-expressions contiguous."""
    if tree.kind is NodeKind.LEAF:
        yield tree
        return
    child_variants = [list(enumerate_block_orders(c)) for c in tree.children]
    for combo in product(*child_variants):
        for perm in permutations(range(len(combo))):
            yield ExpressionNode(tree.kind, children=[combo[i] for i in perm])


# --- ordering strategies -----------------------------------------------------


class OrderingStrategy:
    """Shared interface for the ordering strategy zoo.

    per_document strategies get each document's own cost vector; global
    strategies are planned once per query from sample-average costs and
    reused for every document.
    """

    name = "base"
    per_document = True

    def order(
        self, tree: ExpressionNode, prob_of: ProbFn, cost_of: CostFn, doc_id: str = ""
    ) -> ExpressionNode:
        raise NotImplementedError


class QuestStrategy(OrderingStrategy):
    """Per-document priority sort (the engine default)."""

    name = "quest"
    per_document = True

    def order(self, tree, prob_of, cost_of, doc_id=""):
        root, _, _ = order_expression(tree, prob_of, cost_of)
        return root


class ExhaustStrategy(OrderingStrategy):
    """Per-document brute force over all block-contiguous orders.

    Enumeration starts from the priority-sorted tree, so equal-cost ties
    resolve to the same order the sort produces. Guarded to small filter
    counts; factorial blowup otherwise.
    """

    name = "exhaust"
    per_document = True
    max_filters = 8

    def order(self, tree, prob_of, cost_of, doc_id=""):
        from .queryparser import leaves

        n = len(leaves(tree))
        if n > self.max_filters:
            raise PlannerError(
                f"exhaustive ordering refused: {n} filters exceeds the guard "
                f"({self.max_filters})"
            )
        start, _, _ = order_expression(tree, prob_of, cost_of)
        best = None
        best_cost = math.inf
        for variant in enumerate_block_orders(start):
            cost, _ = tree_expected_cost(variant, prob_of, cost_of)
            if cost < best_cost - 1e-12:
                best_cost = cost
                best = variant
        return best


class SelectivityStrategy(OrderingStrategy):
    """Traditional ordering on selectivity alone: all costs treated as equal."""

    name = "selectivity"
    per_document = False

    def order(self, tree, prob_of, cost_of, doc_id=""):
        root, _, _ = order_expression(tree, prob_of, lambda pred: 1.0)
        return root


class AvgCostStrategy(OrderingStrategy):
    """One order per query, planned from sample-average extraction costs."""

    name = "avg-cost"
    per_document = False

    def order(self, tree, prob_of, cost_of, doc_id=""):
        root, _, _ = order_expression(tree, prob_of, cost_of)
        return root


class RandomStrategy(OrderingStrategy):
    """Uniformly random block-contiguous order per document (seeded)."""

    name = "random"
    per_document = True

    def __init__(self, seed: int = 0):
        self.seed = seed

    def order(self, tree, prob_of, cost_of, doc_id=""):
        rng = random.Random(f"{self.seed}:{doc_id}")

        def shuffle(node: ExpressionNode) -> ExpressionNode:
            if node.kind is NodeKind.LEAF:
                return node
            children = [shuffle(c) for c in node.children]
            rng.shuffle(children)
            return ExpressionNode(node.kind, children=children)

        return shuffle(tree)


STRATEGIES = {
    "quest": QuestStrategy,
    "exhaust": ExhaustStrategy,
    "selectivity": SelectivityStrategy,
    "avg-cost": AvgCostStrategy,
    "random": RandomStrategy,
}


def make_strategy(name: str, seed: int = 0) -> OrderingStrategy:
    if name not in STRATEGIES:
        raise PlannerError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}")
    cls = STRATEGIES[name]
    return cls(seed) if cls is RandomStrategy else cls()


# --- join planning -----------------------------------------------------------


@dataclass
class JoinSide:
    """Cost inputs for one side of a join.

    unit_probs are the side's root-level filter units' pass probabilities
    (shared across documents); unit_costs holds each document's optimal
    expected cost per unit, aligned by index. join_attr_cost is the
    per-document cost of extracting the join attribute itself.
    """

    table: str
    doc_ids: list[str]
    unit_probs: list[float]
    unit_costs: dict[str, list[float]]
    join_attr_cost: dict[str, float]

    @property
    def pass_prob(self) -> float:
        return math.prod(self.unit_probs) if self.unit_probs else 1.0

    def filter_cost(self, doc_id: str) -> float:
        costs = self.unit_costs.get(doc_id, [])
        units = list(zip(self.unit_probs, costs))
        return ordered_units_cost(units, NodeKind.AND) if units else 0.0

    def sum_filter_cost(self) -> float:
        return sum(self.filter_cost(d) for d in self.doc_ids)

    def score(self) -> float:
        """First two terms of the transformed-join cost model."""
        return self.sum_filter_cost() + self.pass_prob * sum(
            self.join_attr_cost.get(d, 0.0) for d in self.doc_ids
        )

    def transformed_cost(self, in_selectivity: float) -> float:
        """Expected cost of this side with the join folded in as an IN filter."""
        total = 0.0
        for doc_id in self.doc_ids:
            units = list(zip(self.unit_probs, self.unit_costs.get(doc_id, [])))
            units.append((in_selectivity, self.join_attr_cost.get(doc_id, 0.0)))
            total += ordered_units_cost(units, NodeKind.AND)
        return total


@dataclass
class JoinPlanChoice:
    kind: str  # "PLAN2" (T1 drives, IN on T2) | "PLAN3" (T2 drives, IN on T1)
    driving_table: str
    target_table: str
    in_predicate: Predicate | None
    cost_first_two_terms: dict[str, float]


def plan_single_join(side1: JoinSide, side2: JoinSide) -> JoinPlanChoice:
    """Pick the driving side by comparing first-two-terms scores.

    Ties go to the smaller table (fewer documents to execute fully).
    """
    score1, score2 = side1.score(), side2.score()
    if score1 < score2:
        drive, target, kind = side1, side2, "PLAN2"
    elif score2 < score1:
        drive, target, kind = side2, side1, "PLAN3"
    elif len(side1.doc_ids) <= len(side2.doc_ids):
        drive, target, kind = side1, side2, "PLAN2"
    else:
        drive, target, kind = side2, side1, "PLAN3"
    return JoinPlanChoice(
        kind=kind,
        driving_table=drive.table,
        target_table=target.table,
        in_predicate=None,
        cost_first_two_terms={side1.table: score1, side2.table: score2},
    )


def plan_cost_plan1(side1: JoinSide, side2: JoinSide) -> float:
    """Filter-pushdown-then-join cost; EXPLAIN-only, never selected."""
    return side1.score() + side2.score()


def plan_cost_transform(
    driving: JoinSide, target: JoinSide, in_selectivity: float
) -> tuple[float, float, float]:
    """Full transformed-plan cost: (total, driving term, target term)."""
    driving_term = driving.score()
    target_term = target.transformed_cost(in_selectivity)
    return driving_term + target_term, driving_term, target_term


def transform_join_to_in(values: Sequence[object], target_attr: AttributeSpec) -> Predicate:
    """Synthesize the IN filter over the target's join attribute.

    Values deduplicate order-preservingly; an empty driving side means the
    join cannot produce output and the caller short-circuits.
    """
    unique = tuple(dict.fromkeys(values))
    if not unique:
        raise EmptyJoinInput("driving side produced no join-attribute values")
    return Predicate(target_attr, Op.IN, unique, synthetic=True)


def choose_first_edge(
    edges: Sequence[tuple[object, JoinSide, JoinSide]],
) -> tuple[object, JoinPlanChoice]:
    """Pick the cheapest join to execute first among (edge, side, side) triples.

    An edge's estimate is its chosen driving side's first-two-terms score,
    the only cost knowable before any extraction has happened.
    """
    if not edges:
        raise PlannerError("join query with no join edges")
    best = None
    best_cost = math.inf
    for edge, side_a, side_b in edges:
        choice = plan_single_join(side_a, side_b)
        cost = min(choice.cost_first_two_terms.values())
        if cost < best_cost:
            best_cost = cost
            best = (edge, choice)
    return best


def choose_next_table(
    candidates: Sequence[tuple[object, JoinSide, float]],
) -> tuple[object, float]:
    """Pick the adjacent table whose IN-transformed execution is cheapest.

    Each candidate is (token, target side, exact IN selectivity); the value
    set from the running result makes the selectivity exact, so the full
    transformed cost is comparable across candidates.
    """
    if not candidates:
        raise PlannerError("no joinable tables adjacent to the running result")
    best = None
    best_cost = math.inf
    for token, side, in_sel in candidates:
        cost = side.transformed_cost(in_sel)
        if cost < best_cost:
            best_cost = cost
            best = token
    return best, best_cost
