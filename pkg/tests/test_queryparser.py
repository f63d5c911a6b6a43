import random

import pytest

from docql.catalog import AttributeSpec, Catalog, TableSpec, load_corpus
from docql.errors import ParseError, QueryTypeError, UnknownSymbol
from docql.queryparser import (
    NodeKind,
    Op,
    Predicate,
    flatten,
    leaves,
    parse_query,
    validate_tree,
)


@pytest.fixture
def catalog():
    corpus = load_corpus(
        [{"id": "p1", "text": "player one."}, {"id": "t1", "text": "team one."}]
    )
    cat = Catalog(corpus)
    cat.register_table(
        TableSpec(
            "players",
            [
                AttributeSpec("name", "player name", "string", "players"),
                AttributeSpec("age", "age in years", "number", "players"),
                AttributeSpec("all_stars", "all-star picks", "number", "players"),
                AttributeSpec("avg_points", "points per game", "number", "players"),
                AttributeSpec("avg_assists", "assists per game", "number", "players"),
                AttributeSpec("seasons", "seasons played", "number", "players"),
                AttributeSpec("team", "team name", "categorical", "players"),
            ],
            "p*",
        )
    )
    cat.register_table(
        TableSpec(
            "teams",
            [
                AttributeSpec("team_name", "name", "categorical", "teams"),
                AttributeSpec("championships", "titles", "number", "teams"),
            ],
            "t*",
        )
    )
    return cat


def test_conjunctive_query_two_leaves(catalog):
    spec = parse_query(
        "SELECT name FROM players WHERE age > 35 AND all_stars > 12", catalog
    )
    assert spec.where.kind is NodeKind.AND
    assert len(spec.where.children) == 2
    assert all(c.kind is NodeKind.LEAF for c in spec.where.children)
    age = spec.where.children[0].predicate
    assert age.op is Op.GE and age.strict and age.literals == (35,)


def test_mixed_tree_shape(catalog):
    spec = parse_query(
        "SELECT name FROM players WHERE (age > 35 OR all_stars > 12) AND "
        "(avg_points > 20 OR avg_assists > 5 AND seasons > 10)",
        catalog,
    )
    root = spec.where
    assert root.kind is NodeKind.AND and len(root.children) == 2
    left, right = root.children
    assert left.kind is NodeKind.OR and len(left.children) == 2
    assert right.kind is NodeKind.OR and len(right.children) == 2
    # AND binds tighter: second OR child is (avg_assists AND seasons)
    assert right.children[1].kind is NodeKind.AND
    assert len(leaves(root)) == 5


def test_projection_only(catalog):
    spec = parse_query("SELECT name FROM players", catalog)
    assert spec.where is None
    assert [a.name for a in spec.select_attrs] == ["name"]


def test_precedence_or_and(catalog):
    spec = parse_query(
        "SELECT name FROM players WHERE age > 1 OR all_stars > 2 AND seasons > 3",
        catalog,
    )
    assert spec.where.kind is NodeKind.OR
    assert spec.where.children[0].kind is NodeKind.LEAF
    assert spec.where.children[1].kind is NodeKind.AND


def test_same_precedence_flattened(catalog):
    spec = parse_query(
        "SELECT name FROM players WHERE age > 1 AND all_stars > 2 AND seasons > 3",
        catalog,
    )
    assert spec.where.kind is NodeKind.AND
    assert len(spec.where.children) == 3
    validate_tree(spec.where)


def test_between_and_in(catalog):
    spec = parse_query(
        "SELECT name FROM players WHERE age BETWEEN 25 AND 30 AND team IN ('Lakers', 'Celtics')",
        catalog,
    )
    between, inpred = [c.predicate for c in spec.where.children]
    assert between.op is Op.RANGE and between.literals == (25, 30)
    assert inpred.op is Op.IN and set(inpred.literals) == {"Lakers", "Celtics"}


def test_join_parsing(catalog):
    spec = parse_query(
        "SELECT players.name, teams.team_name FROM players "
        "JOIN teams ON players.team = teams.team_name WHERE championships > 6",
        catalog,
    )
    assert len(spec.joins) == 1
    assert spec.joins[0].left.key == ("players", "team")
    assert spec.join_graph.is_connected()


def test_errors(catalog):
    with pytest.raises(UnknownSymbol):
        parse_query("SELECT nope FROM players", catalog)
    with pytest.raises(UnknownSymbol):
        parse_query("SELECT name FROM ghosts", catalog)
    with pytest.raises(QueryTypeError):
        parse_query("SELECT name FROM players WHERE age > 'old'", catalog)
    with pytest.raises(QueryTypeError):
        parse_query("SELECT name FROM players WHERE team > 'Lakers'", catalog)
    with pytest.raises(ParseError):
        parse_query("SELECT name FROM players WHERE NOT age > 3", catalog)
    with pytest.raises(ParseError):
        parse_query("SELECT name FROM players WHERE age >", catalog)
    with pytest.raises(QueryTypeError):
        parse_query("SELECT name FROM players WHERE age BETWEEN 30 AND 20", catalog)


def test_parse_error_carries_position(catalog):
    try:
        parse_query("SELECT name FROM players WHERE age !! 3", catalog)
    except ParseError as exc:
        assert exc.position is not None
    else:
        raise AssertionError("expected ParseError")


def test_null_comparisons_false():
    attr = AttributeSpec("age", "years", "number", "players")
    for pred in (
        Predicate(attr, Op.EQ, (5,)),
        Predicate(attr, Op.LE, (5,)),
        Predicate(attr, Op.GE, (5,), strict=True),
        Predicate(attr, Op.RANGE, (1, 9)),
        Predicate(attr, Op.IN, (5, 6)),
    ):
        assert pred.evaluate(None) is False


def test_categorical_equality_casefolds():
    attr = AttributeSpec("team", "team", "categorical", "players")
    assert Predicate(attr, Op.EQ, ("Lakers",)).evaluate("  lakers ")
    assert Predicate(attr, Op.IN, ("Lakers", "Celtics")).evaluate("LAKERS")


def test_round_trip_fixed_queries(catalog):
    queries = [
        "SELECT name FROM players WHERE age > 35 AND all_stars > 12",
        "SELECT name, age FROM players WHERE (age > 35 OR all_stars > 12) AND seasons >= 10",
        "SELECT name FROM players WHERE age BETWEEN 25 AND 30 OR team = 'Lakers'",
        "SELECT players.name FROM players JOIN teams ON players.team = teams.team_name "
        "WHERE age > 30 AND championships > 2",
        "SELECT name FROM players",
    ]
    for q in queries:
        spec = parse_query(q, catalog)
        again = parse_query(spec.to_sql(), catalog)
        assert again.to_sql() == spec.to_sql()
        if spec.where is not None:
            assert _shape(again.where) == _shape(spec.where)


def _shape(node):
    if node.kind is NodeKind.LEAF:
        p = node.predicate
        return ("leaf", p.attribute.key, p.op.name, p.strict, p.literals)
    return (node.kind.name, tuple(_shape(c) for c in node.children))


def test_round_trip_random_trees(catalog):
    rng = random.Random(11)
    attrs = ["age", "all_stars", "avg_points", "avg_assists", "seasons"]
    for _ in range(100):
        n = rng.randint(1, 5)
        parts = [f"{rng.choice(attrs)} > {rng.randrange(50)}" for _ in range(n)]
        q = "SELECT name FROM players WHERE " + f" {rng.choice(['AND', 'OR'])} ".join(parts)
        spec = parse_query(q, catalog)
        again = parse_query(spec.to_sql(), catalog)
        assert _shape(again.where) == _shape(spec.where)


def test_flatten_idempotent(catalog):
    spec = parse_query(
        "SELECT name FROM players WHERE ((age > 1 AND all_stars > 2) AND seasons > 3) "
        "OR (avg_points > 4 OR avg_assists > 5)",
        catalog,
    )
    once = flatten(spec.where)
    twice = flatten(once)
    assert _shape(once) == _shape(twice)
    validate_tree(once)


def test_leaves_order_matches_construction():
    rng = random.Random(3)
    from oracles import random_tree

    for _ in range(50):
        tree, _, _ = random_tree(rng, max_leaves=7)
        found = leaves(tree)
        assert len(found) >= 1
        # structural induction: leaves of each child appear as contiguous runs
        if tree.kind is not NodeKind.LEAF:
            reassembled = []
            for child in tree.children:
                reassembled.extend(leaves(child))
            assert reassembled == found
