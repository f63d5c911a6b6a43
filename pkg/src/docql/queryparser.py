"""SQL-subset parser: SELECT ... FROM ... [JOIN ... ON ...] [WHERE ...].

Produces a QuerySpec holding the projected attributes, the join graph, and
the WHERE clause as an n-ary expression tree (AND binds tighter than OR;
runs of the same operator are flattened into one node). Comparison forms:
=, <=, >=, <, >, BETWEEN lo AND hi, IN (v, ...). NOT is rejected.

Strict inequalities are normalized onto the LE/GE predicate ops with an
open-bound flag, so downstream code sees five predicate kinds total.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from .catalog import AttributeSpec, Catalog, TableSpec
from .errors import ParseError, PlannerError, QueryTypeError, UnknownSymbol


class Op(enum.Enum):
    EQ = "="
    LE = "<="
    GE = ">="
    RANGE = "BETWEEN"
    IN = "IN"


def canon(value: object) -> object:
    """Canonical form for equality matching: trim + casefold strings."""
    if isinstance(value, str):
        return value.strip().casefold()
    return value


@dataclass
class Predicate:
    """One filter: attribute vs literal(s).

    strict=True marks an open bound (< or > instead of <= / >=).
    synthetic=True marks IN filters created by join transformation.
    """

    attribute: AttributeSpec
    op: Op
    literals: tuple
    strict: bool = False
    synthetic: bool = False

    def __post_init__(self):
        if self.op is Op.RANGE:
            lo, hi = self.literals
            if lo > hi:
                raise QueryTypeError(f"BETWEEN bounds out of order: {lo} > {hi}")
        if self.op is Op.IN and not self.literals:
            raise QueryTypeError("IN set must be non-empty")

    def evaluate(self, value: object) -> bool:
        """SQL-like semantics: any comparison with NULL is False."""
        if value is None:
            return False
        if self.op is Op.EQ:
            return canon(value) == canon(self.literals[0])
        if self.op is Op.LE:
            return value < self.literals[0] if self.strict else value <= self.literals[0]
        if self.op is Op.GE:
            return value > self.literals[0] if self.strict else value >= self.literals[0]
        if self.op is Op.RANGE:
            lo, hi = self.literals
            return lo <= value <= hi
        if self.op is Op.IN:
            return canon(value) in {canon(v) for v in self.literals}
        raise AssertionError(self.op)

    def to_sql(self) -> str:
        name = f"{self.attribute.table}.{self.attribute.name}"
        if self.op is Op.EQ:
            return f"{name} = {_literal_sql(self.literals[0])}"
        if self.op is Op.LE:
            return f"{name} {'<' if self.strict else '<='} {_literal_sql(self.literals[0])}"
        if self.op is Op.GE:
            return f"{name} {'>' if self.strict else '>='} {_literal_sql(self.literals[0])}"
        if self.op is Op.RANGE:
            lo, hi = self.literals
            return f"{name} BETWEEN {_literal_sql(lo)} AND {_literal_sql(hi)}"
        if self.op is Op.IN:
            inner = ", ".join(_literal_sql(v) for v in self.literals)
            return f"{name} IN ({inner})"
        raise AssertionError(self.op)


class NodeKind(enum.Enum):
    LEAF = "leaf"
    AND = "and"
    OR = "or"


@dataclass
class ExpressionNode:
    """Boolean expression tree node. AND/OR nodes have >= 2 children."""

    kind: NodeKind
    children: list["ExpressionNode"] = field(default_factory=list)
    predicate: Predicate | None = None

    @staticmethod
    def leaf(predicate: Predicate) -> "ExpressionNode":
        return ExpressionNode(NodeKind.LEAF, predicate=predicate)

    @staticmethod
    def combine(kind: NodeKind, children: list["ExpressionNode"]) -> "ExpressionNode":
        """Build an n-ary node, flattening same-kind children."""
        if len(children) == 1:
            return children[0]
        flat: list[ExpressionNode] = []
        for child in children:
            if child.kind == kind:
                flat.extend(child.children)
            else:
                flat.append(child)
        return ExpressionNode(kind, children=flat)

    def to_sql(self) -> str:
        if self.kind is NodeKind.LEAF:
            return self.predicate.to_sql()
        parts = []
        for child in self.children:
            text = child.to_sql()
            # OR children under AND need parens; AND binds tighter elsewhere.
            if self.kind is NodeKind.AND and child.kind is NodeKind.OR:
                text = f"({text})"
            parts.append(text)
        joiner = " AND " if self.kind is NodeKind.AND else " OR "
        return joiner.join(parts)


def leaves(node: ExpressionNode) -> list[Predicate]:
    """Left-to-right leaf enumeration."""
    if node.kind is NodeKind.LEAF:
        return [node.predicate]
    out: list[Predicate] = []
    for child in node.children:
        out.extend(leaves(child))
    return out


def flatten(node: ExpressionNode) -> ExpressionNode:
    """Merge same-kind child nodes into their parent (idempotent)."""
    if node.kind is NodeKind.LEAF:
        return node
    children = [flatten(c) for c in node.children]
    return ExpressionNode.combine(node.kind, children)


def validate_tree(node: ExpressionNode) -> None:
    if node.kind is NodeKind.LEAF:
        if node.predicate is None:
            raise ValueError("leaf without predicate")
        return
    if len(node.children) < 2:
        raise ValueError(f"{node.kind.value} node needs >= 2 children")
    for child in node.children:
        if child.kind == node.kind:
            raise ValueError("same-kind child must be flattened")
        validate_tree(child)


@dataclass(frozen=True)
class JoinEdge:
    left: AttributeSpec
    right: AttributeSpec

    def tables(self) -> tuple[str, str]:
        return (self.left.table, self.right.table)


@dataclass
class JoinGraph:
    nodes: list[str]
    edges: list[JoinEdge]

    def neighbors(self, table: str) -> list[tuple[str, JoinEdge]]:
        out = []
        for edge in self.edges:
            a, b = edge.tables()
            if a == table:
                out.append((b, edge))
            elif b == table:
                out.append((a, edge))
        return out

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        seen = {self.nodes[0]}
        frontier = [self.nodes[0]]
        while frontier:
            here = frontier.pop()
            for other, _ in self.neighbors(here):
                if other not in seen:
                    seen.add(other)
                    frontier.append(other)
        return seen == set(self.nodes)


@dataclass
class QuerySpec:
    select_attrs: list[AttributeSpec]
    tables: list[TableSpec]
    where: ExpressionNode | None
    joins: list[JoinEdge]

    @property
    def join_graph(self) -> JoinGraph:
        return JoinGraph(nodes=[t.name for t in self.tables], edges=list(self.joins))

    def where_attrs(self) -> list[AttributeSpec]:
        if self.where is None:
            return []
        seen: dict[tuple[str, str], AttributeSpec] = {}
        for pred in leaves(self.where):
            seen.setdefault(pred.attribute.key, pred.attribute)
        return list(seen.values())

    def to_sql(self) -> str:
        sel = ", ".join(f"{a.table}.{a.name}" for a in self.select_attrs)
        text = f"SELECT {sel} FROM {self.tables[0].name}"
        remaining = {t.name for t in self.tables[1:]}
        for edge in self.joins:
            a, b = edge.tables()
            target = b if b in remaining else a
            remaining.discard(target)
            text += (
                f" JOIN {target} ON {edge.left.table}.{edge.left.name}"
                f" = {edge.right.table}.{edge.right.name}"
            )
        if self.where is not None:
            text += f" WHERE {self.where.to_sql()}"
        return text


def split_by_table(where: ExpressionNode | None, tables: list[str]) -> dict[str, ExpressionNode]:
    """Split a multi-table WHERE into per-table subtrees.

    The root must be a conjunction (or single node) whose conjuncts each
    touch exactly one table; filters mixing tables inside one conjunct are
    not plannable.
    """
    per_table: dict[str, list[ExpressionNode]] = {t: [] for t in tables}
    if where is None:
        return {}
    conjuncts = where.children if where.kind is NodeKind.AND else [where]
    for conjunct in conjuncts:
        touched = {p.attribute.table for p in leaves(conjunct)}
        if len(touched) != 1:
            raise PlannerError(
                f"filter {conjunct.to_sql()!r} mixes tables {sorted(touched)}; "
                "cross-table disjunctions are not supported"
            )
        per_table[touched.pop()].append(conjunct)
    return {
        t: ExpressionNode.combine(NodeKind.AND, nodes)
        for t, nodes in per_table.items()
        if nodes
    }


# --- lexer -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(\.\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<op><=|>=|=|<|>)
  | (?P<punct>[(),])
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*(\.[A-Za-z_][A-Za-z_0-9]*)?)
    """,
    re.VERBOSE,
)

_KEYWORDS = {"SELECT", "FROM", "JOIN", "ON", "WHERE", "AND", "OR", "BETWEEN", "IN", "NOT"}


@dataclass(frozen=True)
class _Token:
    kind: str  # number | string | op | punct | ident | keyword | eof
    text: str
    pos: int


def _lex(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        pos = match.end()
        kind = match.lastgroup
        if kind == "ws":
            continue
        value = match.group()
        if kind == "ident" and value.upper() in _KEYWORDS:
            tokens.append(_Token("keyword", value.upper(), match.start()))
        else:
            tokens.append(_Token(kind, value, match.start()))
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], catalog: Catalog):
        self.tokens = tokens
        self.catalog = catalog
        self.i = 0
        self.table_names: list[str] = []

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise ParseError(f"expected {want}, found {tok.text or 'end of input'!r}", tok.pos)
        return self.advance()

    def accept(self, kind: str, text: str | None = None) -> _Token | None:
        tok = self.peek()
        if tok.kind == kind and (text is None or tok.text == text):
            return self.advance()
        return None

    # query := SELECT attrs FROM table (JOIN table ON ref = ref)* (WHERE orexpr)?
    def parse_query(self) -> QuerySpec:
        self.expect("keyword", "SELECT")
        select_names = [self.expect("ident").text]
        while self.accept("punct", ","):
            select_names.append(self.expect("ident").text)

        self.expect("keyword", "FROM")
        tables = [self._table(self.expect("ident"))]
        self.table_names = [tables[0].name]

        joins: list[JoinEdge] = []
        while self.accept("keyword", "JOIN"):
            tables.append(self._table(self.expect("ident")))
            self.table_names.append(tables[-1].name)
            self.expect("keyword", "ON")
            left = self._attribute(self.expect("ident"))
            self.expect("op", "=")
            right = self._attribute(self.expect("ident"))
            if left.table == right.table:
                raise ParseError("join edge must reference two distinct tables")
            joins.append(JoinEdge(left, right))

        where = None
        if self.accept("keyword", "WHERE"):
            where = self.parse_or()

        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError(f"unexpected trailing input {tok.text!r}", tok.pos)

        select_attrs = [self._attribute_named(n) for n in select_names]
        spec = QuerySpec(select_attrs=select_attrs, tables=tables, where=where, joins=joins)
        graph = spec.join_graph
        if len(tables) > 1 and not graph.is_connected():
            raise ParseError("join graph is not connected over the referenced tables")
        if where is not None:
            validate_tree(where)
        return spec

    def parse_or(self) -> ExpressionNode:
        children = [self.parse_and()]
        while self.accept("keyword", "OR"):
            children.append(self.parse_and())
        return ExpressionNode.combine(NodeKind.OR, children)

    def parse_and(self) -> ExpressionNode:
        children = [self.parse_primary()]
        while self.accept("keyword", "AND"):
            children.append(self.parse_primary())
        return ExpressionNode.combine(NodeKind.AND, children)

    def parse_primary(self) -> ExpressionNode:
        if self.accept("punct", "("):
            node = self.parse_or()
            self.expect("punct", ")")
            return node
        tok = self.peek()
        if tok.kind == "keyword" and tok.text == "NOT":
            raise ParseError("NOT is not supported", tok.pos)
        return self.parse_comparison()

    def parse_comparison(self) -> ExpressionNode:
        attr_tok = self.expect("ident")
        attr = self._attribute(attr_tok)
        tok = self.advance()
        if tok.kind == "op":
            literal = self._literal(attr)
            if tok.text == "=":
                pred = Predicate(attr, Op.EQ, (literal,))
            elif tok.text == "<=":
                self._numeric_only(attr, tok)
                pred = Predicate(attr, Op.LE, (literal,))
            elif tok.text == ">=":
                self._numeric_only(attr, tok)
                pred = Predicate(attr, Op.GE, (literal,))
            elif tok.text == "<":
                self._numeric_only(attr, tok)
                pred = Predicate(attr, Op.LE, (literal,), strict=True)
            elif tok.text == ">":
                self._numeric_only(attr, tok)
                pred = Predicate(attr, Op.GE, (literal,), strict=True)
            else:
                raise ParseError(f"unsupported operator {tok.text!r}", tok.pos)
            return ExpressionNode.leaf(pred)
        if tok.kind == "keyword" and tok.text == "BETWEEN":
            self._numeric_only(attr, tok)
            lo = self._literal(attr)
            self.expect("keyword", "AND")
            hi = self._literal(attr)
            if lo > hi:
                raise QueryTypeError(f"BETWEEN bounds out of order: {lo} > {hi}", tok.pos)
            return ExpressionNode.leaf(Predicate(attr, Op.RANGE, (lo, hi)))
        if tok.kind == "keyword" and tok.text == "IN":
            self.expect("punct", "(")
            values = [self._literal(attr)]
            while self.accept("punct", ","):
                values.append(self._literal(attr))
            self.expect("punct", ")")
            return ExpressionNode.leaf(Predicate(attr, Op.IN, tuple(values)))
        raise ParseError(f"expected comparison operator, found {tok.text!r}", tok.pos)

    def _numeric_only(self, attr: AttributeSpec, tok: _Token) -> None:
        if attr.dtype == "categorical":
            raise QueryTypeError(
                f"categorical attribute {attr.name!r} admits only = and IN", tok.pos
            )

    def _literal(self, attr: AttributeSpec):
        tok = self.advance()
        if tok.kind == "number":
            value = float(tok.text) if "." in tok.text else int(tok.text)
            if attr.dtype != "number":
                raise QueryTypeError(
                    f"attribute {attr.name!r} is {attr.dtype}, got numeric literal", tok.pos
                )
            return value
        if tok.kind == "string":
            if attr.dtype == "number":
                raise QueryTypeError(
                    f"attribute {attr.name!r} is numeric, got string literal", tok.pos
                )
            return tok.text[1:-1].replace("''", "'")
        raise ParseError(f"expected literal, found {tok.text!r}", tok.pos)

    def _table(self, tok: _Token) -> TableSpec:
        try:
            return self.catalog.table(tok.text)
        except Exception as exc:
            raise UnknownSymbol(str(exc), tok.pos) from exc

    def _attribute(self, tok: _Token) -> AttributeSpec:
        try:
            return self.catalog.resolve_attribute(tok.text, self.table_names)
        except Exception as exc:
            raise UnknownSymbol(str(exc), tok.pos) from exc

    def _attribute_named(self, name: str) -> AttributeSpec:
        try:
            return self.catalog.resolve_attribute(name, self.table_names)
        except Exception as exc:
            raise UnknownSymbol(str(exc)) from exc


def parse_query(text: str, catalog: Catalog) -> QuerySpec:
    """Parse query text against the catalog's registered tables."""
    return _Parser(_lex(text), catalog).parse_query()


def _literal_sql(value: object) -> str:
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    return repr(value)
