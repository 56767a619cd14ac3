"""SQL query tree for the supported PostgreSQL dialect subset, plus renderer and validator.

The grammar covers a single SELECT with optional DISTINCT, inner equality
joins, one optional derived-table FROM source, a conjunctive WHERE list,
GROUP BY, ORDER BY, and LIMIT. Rendering is canonical: uppercase keywords,
table-qualified column references, single spaces, no trailing semicolon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Union

from .catalog import SchemaCatalog
from .util import iso_utc

AGG_SQL = {
    "sum": "SUM",
    "count": "COUNT",
    "avg": "AVG",
    "min": "MIN",
    "max": "MAX",
    "count_distinct": "COUNT",
}

BUCKET_GRAINS = ("day", "week", "month", "year")

COMPARATOR_SQL = {
    "=": "=",
    "!=": "<>",
    "<": "<",
    "<=": "<=",
    ">": ">",
    ">=": ">=",
    "contains": "LIKE",
    "between": "BETWEEN",
}


class InvalidAst(ValueError):
    """AST violates a structural invariant; message names the violation."""


@dataclass(frozen=True)
class ColumnRef:
    table: str
    column: str

    def render(self) -> str:
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class Star:
    def render(self) -> str:
        return "*"


class Literal:
    """Typed constant. Equality is strict on the value's type so an int never
    silently round-trips into a float or bool."""

    __slots__ = ("value",)

    def __init__(self, value: Union[int, float, str, bool, datetime, date]):
        self.value = value

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Literal):
            return NotImplemented
        return type(self.value) is type(other.value) and self.value == other.value

    def __hash__(self) -> int:
        return hash((type(self.value).__name__, self.value))

    def __repr__(self) -> str:
        return f"Literal({self.value!r})"

    def render(self) -> str:
        v = self.value
        if isinstance(v, bool):
            return "TRUE" if v else "FALSE"
        if isinstance(v, int):
            return str(v)
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, datetime):
            return f"TIMESTAMP '{iso_utc(v)}'"
        if isinstance(v, date):
            return f"DATE '{v.isoformat()}'"
        if isinstance(v, str):
            return "'" + v.replace("'", "''") + "'"
        raise InvalidAst(f"unsupported literal type {type(v).__name__}")


@dataclass(frozen=True)
class Aggregate:
    fn: str
    arg: Union[ColumnRef, Star]

    def render(self) -> str:
        if self.fn == "count_distinct":
            return f"COUNT(DISTINCT {self.arg.render()})"
        return f"{AGG_SQL[self.fn]}({self.arg.render()})"


@dataclass(frozen=True)
class TimeBucket:
    grain: str
    arg: ColumnRef

    def render(self) -> str:
        return f"DATE_TRUNC('{self.grain}', {self.arg.render()})"


Expression = Union[ColumnRef, Star, Aggregate, TimeBucket]
GroupExpr = Union[ColumnRef, TimeBucket]


@dataclass(frozen=True)
class SelectItem:
    expression: Expression
    alias: str | None = None

    def render(self) -> str:
        if self.alias:
            return f"{self.expression.render()} AS {self.alias}"
        return self.expression.render()


@dataclass(frozen=True)
class Join:
    table: str
    left: ColumnRef
    right: ColumnRef

    def render(self) -> str:
        return f"JOIN {self.table} ON {self.left.render()} = {self.right.render()}"


@dataclass(frozen=True)
class Predicate:
    column: ColumnRef
    comparator: str
    value: Union[Literal, ColumnRef, tuple[Literal, Literal]]

    def render(self) -> str:
        op = COMPARATOR_SQL[self.comparator]
        if self.comparator == "between":
            lo, hi = self.value  # type: ignore[misc]
            return f"{self.column.render()} BETWEEN {lo.render()} AND {hi.render()}"
        return f"{self.column.render()} {op} {self.value.render()}"


@dataclass(frozen=True)
class OrderItem:
    expression: Expression
    direction: str = "asc"

    def render(self) -> str:
        return f"{self.expression.render()} {self.direction.upper()}"


@dataclass(frozen=True)
class DerivedTable:
    query: "SelectAst"
    alias: str


@dataclass(frozen=True)
class SelectAst:
    select_items: tuple[SelectItem, ...]
    from_source: Union[str, DerivedTable]
    joins: tuple[Join, ...] = ()
    where: tuple[Predicate, ...] = ()
    group_by: tuple[GroupExpr, ...] = ()
    order_by: tuple[OrderItem, ...] = ()
    limit: int | None = None
    distinct: bool = False

    @property
    def from_table(self) -> str:
        if isinstance(self.from_source, DerivedTable):
            return self.from_source.alias
        return self.from_source

    def tables(self) -> list[str]:
        return [self.from_table] + [j.table for j in self.joins]


@dataclass(frozen=True)
class SqlText:
    text: str
    dialect_version: str = "postgresql-13"


def render_sql(ast: SelectAst, catalog: SchemaCatalog | None = None) -> SqlText:
    """Deterministic canonical rendering of a query tree.

    When a catalog is supplied the tree is validated first and a violation
    list aborts the render.
    """
    if catalog is not None:
        violations = validate(ast, catalog)
        if violations:
            raise InvalidAst("; ".join(violations))
    return SqlText(text=_render(ast))


def _render(ast: SelectAst) -> str:
    parts = ["SELECT"]
    if ast.distinct:
        parts.append("DISTINCT")
    parts.append(", ".join(item.render() for item in ast.select_items))
    if isinstance(ast.from_source, DerivedTable):
        parts.append(f"FROM ({_render(ast.from_source.query)}) AS {ast.from_source.alias}")
    else:
        parts.append(f"FROM {ast.from_source}")
    for join in ast.joins:
        parts.append(join.render())
    if ast.where:
        parts.append("WHERE " + " AND ".join(p.render() for p in ast.where))
    if ast.group_by:
        parts.append("GROUP BY " + ", ".join(e.render() for e in ast.group_by))
    if ast.order_by:
        parts.append("ORDER BY " + ", ".join(o.render() for o in ast.order_by))
    if ast.limit is not None:
        parts.append(f"LIMIT {ast.limit}")
    return " ".join(parts)


def _derived_output_columns(derived: DerivedTable) -> list[str] | None:
    """Visible column names of a derived table, or None when star makes them opaque."""
    names: list[str] = []
    for item in derived.query.select_items:
        if item.alias:
            names.append(item.alias)
        elif isinstance(item.expression, ColumnRef):
            names.append(item.expression.column)
        elif isinstance(item.expression, Star):
            return None
        else:
            names.append("")
    return names


def validate(ast: SelectAst, catalog: SchemaCatalog) -> list[str]:
    """Structural violations of the tree against a catalog; empty means valid."""
    violations: list[str] = []
    scope: dict[str, list[str] | None] = {}

    def check_select(node: SelectAst) -> None:
        if isinstance(node.from_source, DerivedTable):
            check_select(node.from_source.query)
            cols = _derived_output_columns(node.from_source)
            if cols is not None:
                unnamed = [i for i, c in enumerate(cols) if not c]
                if unnamed:
                    violations.append(
                        f"derived table {node.from_source.alias!r} select item {unnamed[0]} needs an alias"
                    )
            scope[node.from_source.alias] = cols
        elif node.from_source not in catalog.tables:
            violations.append(f"unknown table {node.from_source!r}")

        introduced = {node.from_table}
        for join in node.joins:
            if join.table not in catalog.tables:
                violations.append(f"unknown table {join.table!r}")
                continue
            sides = {join.left.table, join.right.table}
            if join.table not in sides:
                violations.append(f"join on {join.table!r} does not reference the joined table")
            if not (sides - {join.table}) & introduced:
                violations.append(f"join on {join.table!r} does not connect to an introduced table")
            introduced.add(join.table)

        def check_column(ref: ColumnRef, where: str) -> None:
            if ref.table not in introduced:
                violations.append(f"{where} references table {ref.table!r} not in FROM/JOIN")
                return
            if ref.table in scope:
                cols = scope[ref.table]
                if cols is not None and ref.column not in cols:
                    violations.append(f"{where} references unknown column {ref.render()}")
                return
            if not catalog.has_column(ref.table, ref.column):
                violations.append(f"{where} references unknown column {ref.render()}")

        def check_expr(expr: Expression, where: str) -> None:
            if isinstance(expr, ColumnRef):
                check_column(expr, where)
            elif isinstance(expr, Aggregate):
                if isinstance(expr.arg, ColumnRef):
                    check_column(expr.arg, where)
                elif expr.fn == "count_distinct":
                    violations.append("COUNT(DISTINCT *) is not valid")
            elif isinstance(expr, TimeBucket):
                if expr.grain not in BUCKET_GRAINS:
                    violations.append(f"unknown bucket grain {expr.grain!r}")
                check_column(expr.arg, where)

        if not node.select_items:
            violations.append("empty select list")
        for item in node.select_items:
            check_expr(item.expression, "select item")
        for pred in node.where:
            check_column(pred.column, "predicate")
            if isinstance(pred.value, ColumnRef):
                check_column(pred.value, "predicate")
            if pred.comparator == "between" and not isinstance(pred.value, tuple):
                violations.append("BETWEEN predicate needs a (low, high) pair")
            if pred.comparator != "between" and isinstance(pred.value, tuple):
                violations.append(f"comparator {pred.comparator!r} cannot take a range value")
        for expr in node.group_by:
            check_expr(expr, "group by")
        for order in node.order_by:
            check_expr(order.expression, "order by")
            if order.direction not in ("asc", "desc"):
                violations.append(f"bad order direction {order.direction!r}")

        has_aggregate = any(isinstance(i.expression, Aggregate) for i in node.select_items)
        bare = [i.expression for i in node.select_items if not isinstance(i.expression, Aggregate)]
        if has_aggregate:
            stars = [e for e in bare if isinstance(e, Star)]
            if stars:
                violations.append("star select cannot mix with aggregates")
            if set(map(_expr_key, (e for e in bare if not isinstance(e, Star)))) != set(
                map(_expr_key, node.group_by)
            ):
                violations.append("group by must list exactly the non-aggregated select expressions")
        elif node.group_by:
            if set(map(_expr_key, node.group_by)) - set(
                map(_expr_key, (e for e in bare if not isinstance(e, Star)))
            ):
                violations.append("group by lists expressions missing from select")
        if node.limit is not None and node.limit <= 0:
            violations.append("limit must be positive")

    check_select(ast)
    return violations


def _expr_key(expr: Expression) -> tuple:
    if isinstance(expr, ColumnRef):
        return ("col", expr.table, expr.column)
    if isinstance(expr, TimeBucket):
        return ("bucket", expr.grain, expr.arg.table, expr.arg.column)
    if isinstance(expr, Aggregate):
        arg = expr.arg.render() if isinstance(expr.arg, ColumnRef) else "*"
        return ("agg", expr.fn, arg)
    return ("star",)


def ast_digest(ast: SelectAst) -> str:
    """Short stable digest of the canonical rendering, used in rewrite traces."""
    from .util import fnv1a64

    return format(fnv1a64(_render(ast).encode("utf-8")), "016x")
