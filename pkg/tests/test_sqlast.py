from __future__ import annotations

import random
import time
from datetime import date

import pytest

from pginsight.sqlast import (
    Aggregate,
    ColumnRef,
    DerivedTable,
    InvalidAst,
    Join,
    Literal,
    OrderItem,
    Predicate,
    SelectAst,
    SelectItem,
    Star,
    TimeBucket,
    render_sql,
    validate,
)
from pginsight.sqlparse import NonSelectStatement, SqlParseError, parse_sql
from pginsight.util import utc

PAPER_SQL = (
    "SELECT users.name, SUM(sales.revenue) FROM sales JOIN users ON sales.user_id = users.id "
    "GROUP BY users.name ORDER BY SUM(sales.revenue) DESC LIMIT 5"
)


def paper_ast() -> SelectAst:
    revenue = Aggregate(fn="sum", arg=ColumnRef("sales", "revenue"))
    return SelectAst(
        select_items=(SelectItem(ColumnRef("users", "name")), SelectItem(revenue)),
        from_source="sales",
        joins=(Join(table="users", left=ColumnRef("sales", "user_id"), right=ColumnRef("users", "id")),),
        group_by=(ColumnRef("users", "name"),),
        order_by=(OrderItem(expression=revenue, direction="desc"),),
        limit=5,
    )


class TestRender:
    def test_paper_example_exact_text(self, catalog):
        assert render_sql(paper_ast(), catalog).text == PAPER_SQL

    def test_no_where_clause_when_empty(self, catalog):
        ast = SelectAst(select_items=(SelectItem(ColumnRef("users", "name")),), from_source="users")
        assert "WHERE" not in render_sql(ast, catalog).text

    def test_literals_render_canonically(self):
        assert Literal("O'Hare").render() == "'O''Hare'"
        assert Literal(True).render() == "TRUE"
        assert Literal(3.5).render() == "3.5"
        assert Literal(utc(2024, 1, 1)).render() == "TIMESTAMP '2024-01-01T00:00:00Z'"
        assert Literal(date(2024, 1, 31)).render() == "DATE '2024-01-31'"

    def test_invalid_ast_raises_named_violation(self, catalog):
        ast = SelectAst(select_items=(SelectItem(ColumnRef("sales", "bogus")),), from_source="sales")
        with pytest.raises(InvalidAst, match="sales.bogus"):
            render_sql(ast, catalog)


class TestParse:
    def test_paper_sql_with_and_without_semicolon(self):
        expected = paper_ast()
        assert parse_sql(PAPER_SQL) == expected
        assert parse_sql(PAPER_SQL + ";") == expected

    def test_keywords_case_insensitive(self):
        lowered = PAPER_SQL.replace("SELECT", "select").replace("FROM", "from").replace("GROUP BY", "group by")
        assert parse_sql(lowered) == paper_ast()

    def test_bare_select_reports_position(self):
        with pytest.raises(SqlParseError) as err:
            parse_sql("SELECT")
        assert err.value.position == 6

    def test_non_select_rejected(self):
        for stmt in ("DROP TABLE users", "DELETE FROM users", "INSERT INTO t VALUES (1)", "UPDATE t SET x = 1"):
            with pytest.raises(NonSelectStatement):
                parse_sql(stmt)

    def test_lexical_error(self):
        with pytest.raises(SqlParseError):
            parse_sql("SELECT a.b FROM t WHERE a.b = @value")

    def test_trailing_garbage_rejected(self):
        with pytest.raises(SqlParseError):
            parse_sql(PAPER_SQL + " EXTRA")

    def test_between_and_like(self):
        text = "SELECT sales.revenue FROM sales WHERE sales.revenue BETWEEN 10 AND 20 AND sales.created_at LIKE '%x%'"
        ast = parse_sql(text)
        assert ast.where[0].comparator == "between"
        assert ast.where[1].comparator == "contains"


class TestValidate:
    def test_paper_ast_clean(self, catalog):
        assert validate(paper_ast(), catalog) == []

    def test_unknown_column_named(self, catalog):
        ast = SelectAst(select_items=(SelectItem(ColumnRef("sales", "bogus")),), from_source="sales")
        violations = validate(ast, catalog)
        assert violations and "sales.bogus" in violations[0]

    def test_group_by_must_cover_bare_columns(self, catalog):
        ast = SelectAst(
            select_items=(
                SelectItem(ColumnRef("users", "name")),
                SelectItem(Aggregate("sum", ColumnRef("sales", "revenue"))),
            ),
            from_source="sales",
            joins=(Join("users", ColumnRef("sales", "user_id"), ColumnRef("users", "id")),),
            group_by=(),
        )
        violations = validate(ast, catalog)
        assert any("group by" in v for v in violations)

    def test_disconnected_join_flagged(self, catalog):
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
            joins=(Join("regions", ColumnRef("stores", "region_id"), ColumnRef("regions", "id")),),
        )
        violations = validate(ast, catalog)
        assert any("connect" in v for v in violations)


# Random AST generator for the round-trip property -------------------------


def random_ast(rng: random.Random, catalog, allow_derived: bool = True) -> SelectAst:
    tables = sorted(catalog.tables)
    from_table = rng.choice(tables)
    joins = []
    introduced = [from_table]
    for _ in range(rng.randint(0, 2)):
        edges = [
            fk
            for fk in catalog.foreign_keys
            if (fk.from_table in introduced) != (fk.to_table in introduced)
        ]
        if not edges:
            break
        edge = rng.choice(edges)
        new_table = edge.to_table if edge.from_table in introduced else edge.from_table
        old_table = edge.from_table if edge.from_table in introduced else edge.to_table
        left = (
            ColumnRef(edge.from_table, edge.from_column)
            if old_table == edge.from_table
            else ColumnRef(edge.to_table, edge.to_column)
        )
        right = (
            ColumnRef(edge.to_table, edge.to_column)
            if new_table == edge.to_table
            else ColumnRef(edge.from_table, edge.from_column)
        )
        joins.append(Join(table=new_table, left=left, right=right))
        introduced.append(new_table)

    def any_column(type_tags=None):
        table = rng.choice(introduced)
        cols = [
            c
            for c in catalog.tables[table].columns
            if type_tags is None or c.type_tag in type_tags
        ]
        if not cols:
            return None
        return ColumnRef(table, rng.choice(cols).name), rng.choice(cols)

    numeric = []
    for table in introduced:
        numeric.extend(
            ColumnRef(table, c.name)
            for c in catalog.tables[table].columns
            if c.type_tag in ("integer", "float")
        )
    temporal = []
    for table in introduced:
        temporal.extend(
            ColumnRef(table, c.name)
            for c in catalog.tables[table].columns
            if c.type_tag in ("timestamp", "date")
        )

    grouped = rng.random() < 0.5
    select_items: list[SelectItem] = []
    group_by: list = []
    if grouped:
        n_dims = rng.randint(0, 2)
        for _ in range(n_dims):
            table = rng.choice(introduced)
            col = rng.choice(catalog.tables[table].columns)
            expr = ColumnRef(table, col.name)
            if col.type_tag == "timestamp" and rng.random() < 0.4:
                expr = TimeBucket(grain=rng.choice(["day", "month", "year"]), arg=ColumnRef(table, col.name))
            if any(expr == g for g in group_by):
                continue
            select_items.append(SelectItem(expr))
            group_by.append(expr)
        fn = rng.choice(["sum", "avg", "min", "max", "count", "count_distinct"])
        if fn == "count" and rng.random() < 0.5:
            agg = Aggregate("count", Star())
        else:
            target = rng.choice(numeric)
            agg = Aggregate(fn, target)
        alias = rng.choice([None, None, "metric_value"])
        select_items.append(SelectItem(agg, alias=alias))
    else:
        n_cols = rng.randint(1, 3)
        seen = set()
        for _ in range(n_cols):
            table = rng.choice(introduced)
            col = rng.choice(catalog.tables[table].columns)
            if (table, col.name) in seen:
                continue
            seen.add((table, col.name))
            select_items.append(SelectItem(ColumnRef(table, col.name)))

    where = []
    for _ in range(rng.randint(0, 3)):
        picked = any_column()
        if picked is None:
            continue
        ref, meta = picked
        if meta.type_tag in ("integer", "float"):
            literal = Literal(rng.randint(0, 5000)) if meta.type_tag == "integer" else Literal(
                round(rng.uniform(0, 5000), 2)
            )
            comparator = rng.choice(["=", "!=", "<", "<=", ">", ">="])
            where.append(Predicate(ref, comparator, literal))
        elif meta.type_tag == "text":
            if rng.random() < 0.3:
                where.append(Predicate(ref, "contains", Literal("%" + rng.choice("abcd") + "%")))
            else:
                where.append(Predicate(ref, "=", Literal(rng.choice(["EU", "NA", "x'y", "plain"]))))
        elif meta.type_tag == "boolean":
            where.append(Predicate(ref, "=", Literal(rng.random() < 0.5)))
        elif meta.type_tag == "timestamp":
            ts = utc(2024, rng.randint(1, 12), rng.randint(1, 28), rng.randint(0, 23))
            if rng.random() < 0.3:
                hi = utc(2024, 12, rng.randint(1, 28))
                where.append(Predicate(ref, "between", (Literal(ts), Literal(hi))))
            else:
                where.append(Predicate(ref, rng.choice([">=", "<"]), Literal(ts)))
        elif meta.type_tag == "date":
            where.append(Predicate(ref, ">=", Literal(date(2024, rng.randint(1, 12), rng.randint(1, 28)))))

    order_by = []
    if select_items and rng.random() < 0.6:
        pool = [i.expression for i in select_items if not isinstance(i.expression, Star)]
        if pool:
            expr = rng.choice(pool)
            order_by.append(OrderItem(expression=expr, direction=rng.choice(["asc", "desc"])))

    limit = rng.choice([None, None, rng.randint(1, 100)])

    ast = SelectAst(
        select_items=tuple(select_items),
        from_source=from_table,
        joins=tuple(joins),
        where=tuple(where),
        group_by=tuple(group_by),
        order_by=tuple(order_by),
        limit=limit,
    )
    if allow_derived and not grouped and rng.random() < 0.15 and not joins:
        inner_items = tuple(
            SelectItem(ColumnRef(from_table, c.name)) for c in catalog.tables[from_table].columns[:3]
        )
        inner = SelectAst(select_items=inner_items, from_source=from_table)
        outer_cols = tuple(
            SelectItem(ColumnRef("sub", item.expression.column)) for item in inner_items
        )
        ast = SelectAst(select_items=outer_cols, from_source=DerivedTable(query=inner, alias="sub"))
    return ast


class TestRoundTrip:
    def test_thousand_random_asts_round_trip_under_budget(self, catalog):
        rng = random.Random(987654)
        generated = 0
        started = time.perf_counter()
        while generated < 1000:
            ast = random_ast(rng, catalog)
            if validate(ast, catalog):
                continue
            generated += 1
            text = render_sql(ast).text
            parsed = parse_sql(text)
            assert parsed == ast, text
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0, f"round-trip property took {elapsed:.2f}s"

    def test_distinct_asts_render_distinctly(self, catalog):
        rng = random.Random(13579)
        seen: dict[str, SelectAst] = {}
        for _ in range(300):
            ast = random_ast(rng, catalog)
            if validate(ast, catalog):
                continue
            text = render_sql(ast).text
            if text in seen:
                assert seen[text] == ast
            seen[text] = ast

    def test_derived_table_round_trip(self, catalog):
        inner = SelectAst(
            select_items=(
                SelectItem(ColumnRef("sales", "user_id")),
                SelectItem(ColumnRef("sales", "revenue")),
            ),
            from_source="sales",
            order_by=(OrderItem(ColumnRef("sales", "revenue"), "desc"),),
        )
        outer = SelectAst(
            select_items=(SelectItem(ColumnRef("sub", "revenue")),),
            from_source=DerivedTable(query=inner, alias="sub"),
        )
        text = render_sql(outer).text
        assert "FROM (SELECT" in text
        assert parse_sql(text) == outer
