from __future__ import annotations

import json
from collections import Counter

import pytest

from pginsight.advisor import (
    ExplainParseError,
    estimate_cost,
    optimize_ast,
    parse_explain,
    recommend_indexes,
)
from pginsight.catalog import load_catalog
from pginsight.executor import execute
from pginsight.sqlast import (
    Aggregate,
    ColumnRef,
    DerivedTable,
    Join,
    Literal,
    OrderItem,
    Predicate,
    SelectAst,
    SelectItem,
    render_sql,
    validate,
)
from pginsight.util import utc
from tests.conftest import ASSETS
from tests.test_sqlast import paper_ast


def run_rows(ast, catalog, backend):
    result, _ = execute(render_sql(ast, catalog).text, backend)
    return Counter(tuple(r) for r in result.rows)


class TestOptimizeAst:
    def test_distinct_dropped_when_pk_selected(self, catalog, backend):
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("users", "id")), SelectItem(ColumnRef("users", "name"))),
            from_source="users",
            distinct=True,
        )
        optimized, trace = optimize_ast(ast, catalog)
        assert optimized.distinct is False
        assert [s.rule_name for s in trace.steps] == ["drop_redundant_distinct"]
        assert run_rows(ast, catalog, backend) == run_rows(optimized, catalog, backend)

    def test_distinct_kept_without_full_pk(self, catalog):
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("users", "name")),),
            from_source="users",
            distinct=True,
        )
        optimized, trace = optimize_ast(ast, catalog)
        assert optimized.distinct is True
        assert trace.steps == ()

    def test_minimal_ast_unchanged(self, catalog):
        ast = paper_ast()
        optimized, trace = optimize_ast(ast, catalog)
        assert optimized == ast
        assert trace.steps == ()

    def test_duplicate_conjunct_removed_and_equivalent(self, catalog, backend):
        pred = Predicate(ColumnRef("sales", "revenue"), ">", Literal(100))
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "id")), SelectItem(ColumnRef("sales", "revenue"))),
            from_source="sales",
            where=(pred, pred),
        )
        optimized, trace = optimize_ast(ast, catalog)
        assert len(optimized.where) == 1
        assert any(s.rule_name == "dedupe_conjuncts" for s in trace.steps)
        assert run_rows(ast, catalog, backend) == run_rows(optimized, catalog, backend)

    def test_tautology_removed(self, catalog, backend):
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "id")),),
            from_source="sales",
            where=(Predicate(ColumnRef("sales", "id"), "=", ColumnRef("sales", "id")),),
        )
        optimized, trace = optimize_ast(ast, catalog)
        assert optimized.where == ()
        assert any(s.rule_name == "fold_tautologies" for s in trace.steps)
        assert run_rows(ast, catalog, backend) == run_rows(optimized, catalog, backend)

    def test_join_reorder_prefers_small_tables(self, backend):
        doc = {
            "tables": [
                {"name": "facts", "columns": [
                    {"name": "id", "type": "integer", "primary_key": True, "nullable": False},
                    {"name": "big_id", "type": "integer", "nullable": False},
                    {"name": "small_id", "type": "integer", "nullable": False},
                ], "row_estimate": 100},
                {"name": "big", "columns": [
                    {"name": "id", "type": "integer", "primary_key": True, "nullable": False},
                ], "row_estimate": 100000},
                {"name": "small", "columns": [
                    {"name": "id", "type": "integer", "primary_key": True, "nullable": False},
                ], "row_estimate": 10},
            ],
            "foreign_keys": [
                {"from_table": "facts", "from_column": "big_id", "to_table": "big", "to_column": "id"},
                {"from_table": "facts", "from_column": "small_id", "to_table": "small", "to_column": "id"},
            ],
        }
        cat = load_catalog(json.dumps(doc))
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("facts", "id")),),
            from_source="facts",
            joins=(
                Join("big", ColumnRef("facts", "big_id"), ColumnRef("big", "id")),
                Join("small", ColumnRef("facts", "small_id"), ColumnRef("small", "id")),
            ),
        )
        optimized, trace = optimize_ast(ast, cat)
        assert [j.table for j in optimized.joins] == ["small", "big"]
        assert validate(optimized, cat) == []
        assert any(s.rule_name == "reorder_joins" for s in trace.steps)

    def test_inner_order_by_dropped(self, catalog, backend):
        inner = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
            order_by=(OrderItem(ColumnRef("sales", "revenue"), "desc"),),
        )
        outer = SelectAst(
            select_items=(SelectItem(ColumnRef("sub", "revenue")),),
            from_source=DerivedTable(query=inner, alias="sub"),
        )
        optimized, trace = optimize_ast(outer, catalog)
        assert isinstance(optimized.from_source, DerivedTable)
        assert optimized.from_source.query.order_by == ()
        assert any(s.rule_name == "drop_inner_order_by" for s in trace.steps)
        assert run_rows(outer, catalog, backend) == run_rows(optimized, catalog, backend)

    def test_inner_order_by_kept_with_limit(self, catalog):
        inner = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
            order_by=(OrderItem(ColumnRef("sales", "revenue"), "desc"),),
            limit=3,
        )
        outer = SelectAst(
            select_items=(SelectItem(ColumnRef("sub", "revenue")),),
            from_source=DerivedTable(query=inner, alias="sub"),
        )
        optimized, _ = optimize_ast(outer, catalog)
        assert optimized.from_source.query.order_by != ()

    def test_idempotent(self, catalog):
        pred = Predicate(ColumnRef("sales", "revenue"), ">", Literal(100))
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "id")),),
            from_source="sales",
            where=(pred, pred, Predicate(ColumnRef("sales", "id"), "=", ColumnRef("sales", "id"))),
            distinct=True,
        )
        once, _ = optimize_ast(ast, catalog)
        twice, trace = optimize_ast(once, catalog)
        assert once == twice
        assert trace.steps == ()

    def test_trace_digests_differ_per_step(self, catalog):
        pred = Predicate(ColumnRef("sales", "revenue"), ">", Literal(100))
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "id")),),
            from_source="sales",
            where=(pred, pred),
        )
        _, trace = optimize_ast(ast, catalog)
        for step in trace.steps:
            assert step.ast_before_digest != step.ast_after_digest


class TestRecommendIndexes:
    def test_filter_predicate_recommendation(self, catalog):
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
            where=(Predicate(ColumnRef("sales", "created_at"), ">=", Literal(utc(2024, 1, 1))),),
        )
        recs = recommend_indexes(ast, catalog)
        assert any(r.table == "sales" and r.columns == ("created_at",) and r.reason == "filter_predicate" for r in recs)

    def test_no_predicates_no_recommendations(self, catalog):
        ast = SelectAst(select_items=(SelectItem(ColumnRef("users", "name")),), from_source="users")
        assert recommend_indexes(ast, catalog) == []

    def test_join_key_flagged_when_not_primary(self, catalog):
        recs = recommend_indexes(paper_ast(), catalog)
        join_recs = [r for r in recs if r.reason == "join_key"]
        assert ("sales", ("user_id",)) in [(r.table, r.columns) for r in join_recs]
        # users.id is a primary key and must not be recommended
        assert ("users", ("id",)) not in [(r.table, r.columns) for r in join_recs]

    def test_order_by_needs_big_table(self, catalog):
        big = json.loads(open(ASSETS.parent.parent / "src/pginsight/data/catalog.json").read())
        for table in big["tables"]:
            if table["name"] == "sales":
                table["row_estimate"] = 50_000
        cat = load_catalog(json.dumps(big))
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
            order_by=(OrderItem(ColumnRef("sales", "revenue"), "desc"),),
        )
        recs = recommend_indexes(ast, cat)
        assert any(r.reason == "order_by" for r in recs)
        # on the real fixture (49 rows) the same query earns nothing
        assert not any(r.reason == "order_by" for r in recommend_indexes(ast, catalog))

    def test_duplicate_free_and_existing_columns(self, catalog):
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
            where=(
                Predicate(ColumnRef("sales", "revenue"), ">", Literal(10)),
                Predicate(ColumnRef("sales", "revenue"), "<", Literal(90)),
            ),
        )
        recs = recommend_indexes(ast, catalog)
        keys = [(r.table, r.columns) for r in recs]
        assert len(keys) == len(set(keys))
        for rec in recs:
            for col in rec.columns:
                assert catalog.tables[rec.table].column(col) is not None


class TestEstimateCost:
    def test_single_equality_filter(self, catalog):
        doc = {"tables": [{"name": "t", "columns": [
            {"name": "id", "type": "integer", "primary_key": True, "nullable": False},
            {"name": "v", "type": "integer", "nullable": False},
        ], "row_estimate": 1000}], "foreign_keys": []}
        cat = load_catalog(json.dumps(doc))
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("t", "v")),),
            from_source="t",
            where=(Predicate(ColumnRef("t", "v"), "=", Literal(1)),),
        )
        assert estimate_cost(ast, cat).estimated_rows == pytest.approx(100.0)

    def test_join_multiplies_base_rows(self, catalog):
        doc = {
            "tables": [
                {"name": "a", "columns": [
                    {"name": "id", "type": "integer", "primary_key": True, "nullable": False},
                    {"name": "b_id", "type": "integer", "nullable": False},
                    {"name": "v", "type": "integer", "nullable": False},
                ], "row_estimate": 1000},
                {"name": "b", "columns": [
                    {"name": "id", "type": "integer", "primary_key": True, "nullable": False},
                ], "row_estimate": 100},
            ],
            "foreign_keys": [{"from_table": "a", "from_column": "b_id", "to_table": "b", "to_column": "id"}],
        }
        cat = load_catalog(json.dumps(doc))
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("a", "v")),),
            from_source="a",
            joins=(Join("b", ColumnRef("a", "b_id"), ColumnRef("b", "id")),),
            where=(Predicate(ColumnRef("a", "v"), "=", Literal(1)),),
        )
        assert estimate_cost(ast, cat).estimated_rows == pytest.approx(10_000.0)

    def test_range_predicate_multiplies_point_three(self, catalog):
        base = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
        )
        with_range = SelectAst(
            select_items=base.select_items,
            from_source="sales",
            where=(Predicate(ColumnRef("sales", "revenue"), ">", Literal(5)),),
        )
        assert estimate_cost(with_range, catalog).estimated_rows == pytest.approx(
            0.3 * estimate_cost(base, catalog).estimated_rows
        )

    def test_monotone_in_conjuncts(self, catalog):
        ast = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
        )
        previous = estimate_cost(ast, catalog).estimated_rows
        preds = [
            Predicate(ColumnRef("sales", "revenue"), ">", Literal(5)),
            Predicate(ColumnRef("sales", "quantity"), "=", Literal(2)),
            Predicate(ColumnRef("sales", "created_at"), "!=", Literal(utc(2024, 1, 1))),
        ]
        for i in range(1, len(preds) + 1):
            current = estimate_cost(
                SelectAst(select_items=ast.select_items, from_source="sales", where=tuple(preds[:i])),
                catalog,
            ).estimated_rows
            assert current <= previous
            previous = current

    def test_sort_penalty_monotone_in_rows(self, catalog):
        small = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
            where=(Predicate(ColumnRef("sales", "revenue"), "=", Literal(1)),),
            order_by=(OrderItem(ColumnRef("sales", "revenue"), "asc"),),
        )
        large = SelectAst(
            select_items=(SelectItem(ColumnRef("sales", "revenue")),),
            from_source="sales",
            order_by=(OrderItem(ColumnRef("sales", "revenue"), "asc"),),
        )
        cost_small = estimate_cost(small, catalog)
        cost_large = estimate_cost(large, catalog)
        assert cost_small.estimated_rows < cost_large.estimated_rows
        assert cost_small.estimated_cost_units < cost_large.estimated_cost_units


class TestParseExplain:
    def test_bundled_capture_total_cost(self):
        text = (ASSETS / "explain_paper_query.json").read_text()
        plan = parse_explain(text)
        assert plan.source == "live_explain"
        assert plan.root.node_type == "Limit"
        assert plan.root.total_cost == pytest.approx(11.62)
        assert plan.root.children[0].node_type == "Sort"

    def test_empty_document_rejected(self):
        with pytest.raises(ExplainParseError):
            parse_explain("")
        with pytest.raises(ExplainParseError):
            parse_explain("[]")

    def test_single_node_capture(self):
        plan = parse_explain((ASSETS / "explain_seq_scan.json").read_text())
        assert plan.root.node_type == "Seq Scan"
        assert plan.root.children == ()

    def test_malformed_document(self):
        with pytest.raises(ExplainParseError):
            parse_explain("{not json")
        with pytest.raises(ExplainParseError):
            parse_explain('{"NoPlan": 1}')
