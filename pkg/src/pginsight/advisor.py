"""Heuristic optimization layer: rewrite rules, index advice, cost estimates, plan ingestion.

Rewrites run in a fixed order to a fixpoint and must preserve semantics; the
execution-equivalence tests on the seeded database are the load-bearing check.
Cost estimation uses fixed selectivity constants so the estimator is total and
deterministic; the interface leaves room for learned estimators later.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .catalog import SchemaCatalog
from .sqlast import (
    Aggregate,
    ColumnRef,
    DerivedTable,
    InvalidAst,
    Join,
    Predicate,
    SelectAst,
    ast_digest,
    validate,
)

SELECTIVITY = {
    "=": 0.1,
    "<": 0.3,
    "<=": 0.3,
    ">": 0.3,
    ">=": 0.3,
    "between": 0.3,
    "contains": 0.5,
    "!=": 0.9,
}

MAX_REWRITE_PASSES = 10
ORDER_BY_INDEX_THRESHOLD = 10_000


@dataclass(frozen=True)
class RewriteStep:
    rule_name: str
    description: str
    ast_before_digest: str
    ast_after_digest: str


@dataclass(frozen=True)
class RewriteTrace:
    steps: tuple[RewriteStep, ...] = ()


@dataclass(frozen=True)
class IndexRecommendation:
    table: str
    columns: tuple[str, ...]
    reason: str  # filter_predicate | join_key | order_by
    estimated_benefit: float


@dataclass(frozen=True)
class CostEstimate:
    estimated_rows: float
    estimated_cost_units: float
    components: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class PlanNode:
    node_type: str
    estimated_rows: float
    total_cost: float
    children: tuple["PlanNode", ...] = ()


@dataclass(frozen=True)
class PlanSummary:
    root: PlanNode
    source: str  # heuristic | live_explain


def _rule_drop_distinct(ast: SelectAst, catalog: SchemaCatalog) -> tuple[SelectAst, str] | None:
    """DISTINCT is redundant when the output rows are already unique, which
    holds when the select list carries the full primary key of every table."""
    if not ast.distinct or isinstance(ast.from_source, DerivedTable):
        return None
    selected = {
        (e.table, e.column)
        for e in (i.expression for i in ast.select_items)
        if isinstance(e, ColumnRef)
    }
    for table in ast.tables():
        pk = catalog.tables[table].primary_key
        if not pk or not all((table, col.name) in selected for col in pk):
            return None
    return replace(ast, distinct=False), "select list covers every table's primary key"


def _rule_dedupe_conjuncts(ast: SelectAst, catalog: SchemaCatalog) -> tuple[SelectAst, str] | None:
    seen: list[Predicate] = []
    for pred in ast.where:
        if pred not in seen:
            seen.append(pred)
    if len(seen) == len(ast.where):
        return None
    return replace(ast, where=tuple(seen)), "removed duplicate WHERE conjuncts"


def _rule_fold_tautologies(ast: SelectAst, catalog: SchemaCatalog) -> tuple[SelectAst, str] | None:
    kept = tuple(
        p
        for p in ast.where
        if not (p.comparator == "=" and isinstance(p.value, ColumnRef) and p.value == p.column)
    )
    if len(kept) == len(ast.where):
        return None
    return replace(ast, where=kept), "dropped self-equality predicates"


def _rule_reorder_joins(ast: SelectAst, catalog: SchemaCatalog) -> tuple[SelectAst, str] | None:
    """Greedily join smaller tables first, keeping every join connected."""
    if len(ast.joins) < 2 or isinstance(ast.from_source, DerivedTable):
        return None
    remaining = list(ast.joins)
    introduced = {ast.from_table}
    ordered: list[Join] = []
    while remaining:
        admissible = [
            j for j in remaining if ({j.left.table, j.right.table} - {j.table}) & introduced
        ]
        if not admissible:
            return None
        pick = min(admissible, key=lambda j: (catalog.tables[j.table].row_estimate, j.table))
        ordered.append(pick)
        introduced.add(pick.table)
        remaining.remove(pick)
    if tuple(ordered) == ast.joins:
        return None
    return replace(ast, joins=tuple(ordered)), "joined smaller tables first"


def _rule_drop_inner_order(ast: SelectAst, catalog: SchemaCatalog) -> tuple[SelectAst, str] | None:
    """An inner ORDER BY without LIMIT is unobservable through the outer query."""
    if not isinstance(ast.from_source, DerivedTable):
        return None
    inner = ast.from_source.query
    if not inner.order_by or inner.limit is not None:
        return None
    new_inner = replace(inner, order_by=())
    return (
        replace(ast, from_source=DerivedTable(query=new_inner, alias=ast.from_source.alias)),
        "dropped unobservable inner ORDER BY",
    )


_RULES = (
    ("drop_redundant_distinct", _rule_drop_distinct),
    ("dedupe_conjuncts", _rule_dedupe_conjuncts),
    ("fold_tautologies", _rule_fold_tautologies),
    ("reorder_joins", _rule_reorder_joins),
    ("drop_inner_order_by", _rule_drop_inner_order),
)


def optimize_ast(ast: SelectAst, catalog: SchemaCatalog) -> tuple[SelectAst, RewriteTrace]:
    """Apply the rewrite rule set to a fixpoint (bounded passes); semantics preserved."""
    violations = validate(ast, catalog)
    if violations:
        raise InvalidAst("; ".join(violations))
    steps: list[RewriteStep] = []
    current = ast
    for _ in range(MAX_REWRITE_PASSES):
        changed = False
        for rule_name, rule in _RULES:
            outcome = rule(current, catalog)
            if outcome is None:
                continue
            rewritten, description = outcome
            steps.append(
                RewriteStep(
                    rule_name=rule_name,
                    description=description,
                    ast_before_digest=ast_digest(current),
                    ast_after_digest=ast_digest(rewritten),
                )
            )
            current = rewritten
            changed = True
        if not changed:
            break
    return current, RewriteTrace(steps=tuple(steps))


def recommend_indexes(ast: SelectAst, catalog: SchemaCatalog) -> list[IndexRecommendation]:
    """One recommendation per distinct (table, column set), best benefit first."""
    if isinstance(ast.from_source, DerivedTable):
        inner = recommend_indexes(ast.from_source.query, catalog)
    else:
        inner = []
    candidates: dict[tuple[str, tuple[str, ...]], IndexRecommendation] = {}

    def offer(table: str, columns: tuple[str, ...], reason: str, benefit: float) -> None:
        key = (table, columns)
        existing = candidates.get(key)
        if existing is None or benefit > existing.estimated_benefit:
            candidates[key] = IndexRecommendation(
                table=table, columns=columns, reason=reason, estimated_benefit=benefit
            )

    for pred in ast.where:
        if pred.column.table not in catalog.tables:
            continue
        selectivity = SELECTIVITY[pred.comparator]
        if pred.comparator == "contains":
            continue
        rows = catalog.tables[pred.column.table].row_estimate
        offer(pred.column.table, (pred.column.column,), "filter_predicate", rows * (1 - selectivity))

    for join in ast.joins:
        for side in (join.left, join.right):
            if side.table not in catalog.tables:
                continue
            col = catalog.tables[side.table].column(side.column)
            if col is None or col.is_primary_key:
                continue
            rows = catalog.tables[side.table].row_estimate
            offer(side.table, (side.column,), "join_key", rows * 0.9)

    for item in ast.order_by:
        expr = item.expression
        if isinstance(expr, ColumnRef) and expr.table in catalog.tables:
            table = catalog.tables[expr.table]
            if table.row_estimate > ORDER_BY_INDEX_THRESHOLD:
                offer(expr.table, (expr.column,), "order_by", table.row_estimate * 0.5)

    merged = list(candidates.values()) + [
        r for r in inner if (r.table, r.columns) not in candidates
    ]
    merged.sort(key=lambda r: (-r.estimated_benefit, r.table, r.columns))
    return merged


def estimate_cost(ast: SelectAst, catalog: SchemaCatalog) -> CostEstimate:
    """Row and cost estimate from fixed per-comparator selectivities.

    estimated_rows multiplies base-table sizes by each conjunct's selectivity;
    an ORDER BY adds an n log n sort penalty. Monotone: more conjuncts never
    raise the estimate.
    """
    if isinstance(ast.from_source, DerivedTable):
        base_rows = estimate_cost(ast.from_source.query, catalog).estimated_rows
    else:
        base_rows = float(catalog.tables[ast.from_source].row_estimate)
    for join in ast.joins:
        base_rows *= catalog.tables[join.table].row_estimate
    rows = base_rows
    for pred in ast.where:
        rows *= SELECTIVITY[pred.comparator]
    components = {"scan": base_rows, "filter": rows}
    cost = rows
    if ast.order_by:
        sort_penalty = rows * math.log2(rows + 1)
        components["sort"] = sort_penalty
        cost += sort_penalty
    return CostEstimate(estimated_rows=rows, estimated_cost_units=cost, components=components)


class ExplainParseError(ValueError):
    """EXPLAIN document is not in PostgreSQL's structured JSON format."""


def parse_explain(plan_document: str) -> PlanSummary:
    """Ingest `EXPLAIN (FORMAT JSON)` output into a plan tree."""
    if not plan_document or not plan_document.strip():
        raise ExplainParseError("empty plan document")
    try:
        doc = json.loads(plan_document)
    except json.JSONDecodeError as exc:
        raise ExplainParseError(f"not valid JSON: {exc}") from exc
    if isinstance(doc, list):
        if not doc:
            raise ExplainParseError("plan document holds no entries")
        doc = doc[0]
    if not isinstance(doc, dict) or "Plan" not in doc:
        raise ExplainParseError("missing top-level 'Plan' node")
    return PlanSummary(root=_plan_node(doc["Plan"]), source="live_explain")


def _plan_node(raw: dict) -> PlanNode:
    if not isinstance(raw, dict) or "Node Type" not in raw:
        raise ExplainParseError("plan node missing 'Node Type'")
    return PlanNode(
        node_type=raw["Node Type"],
        estimated_rows=float(raw.get("Plan Rows", 0.0)),
        total_cost=float(raw.get("Total Cost", 0.0)),
        children=tuple(_plan_node(child) for child in raw.get("Plans", [])),
    )
