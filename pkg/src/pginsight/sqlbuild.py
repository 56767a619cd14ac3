"""Assemble a validated query tree from a linked intent.

Measures become aggregates, dimensions become select-and-group expressions
(with temporal columns bucketed by the window unit), filter bindings become
predicates, and relative windows resolve against an injected clock so output
is reproducible.
"""

from __future__ import annotations

from datetime import datetime, timedelta

from .catalog import TEMPORAL_TAGS, SchemaCatalog, join_path
from .intent import AbsoluteWindow, RelativeWindow
from .linker import Binding, LinkedIntent
from .sqlast import (
    Aggregate,
    ColumnRef,
    Join,
    Literal,
    OrderItem,
    Predicate,
    SelectAst,
    SelectItem,
    Star,
    TimeBucket,
    validate,
)
from .util import shift_months

_GRAIN_BY_UNIT = {"day": "day", "week": "week", "month": "month", "quarter": "month", "year": "year"}


class BuildError(ValueError):
    """Intent cannot be turned into SQL; message names the blocking condition."""


def _column_ref(element: str) -> ColumnRef:
    table, _, column = element.partition(".")
    return ColumnRef(table=table, column=column)


def resolve_relative_window(window: RelativeWindow, now: datetime) -> datetime:
    """Start instant of a relative window ending now, in calendar units.

    Month-based units subtract calendar months and clamp to month end; day
    and week units are exact timedeltas.
    """
    if window.unit == "day":
        return now - timedelta(days=window.amount)
    if window.unit == "week":
        return now - timedelta(weeks=window.amount)
    months = {"month": 1, "quarter": 3, "year": 12}[window.unit] * window.amount
    return shift_months(now, -months)


def _require_binding(binding: Binding | None, phrase: str, catalog: SchemaCatalog) -> Binding:
    if binding is None:
        raise BuildError(f"phrase {phrase!r} is unbound; resolve clarifications first")
    table = binding.element.split(".")[0]
    if table not in catalog.tables:
        raise BuildError(f"binding {binding.element!r} references a table missing from the catalog")
    if "." in binding.element and not catalog.has_column(table, binding.element.split(".", 1)[1]):
        raise BuildError(f"binding {binding.element!r} references a nonexistent column")
    return binding


def build_ast(linked: LinkedIntent, catalog: SchemaCatalog, clock: datetime) -> SelectAst:
    """Build the canonical query tree for a fully resolved linked intent."""
    intent = linked.intent
    if intent.ambiguity_flags:
        pending = ", ".join(f.slot_id for f in intent.ambiguity_flags)
        raise BuildError(f"intent has unresolved clarifications: {pending}")

    measure_bindings = [
        _require_binding(b, m.target_phrase, catalog)
        for b, m in zip(linked.measure_bindings, intent.measures)
    ]
    dimension_bindings = [
        _require_binding(b, p, catalog) for b, p in zip(linked.dimension_bindings, intent.dimensions)
    ]
    filter_bindings = [
        _require_binding(b, f.phrase, catalog) for b, f in zip(linked.filter_bindings, intent.filters)
    ]

    tables: list[str] = []
    for binding in (*measure_bindings, *dimension_bindings, *filter_bindings):
        table = binding.element.split(".")[0]
        if table not in tables:
            tables.append(table)
    if not tables:
        raise BuildError("intent references no schema elements")

    from_table = tables[0]
    joins: list[Join] = []
    introduced = {from_table}
    for table in tables[1:]:
        if table in introduced:
            continue
        path = join_path(catalog, from_table, table)
        if path is None:
            raise BuildError(f"tables {from_table!r} and {table!r} are not connected by foreign keys")
        order = path.tables()
        for edge, (left_table, right_table) in zip(path.edges, zip(order, order[1:])):
            if right_table in introduced:
                continue
            if edge.from_table == left_table:
                left = ColumnRef(edge.from_table, edge.from_column)
                right = ColumnRef(edge.to_table, edge.to_column)
            else:
                left = ColumnRef(edge.to_table, edge.to_column)
                right = ColumnRef(edge.from_table, edge.from_column)
            joins.append(Join(table=right_table, left=left, right=right))
            introduced.add(right_table)

    window_unit = intent.time_window.unit if isinstance(intent.time_window, RelativeWindow) else None
    grain = _GRAIN_BY_UNIT.get(window_unit or "month", "month")

    select_items: list[SelectItem] = []
    group_by: list = []
    grouped = bool(intent.measures)
    window_column: ColumnRef | None = None

    dimension_exprs: list = []
    for binding in dimension_bindings:
        if binding.element in catalog.tables:
            dimension_exprs.append(Star())
            continue
        ref = _column_ref(binding.element)
        col_meta = catalog.column(ref.table, ref.column)
        if col_meta.type_tag in TEMPORAL_TAGS and grouped:
            dimension_exprs.append(TimeBucket(grain=grain, arg=ref))
            if window_column is None:
                window_column = ref
        else:
            dimension_exprs.append(ref)

    for expr in dimension_exprs:
        select_items.append(SelectItem(expression=expr))
        if grouped and not isinstance(expr, Star):
            group_by.append(expr)

    aggregate_exprs: list[Aggregate] = []
    for binding, measure in zip(measure_bindings, intent.measures):
        if binding.element in catalog.tables:
            if measure.agg_fn == "count":
                agg = Aggregate(fn="count", arg=Star())
            else:
                pk = catalog.tables[binding.element].primary_key
                if not pk:
                    raise BuildError(f"{measure.agg_fn} over table {binding.element!r} needs a primary key")
                agg = Aggregate(fn=measure.agg_fn, arg=ColumnRef(binding.element, pk[0].name))
        else:
            agg = Aggregate(fn=measure.agg_fn, arg=_column_ref(binding.element))
        aggregate_exprs.append(agg)
        select_items.append(SelectItem(expression=agg))

    where: list[Predicate] = []
    for binding, filter_spec in zip(filter_bindings, intent.filters):
        ref = _column_ref(binding.element)
        literal = filter_spec.literal
        if filter_spec.comparator == "between":
            lo, hi = literal  # type: ignore[misc]
            where.append(Predicate(column=ref, comparator="between", value=(Literal(lo), Literal(hi))))
        elif filter_spec.comparator == "contains":
            where.append(Predicate(column=ref, comparator="contains", value=Literal(f"%{literal}%")))
        else:
            where.append(Predicate(column=ref, comparator=filter_spec.comparator, value=Literal(literal)))

    if intent.time_window is not None:
        if window_column is None:
            window_column = _first_temporal_column(catalog, [from_table] + [j.table for j in joins])
        if window_column is None:
            raise BuildError("intent has a time window but no involved table has a timestamp or date column")
        if isinstance(intent.time_window, RelativeWindow):
            start = resolve_relative_window(intent.time_window, clock)
            where.append(Predicate(column=window_column, comparator=">=", value=Literal(start)))
        else:
            assert isinstance(intent.time_window, AbsoluteWindow)
            where.append(
                Predicate(
                    column=window_column,
                    comparator="between",
                    value=(Literal(intent.time_window.start), Literal(intent.time_window.end)),
                )
            )

    order_by: list[OrderItem] = []
    if intent.order is not None:
        if intent.order.key_kind == "measure":
            expr = aggregate_exprs[intent.order.key_index]
        else:
            expr = dimension_exprs[intent.order.key_index]
        order_by.append(OrderItem(expression=expr, direction=intent.order.direction))
    elif grouped and dimension_exprs and any(isinstance(e, TimeBucket) for e in dimension_exprs):
        bucket = next(e for e in dimension_exprs if isinstance(e, TimeBucket))
        order_by.append(OrderItem(expression=bucket, direction="asc"))

    if not select_items:
        raise BuildError("intent produced no selectable expressions")

    ast = SelectAst(
        select_items=tuple(select_items),
        from_source=from_table,
        joins=tuple(joins),
        where=tuple(where),
        group_by=tuple(group_by),
        order_by=tuple(order_by),
        limit=intent.limit,
    )
    violations = validate(ast, catalog)
    if violations:
        raise BuildError("generated tree failed validation: " + "; ".join(violations))
    return ast


def _first_temporal_column(catalog: SchemaCatalog, tables: list[str]) -> ColumnRef | None:
    for table in tables:
        for col in catalog.tables[table].columns:
            if col.type_tag in TEMPORAL_TAGS:
                return ColumnRef(table=table, column=col.name)
    return None
