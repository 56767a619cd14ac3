"""Combinatorial question generation with category quotas.

Templates come from a data file so deployments can extend the library without
code changes. Slot fillers are enumerated from the catalog (numeric non-key
columns as measures, text and boolean columns and tables as dimensions,
timestamp columns crossed with grains as time axes), scored greedily for
schema coverage and category balance, deduplicated by signature and rendered
text, and compiled straight into intents without a natural-language round
trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .catalog import (
    NUMERIC_TAGS,
    SchemaCatalog,
    build_lexicon,
    join_path,
)
from .intent import Measure, QueryIntent, RelativeWindow
from .linker import link
from .sqlbuild import build_ast
from .util import humanize, singularize, utc

CATEGORIES = ("trend", "distribution", "comparison", "anomaly")

GRAIN_CHOICES = ("day", "week", "month")

_GRAIN_ADVERB = {"day": "daily", "week": "weekly", "month": "monthly"}

_WINDOW_BY_GRAIN = {
    "day": RelativeWindow(30, "day"),
    "week": RelativeWindow(12, "week"),
    "month": RelativeWindow(12, "month"),
}

_PROBE_CLOCK = utc(2024, 1, 1)


class QuestionError(ValueError):
    pass


class UnsatisfiableQuota(QuestionError):
    """The catalog cannot support a category's quota; message names both."""


@dataclass(frozen=True)
class QuestionTemplate:
    id: str
    category: str
    pattern: str
    required_slots: tuple[str, ...]
    agg: str = "sum"
    dimension_types: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise QuestionError(f"template {self.id!r} has unknown category {self.category!r}")
        import re

        for slot in re.findall(r"\{(\w+)\}", self.pattern):
            if slot not in self.required_slots:
                raise QuestionError(f"template {self.id!r} pattern slot {slot!r} missing from required_slots")


@dataclass(frozen=True)
class QuestionSpec:
    template_id: str
    category: str
    slots: tuple[tuple[str, str], ...]  # sorted (slot, binding) pairs
    text: str
    agg: str

    @property
    def signature(self) -> tuple:
        return (self.template_id, self.slots)

    def slot(self, name: str) -> str | None:
        for key, value in self.slots:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class QuestionConfig:
    n: int = 30
    quotas: tuple[tuple[str, int], ...] = tuple((c, 5) for c in CATEGORIES)


@dataclass(frozen=True)
class QuestionSet:
    specs: tuple[QuestionSpec, ...]
    config: QuestionConfig


def load_templates(document: str | None = None) -> list[QuestionTemplate]:
    if document is None:
        document = resources.files("pginsight.data").joinpath("templates.json").read_text(encoding="utf-8")
    raw = json.loads(document)
    templates = []
    for entry in raw:
        templates.append(
            QuestionTemplate(
                id=entry["id"],
                category=entry["category"],
                pattern=entry["pattern"],
                required_slots=tuple(entry["required_slots"]),
                agg=entry.get("agg", "sum"),
                dimension_types=tuple(entry["dimension_types"]) if "dimension_types" in entry else None,
            )
        )
    return templates


# Slot filler enumeration ---------------------------------------------------


def _measure_fillers(catalog: SchemaCatalog) -> list[str]:
    fk_cols = {(fk.from_table, fk.from_column) for fk in catalog.foreign_keys}
    return [
        f"{t.name}.{c.name}"
        for t in catalog.tables.values()
        for c in t.columns
        if c.type_tag in NUMERIC_TAGS and not c.is_primary_key and (t.name, c.name) not in fk_cols
    ]


def _dimension_fillers(catalog: SchemaCatalog, type_filter: tuple[str, ...] | None) -> list[str]:
    out: list[str] = []
    fk_cols = {(fk.from_table, fk.from_column) for fk in catalog.foreign_keys}
    for t in catalog.tables.values():
        for c in t.columns:
            if c.is_primary_key or (t.name, c.name) in fk_cols:
                continue
            if type_filter is not None:
                if c.type_tag in type_filter:
                    out.append(f"{t.name}.{c.name}")
            elif c.type_tag in ("text", "boolean"):
                out.append(f"{t.name}.{c.name}")
    if type_filter is None:
        out.extend(catalog.tables)
    return out


def _time_grain_fillers(catalog: SchemaCatalog) -> list[str]:
    out = []
    for t in catalog.tables.values():
        for c in t.columns:
            if c.type_tag == "timestamp":
                out.extend(f"{t.name}.{c.name}:{grain}" for grain in GRAIN_CHOICES)
    return out


def _table_fillers(catalog: SchemaCatalog) -> list[str]:
    return [t for t in catalog.tables if catalog.tables[t].primary_key]


def _tables_of(binding: str, catalog: SchemaCatalog) -> set[str]:
    base = binding.split(":", 1)[0]
    table = base.split(".", 1)[0]
    return {table} if table in catalog.tables else set()


def _component_map(catalog: SchemaCatalog) -> dict[str, str]:
    """Union-find over the FK graph; connectivity checks become O(1)."""
    parent = {t: t for t in catalog.tables}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for fk in catalog.foreign_keys:
        parent[find(fk.from_table)] = find(fk.to_table)
    return {t: find(t) for t in catalog.tables}


# Rendering and compilation -------------------------------------------------


def render_question(spec: QuestionSpec) -> str:
    """Slot ids replaced by readable lowercase names; underscores to spaces."""
    text = spec.text
    if not text:
        raise QuestionError("spec has no rendered text")
    return text


def _render_slot(slot: str, binding: str, bare: bool = False) -> str:
    if slot == "time_grain":
        _, grain = binding.split(":", 1)
        return _GRAIN_ADVERB[grain]
    if "." in binding:
        table, column = binding.split(".", 1)
        column_text = humanize(column)
        if bare:
            return column_text
        table_tokens = {singularize(t) for t in table.lower().split("_")}
        column_tokens = {singularize(t) for t in column.lower().split("_")}
        if table_tokens & column_tokens:
            return column_text
        return f"{singularize(table.lower()).replace('_', ' ')} {column_text}"
    return humanize(binding)


def _render_pattern(template: QuestionTemplate, slots: dict[str, str]) -> str:
    text = template.pattern
    for slot, binding in slots.items():
        bare = slot == "dimension" and template.dimension_types is not None
        text = text.replace("{" + slot + "}", _render_slot(slot, binding, bare=bare))
    return text


def question_to_intent(spec: QuestionSpec) -> QueryIntent:
    """Compile a question directly from its slot bindings; no free-text pass.

    Time-grain slots become a relative window plus a temporal dimension (the
    builder buckets it at the window unit); boolean dimensions become
    equals-true filters; table slots aggregate over the table's rows.
    """
    slots = dict(spec.slots)
    measures: list[Measure] = []
    dimensions: list[str] = []
    filters: list = []
    window: RelativeWindow | None = None
    order = None

    grain = None
    if "time_grain" in slots:
        ts_column, grain = slots["time_grain"].split(":", 1)
        window = _WINDOW_BY_GRAIN[grain]
        dimensions.append(ts_column)

    from .intent import FilterSpec, OrderSpec

    if "dimension" in slots:
        binding = slots["dimension"]
        is_boolean_flag = spec.template_id and _looks_boolean(spec, binding)
        if is_boolean_flag:
            filters.append(FilterSpec(phrase=binding, comparator="=", literal=True))
        else:
            dimensions.insert(0, binding)

    if "measure" in slots:
        measures.append(Measure(agg_fn=spec.agg, target_phrase=slots["measure"]))
    elif "table" in slots:
        measures.append(Measure(agg_fn=spec.agg, target_phrase=slots["table"]))

    if spec.category == "comparison" and "dimension" in slots and measures and "time_grain" not in slots:
        order = OrderSpec(key_kind="measure", key_index=0, direction="desc")
    if spec.category == "anomaly" and "dimension" in slots and measures and "time_grain" not in slots:
        order = OrderSpec(key_kind="measure", key_index=0, direction="desc")
    if spec.category == "distribution" and dimensions and measures:
        order = OrderSpec(key_kind="dimension", key_index=0, direction="asc")
    if spec.category == "comparison" and "measure" in slots and not dimensions and spec.agg == "avg":
        window = RelativeWindow(1, "quarter")

    intent = QueryIntent(
        raw_text=spec.text,
        measures=measures,
        dimensions=dimensions,
        filters=filters,
        time_window=window,
        order=order,
        limit=None,
    )
    intent.validate()
    return intent


def _looks_boolean(spec: QuestionSpec, binding: str) -> bool:
    # the retention-style templates restrict the dimension slot to boolean
    # columns; those compile to flag filters rather than group-bys
    return spec.slot("__dimension_boolean__") == "1"


# Generation ----------------------------------------------------------------


@dataclass
class _Candidate:
    template: QuestionTemplate
    slots: dict[str, str]
    spec: QuestionSpec
    tables: frozenset[str]
    columns: frozenset[str]
    jitter: float = 0.0


def _candidate_spec(template: QuestionTemplate, slots: dict[str, str], boolean_dim: bool) -> QuestionSpec:
    stored = dict(slots)
    if boolean_dim:
        stored["__dimension_boolean__"] = "1"
    return QuestionSpec(
        template_id=template.id,
        category=template.category,
        slots=tuple(sorted(stored.items())),
        text=_render_pattern(template, slots),
        agg=template.agg,
    )


def _enumerate_candidates(catalog: SchemaCatalog, templates: list[QuestionTemplate]) -> list[_Candidate]:
    measures = _measure_fillers(catalog)
    grains = _time_grain_fillers(catalog)
    tables = _table_fillers(catalog)
    components = _component_map(catalog)
    candidates: list[_Candidate] = []
    for template in templates:
        pools: list[list[tuple[str, str]]] = []
        for slot in template.required_slots:
            if slot == "measure":
                pools.append([("measure", m) for m in measures])
            elif slot == "dimension":
                dims = _dimension_fillers(catalog, template.dimension_types)
                pools.append([("dimension", d) for d in dims])
            elif slot == "time_grain":
                pools.append([("time_grain", g) for g in grains])
            elif slot == "table":
                pools.append([("table", t) for t in tables])
            else:
                raise QuestionError(f"template {template.id!r} has unknown slot {slot!r}")
        if not pools or any(not p for p in pools):
            continue
        stack = [dict()]
        for pool in pools:
            stack = [dict(partial, **{k: v}) for partial in stack for k, v in pool]
        for slots in stack:
            involved: set[str] = set()
            for binding in slots.values():
                involved |= _tables_of(binding, catalog)
            if not involved or len({components[t] for t in involved}) != 1:
                continue
            if template.dimension_types and "table" in slots:
                # flag-style dimensions and their time axis must describe the subject table
                if slots["dimension"].split(".", 1)[0] != slots["table"]:
                    continue
                if "time_grain" in slots and slots["time_grain"].split(".", 1)[0] != slots["table"]:
                    continue
            columns = frozenset(
                b.split(":", 1)[0] for b in slots.values() if "." in b.split(":", 1)[0]
            )
            boolean_dim = template.dimension_types is not None and "boolean" in template.dimension_types
            spec = _candidate_spec(template, slots, boolean_dim)
            candidates.append(
                _Candidate(
                    template=template,
                    slots=slots,
                    spec=spec,
                    tables=frozenset(involved),
                    columns=columns,
                )
            )
    candidates.sort(key=lambda c: c.spec.signature)
    return candidates


def generate_questions(
    catalog: SchemaCatalog,
    config: QuestionConfig | None = None,
    seed: int = 0,
    templates: list[QuestionTemplate] | None = None,
    synonyms: dict[str, list[str]] | None = None,
) -> QuestionSet:
    """Select exactly n distinct questions meeting every category quota.

    Greedy selection by coverage score (unused tables and columns are worth
    more, categories below quota get priority), deterministic under seed.
    Every selected question is verified to compile and build against the
    catalog before it is accepted.
    """
    if not catalog.tables:
        raise QuestionError("catalog is empty")
    config = config or QuestionConfig()
    templates = templates if templates is not None else load_templates()
    quotas = dict(config.quotas)
    candidates = _enumerate_candidates(catalog, templates)
    rng = np.random.default_rng(seed)
    for candidate in candidates:
        candidate.jitter = float(rng.random()) * 1e-6

    lexicon = build_lexicon(catalog, synonyms or {})
    chosen: list[_Candidate] = []
    chosen_signatures: set = set()
    chosen_texts: set[str] = set()
    counts = {c: 0 for c in CATEGORIES}
    template_uses: dict[str, int] = {}
    covered_tables: set[str] = set()
    covered_columns: set[str] = set()

    def category_exhausted(category: str) -> bool:
        return not any(
            c.template.category == category and c.spec.signature not in chosen_signatures
            for c in candidates
        )

    def score(c: _Candidate) -> float:
        value = c.jitter
        if counts[c.template.category] < quotas.get(c.template.category, 0):
            value += 10.0
        value += 2.0 * len(c.tables - covered_tables)
        value += 1.0 * len(c.columns - covered_columns)
        value -= 0.25 * counts[c.template.category]
        value -= 0.75 * template_uses.get(c.template.id, 0)
        return value

    def compiles(c: _Candidate) -> bool:
        try:
            intent = question_to_intent(c.spec)
            linked = link(intent, catalog, lexicon)
            build_ast(linked, catalog, _PROBE_CLOCK)
            return True
        except Exception:
            return False

    rejected: set = set()
    while len(chosen) < config.n:
        pool = [
            c
            for c in candidates
            if c.spec.signature not in chosen_signatures
            and c.spec.signature not in rejected
            and c.spec.text not in chosen_texts
        ]
        if not pool:
            break
        pool.sort(key=lambda c: (-score(c), c.spec.signature))
        picked = None
        for candidate in pool:
            if compiles(candidate):
                picked = candidate
                break
            rejected.add(candidate.spec.signature)
        if picked is None:
            break
        chosen.append(picked)
        chosen_signatures.add(picked.spec.signature)
        chosen_texts.add(picked.spec.text)
        counts[picked.template.category] += 1
        template_uses[picked.template.id] = template_uses.get(picked.template.id, 0) + 1
        covered_tables |= picked.tables
        covered_columns |= set(picked.columns)

    for category, quota in quotas.items():
        if counts[category] < quota:
            raise UnsatisfiableQuota(
                f"category {category!r} needs {quota} questions but only {counts[category]} are "
                f"expressible on this catalog (missing slot fillers, e.g. no suitable columns)"
            )
    if len(chosen) < config.n:
        raise UnsatisfiableQuota(
            f"catalog supports only {len(chosen)} distinct questions; {config.n} requested"
        )
    return QuestionSet(specs=tuple(c.spec for c in chosen), config=config)
