"""Bind intent phrases to catalog elements with confidence scores.

Scoring is purely lexical: token-set overlap against the lexicon, an edit
distance term on the element name, and a synonym-hit bonus. Constants were
tuned once on the bundled fixture corpus and are part of the artifact's
contract; tests pin them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .catalog import NUMERIC_TAGS, SchemaCatalog, SchemaLexicon
from .intent import QueryIntent
from .util import name_similarity, tokenize

JACCARD_WEIGHT = 0.6
NAME_WEIGHT = 0.3
SYNONYM_WEIGHT = 0.1
SCORE_FLOOR = 0.25
ALTERNATIVE_LIMIT = 5

LABEL_TOKENS = ("name", "title", "label")


@dataclass(frozen=True)
class Binding:
    phrase: str
    element: str
    score: float
    alternatives: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class LinkedIntent:
    intent: QueryIntent
    measure_bindings: tuple[Binding | None, ...]
    dimension_bindings: tuple[Binding | None, ...]
    filter_bindings: tuple[Binding | None, ...]

    def tables(self, catalog: SchemaCatalog) -> list[str]:
        """Tables referenced by any binding, in first-appearance order."""
        seen: list[str] = []
        for binding in (*self.measure_bindings, *self.dimension_bindings, *self.filter_bindings):
            if binding is None:
                continue
            table = binding.element.split(".")[0]
            if table in catalog.tables and table not in seen:
                seen.append(table)
        return seen


def score_binding(phrase: str, element_id: str, lexicon: SchemaLexicon) -> float:
    """Lexical match score in [0, 1] between an utterance phrase and a schema element."""
    element_tokens = lexicon.tokens(element_id)
    phrase_tokens = tokenize(phrase)
    union = phrase_tokens | element_tokens
    jaccard = len(phrase_tokens & element_tokens) / len(union) if union else 0.0
    bare_name = element_id.split(".")[-1]
    # qualified phrases ("products.name") should prefer an exact element match
    similarity = max(name_similarity(phrase, bare_name), name_similarity(phrase, element_id))
    synonym_hit = 1.0 if phrase_tokens & element_tokens else 0.0
    score = JACCARD_WEIGHT * jaccard + NAME_WEIGHT * similarity + SYNONYM_WEIGHT * synonym_hit
    return round(min(1.0, max(0.0, score)), 12)


def _rank(phrase: str, candidates: list[str], lexicon: SchemaLexicon) -> list[tuple[str, float]]:
    scored = [(element, score_binding(phrase, element, lexicon)) for element in candidates]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def _admissible_measure_elements(catalog: SchemaCatalog, agg_fn: str) -> list[str]:
    """Numeric non-key columns; count aggregates may also take a whole table.

    Primary and foreign key columns are identifiers, not quantities, so they
    are never offered as measure targets.
    """
    fk_columns = {(fk.from_table, fk.from_column) for fk in catalog.foreign_keys}
    elements = [
        f"{table.name}.{col.name}"
        for table in catalog.tables.values()
        for col in table.columns
        if col.type_tag in NUMERIC_TAGS
        and not col.is_primary_key
        and (table.name, col.name) not in fk_columns
    ]
    if agg_fn in ("count", "count_distinct"):
        elements.extend(catalog.tables)
    return elements


def _dimension_elements(catalog: SchemaCatalog) -> list[str]:
    elements = list(catalog.tables)
    elements.extend(
        f"{table.name}.{col.name}" for table in catalog.tables.values() for col in table.columns
    )
    return elements


def _column_elements(catalog: SchemaCatalog) -> list[str]:
    return [
        f"{table.name}.{col.name}" for table in catalog.tables.values() for col in table.columns
    ]


def label_column(catalog: SchemaCatalog, table: str) -> str | None:
    """Display column of a table: a name-like text column, else the first text column."""
    meta = catalog.tables[table]
    for col in meta.columns:
        if col.type_tag == "text" and col.name.lower() in LABEL_TOKENS:
            return f"{table}.{col.name}"
    for col in meta.columns:
        if col.type_tag == "text":
            return f"{table}.{col.name}"
    return None


def _bind(
    phrase: str,
    candidates: list[str],
    lexicon: SchemaLexicon,
) -> Binding | None:
    ranked = _rank(phrase, candidates, lexicon)
    if not ranked or ranked[0][1] < SCORE_FLOOR:
        return None
    element, score = ranked[0]
    alternatives = tuple((e, s) for e, s in ranked[1 : 1 + ALTERNATIVE_LIMIT] if s > 0.0)
    return Binding(phrase=phrase, element=element, score=score, alternatives=alternatives)


def link(intent: QueryIntent, catalog: SchemaCatalog, lexicon: SchemaLexicon) -> LinkedIntent:
    """Bind every intent phrase to its best admissible catalog element.

    Measures bind to numeric columns (count may take a whole table);
    dimensions bind to columns or tables, with a table winner resolved to the
    table's label column when the intent aggregates; filters bind to columns.
    Phrases scoring under the floor stay unbound; ambiguity is data here, not
    an error.
    """
    measure_bindings: list[Binding | None] = []
    for measure in intent.measures:
        binding = _bind(measure.target_phrase, _admissible_measure_elements(catalog, measure.agg_fn), lexicon)
        measure_bindings.append(binding)

    grouped = bool(intent.measures)
    dimension_bindings: list[Binding | None] = []
    for phrase in intent.dimensions:
        binding = _bind(phrase, _dimension_elements(catalog), lexicon)
        if binding is not None and grouped and binding.element in catalog.tables:
            resolved = label_column(catalog, binding.element)
            if resolved is not None:
                binding = Binding(
                    phrase=binding.phrase,
                    element=resolved,
                    score=binding.score,
                    alternatives=binding.alternatives,
                )
        dimension_bindings.append(binding)

    filter_bindings: list[Binding | None] = []
    for filter_spec in intent.filters:
        filter_bindings.append(_bind(filter_spec.phrase, _column_elements(catalog), lexicon))

    return LinkedIntent(
        intent=intent,
        measure_bindings=tuple(measure_bindings),
        dimension_bindings=tuple(dimension_bindings),
        filter_bindings=tuple(filter_bindings),
    )


def linking_precision(
    predicted: list[Binding | None],
    gold: list[tuple[str, str]],
) -> float:
    """Fraction of gold (phrase, element) pairs the predictions got right.

    Unbound phrases count as incorrect. Every predicted phrase must appear in
    the gold set; anything else is a harness bug worth failing loudly on.
    """
    gold_map: dict[str, str] = {}
    for phrase, element in gold:
        gold_map[phrase] = element
    for binding in predicted:
        if binding is not None and binding.phrase not in gold_map:
            raise ValueError(f"gold corpus missing predicted phrase {binding.phrase!r}")
    if not gold_map:
        return 1.0
    predicted_map = {b.phrase: b.element for b in predicted if b is not None}
    correct = sum(1 for phrase, element in gold_map.items() if predicted_map.get(phrase) == element)
    return correct / len(gold_map)
