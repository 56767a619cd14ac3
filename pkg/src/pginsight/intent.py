"""Utterance interpretation: deterministic rule-based parsing into a structured intent.

The parser recognizes a fixed pattern vocabulary (top-N, aggregation keywords,
temporal phrases, dimension and filter cues) against the schema lexicon. It is
the deterministic anchor for everything downstream; a remote model gateway may
replace it per request but always falls back here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Callable

from .catalog import SchemaLexicon
from .util import tokenize, utc

AGG_FNS = ("sum", "count", "avg", "min", "max", "count_distinct")
COMPARATORS = ("=", "!=", "<", "<=", ">", ">=", "contains", "between")
TIME_UNITS = ("day", "week", "month", "quarter", "year")

VAGUE_TEMPORAL = frozenset({"recent", "recently", "lately", "currently", "nowadays"})

_STOP_WORDS = frozenset({"the", "a", "an", "of", "all", "their", "our"})
_VERB_NOISE = frozenset(
    {
        "happened",
        "occurred",
        "placed",
        "made",
        "recorded",
        "did",
        "do",
        "does",
        "had",
        "have",
        "has",
        "was",
        "were",
        "is",
        "are",
        "been",
        "there",
        "any",
    }
)


class UnparseableUtterance(ValueError):
    """Raised when no measure, dimension, or filter can be recognized."""


@dataclass(frozen=True)
class AbsoluteWindow:
    start: datetime
    end: datetime


@dataclass(frozen=True)
class RelativeWindow:
    amount: int
    unit: str

    def __post_init__(self) -> None:
        if self.amount < 1:
            raise ValueError("relative window amount must be >= 1")
        if self.unit not in TIME_UNITS:
            raise ValueError(f"unknown time unit {self.unit!r}")


TimeWindow = AbsoluteWindow | RelativeWindow | None


@dataclass(frozen=True)
class Measure:
    agg_fn: str
    target_phrase: str


@dataclass(frozen=True)
class FilterSpec:
    phrase: str
    comparator: str
    literal: object


@dataclass(frozen=True)
class OrderSpec:
    key_kind: str  # "measure" or "dimension"
    key_index: int
    direction: str  # "asc" or "desc"


@dataclass(frozen=True)
class Clarification:
    slot_id: str
    kind: str  # time_range | entity | metric
    prompt: str
    candidates: tuple[str, ...] = ()


@dataclass(frozen=True)
class ClarificationAnswer:
    slot_id: str
    payload: dict


@dataclass
class QueryIntent:
    raw_text: str
    measures: list[Measure] = field(default_factory=list)
    dimensions: list[str] = field(default_factory=list)
    filters: list[FilterSpec] = field(default_factory=list)
    time_window: TimeWindow = None
    order: OrderSpec | None = None
    limit: int | None = None
    ambiguity_flags: list[Clarification] = field(default_factory=list)

    def validate(self) -> None:
        if self.limit is not None and self.limit <= 0:
            raise ValueError("limit must be positive")
        if self.order is not None:
            pool = self.measures if self.order.key_kind == "measure" else self.dimensions
            if not 0 <= self.order.key_index < len(pool):
                raise ValueError("order key does not index an existing measure/dimension")
            if self.order.direction not in ("asc", "desc"):
                raise ValueError(f"bad order direction {self.order.direction!r}")
        for m in self.measures:
            if m.agg_fn not in AGG_FNS:
                raise ValueError(f"unknown aggregate {m.agg_fn!r}")
        for f in self.filters:
            if f.comparator not in COMPARATORS:
                raise ValueError(f"unknown comparator {f.comparator!r}")
        if isinstance(self.time_window, RelativeWindow) and self.time_window.amount < 1:
            raise ValueError("relative window amount must be >= 1")
        seen = set()
        for flag in self.ambiguity_flags:
            if flag.slot_id in seen:
                raise ValueError(f"duplicate clarification slot {flag.slot_id!r}")
            seen.add(flag.slot_id)


_AGG_KEYWORDS = [
    ("count_distinct", ("count distinct", "distinct count", "unique count", "number of unique", "number of distinct")),
    ("sum", ("sum of", "total of", "total", "sum", "overall")),
    ("avg", ("average of", "average", "avg", "mean")),
    ("count", ("count of", "count", "how many", "number of")),
    ("max", ("maximum of", "maximum", "max", "highest", "largest", "peak")),
    ("min", ("minimum of", "minimum", "min", "lowest", "smallest")),
]

_BOUNDARY = r"(?= by | per | across | for each | in | for | where | with | over | during | and | compared |,|$)"

_MONTHS = (
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
)

_LEAD_VERBS = re.compile(
    r"^(?:please\s+)?(?:what is|what are|what was|what were|which|who|list|show me|show|display|find|get|give me|compare|report|tell me)\s+",
)

_RELATIVE_N = re.compile(r"\b(?:(?:in|during|over|for|from)\s+)?(?:the\s+)?(?:last|past)\s+(\d+)\s+(day|week|month|quarter|year)s?\b")
_RELATIVE_ONE = re.compile(r"\b(?:(?:in|during|over|for|from)\s+)?(?:the\s+)?(?:last|past|this)\s+(day|week|month|quarter|year)\b")
_QUARTER = re.compile(r"\b(?:(?:in|during|for)\s+)?q([1-4])(?:\s+(?:of\s+)?(\d{4}))?\b")
_MONTH_NAME = re.compile(r"\b(?:(?:in|during|for)\s+)?(" + "|".join(_MONTHS) + r")(?:\s+(\d{4}))?\b")

_CMP_WORDS = [
    (">=", ("at least", "no less than")),
    ("<=", ("at most", "no more than", "up to")),
    (">", ("greater than", "more than", "over", "above", "exceeding")),
    ("<", ("less than", "under", "below")),
    ("!=", ("not equal to", "other than")),
    ("contains", ("containing", "contains", "like", "mentioning")),
    ("=", ("equal to", "equals", "of", "is")),
]


def _clean_phrase(raw: str) -> str:
    words = [w for w in raw.split() if w and w not in _STOP_WORDS and w not in _VERB_NOISE]
    return " ".join(words)


def _blank(text: str, start: int, end: int) -> str:
    return text[:start] + " " * (end - start) + text[end:]


def _quarter_window(quarter: int, year: int) -> AbsoluteWindow:
    start_month = 3 * (quarter - 1) + 1
    end_month = start_month + 2
    last_day = {3: 31, 6: 30, 9: 30, 12: 31}[end_month]
    return AbsoluteWindow(start=utc(year, start_month, 1), end=utc(year, end_month, last_day, 23, 59, 59))


def _month_window(month: int, year: int) -> AbsoluteWindow:
    from .util import _month_length

    return AbsoluteWindow(start=utc(year, month, 1), end=utc(year, month, _month_length(year, month), 23, 59, 59))


def _extract_time_window(work: str, reference_year: int) -> tuple[str, TimeWindow]:
    m = _RELATIVE_N.search(work)
    if m:
        return _blank(work, m.start(), m.end()), RelativeWindow(int(m.group(1)), m.group(2))
    m = _RELATIVE_ONE.search(work)
    if m:
        return _blank(work, m.start(), m.end()), RelativeWindow(1, m.group(1))
    m = _QUARTER.search(work)
    if m:
        year = int(m.group(2)) if m.group(2) else reference_year
        return _blank(work, m.start(), m.end()), _quarter_window(int(m.group(1)), year)
    m = _MONTH_NAME.search(work)
    if m:
        year = int(m.group(2)) if m.group(2) else reference_year
        return _blank(work, m.start(), m.end()), _month_window(_MONTHS.index(m.group(1)) + 1, year)
    return work, None


def _parse_literal(raw: str) -> object:
    word = raw.strip().strip("'\"")
    try:
        return int(word)
    except ValueError:
        pass
    try:
        return float(word)
    except ValueError:
        pass
    return word


def _split_modifiers(
    phrase: str,
    original_text: str,
    lexicon: SchemaLexicon,
) -> tuple[str, list[FilterSpec]]:
    """Split a noun phrase into its head and modifier-derived filters.

    ALL-CAPS tokens become equality filters on their literal text; tokens that
    appear in some lexicon bag become boolean filters; vague temporal tokens
    are dropped (they surface later as a time-range clarification).
    """
    words = phrase.split()
    if len(words) <= 1:
        return phrase, []
    caps_tokens = {w.lower(): w for w in re.findall(r"\b[A-Z][A-Z0-9]+\b", original_text)}
    all_bags: set[str] = set()
    for bag in lexicon.entries.values():
        all_bags |= bag
    filters: list[FilterSpec] = []
    kept: list[str] = []
    head = words[-1]
    for w in words[:-1]:
        if w in VAGUE_TEMPORAL:
            continue
        if w in caps_tokens:
            filters.append(FilterSpec(phrase=w, comparator="=", literal=caps_tokens[w]))
        elif tokenize(w) & all_bags and not (tokenize(w) & tokenize(head)):
            filters.append(FilterSpec(phrase=w, comparator="=", literal=True))
        else:
            kept.append(w)
    kept.append(head)
    return " ".join(kept), filters


def _extract_comparison(raw: str) -> FilterSpec | None:
    """Parse '<phrase> <cmp words> <value>' comparisons inside filter clauses."""
    text = raw.strip()
    m = re.match(r"^(.+?)\s+between\s+(\S+)\s+and\s+(\S+)$", text)
    if m:
        return FilterSpec(
            phrase=_clean_phrase(m.group(1)),
            comparator="between",
            literal=(_parse_literal(m.group(2)), _parse_literal(m.group(3))),
        )
    for op, words in _CMP_WORDS:
        for w in words:
            m = re.match(rf"^(.+?)\s+{w}\s+(.+)$", text)
            if m:
                return FilterSpec(
                    phrase=_clean_phrase(m.group(1)),
                    comparator=op,
                    literal=_parse_literal(m.group(2)),
                )
    return None


def parse_utterance(
    text: str,
    lexicon: SchemaLexicon,
    clock: Callable[[], datetime] | None = None,
) -> QueryIntent:
    """Parse an utterance into a QueryIntent. Deterministic given text and lexicon."""
    raw = text.strip()
    if not raw:
        raise UnparseableUtterance("empty utterance")
    reference_year = (clock() if clock else datetime.now(timezone.utc)).year

    work = raw.lower()
    work = re.sub(r"[?!.]+$", "", work).strip()

    measures: list[Measure] = []
    dimensions: list[str] = []
    filters: list[FilterSpec] = []
    order: OrderSpec | None = None
    limit: int | None = None

    work, window = _extract_time_window(work, reference_year)

    m = re.search(r"\btop\s+(\d+)\s+(.+?)\s+by\s+(.+?)" + _BOUNDARY, work)
    if m:
        limit = int(m.group(1))
        dim_phrase, dim_filters = _split_modifiers(_clean_phrase(m.group(2)), raw, lexicon)
        filters.extend(dim_filters)
        if dim_phrase:
            dimensions.append(dim_phrase)
        measure_raw = _clean_phrase(m.group(3))
        agg = "sum"
        for fn, keywords in _AGG_KEYWORDS:
            for kw in keywords:
                if measure_raw.startswith(kw + " "):
                    agg = fn
                    measure_raw = measure_raw[len(kw) :].strip()
                    break
        measures.append(Measure(agg_fn=agg, target_phrase=measure_raw))
        order = OrderSpec(key_kind="measure", key_index=0, direction="desc")
        work = _blank(work, m.start(), m.end())

    work = _LEAD_VERBS.sub("", work.strip())
    work = " " + work + " "

    # aggregation keyword + target phrase
    for fn, keywords in _AGG_KEYWORDS:
        for kw in keywords:
            pattern = re.compile(r"(?<=\s)" + re.escape(kw) + r"\s+(.+?)" + _BOUNDARY)
            m = pattern.search(work)
            if m:
                target = _clean_phrase(m.group(1))
                if not target:
                    continue
                measures.append(Measure(agg_fn=fn, target_phrase=target))
                work = _blank(work, m.start(), m.end())

    # dimension cues
    for cue in (" for each ", " across ", " per ", " by ", " grouped by "):
        while True:
            idx = work.find(cue)
            if idx < 0:
                break
            m = re.match(r"(.+?)" + _BOUNDARY, work[idx + len(cue) :])
            if not m or not m.group(1).strip():
                break
            phrase, extra = _split_modifiers(_clean_phrase(m.group(1)), raw, lexicon)
            filters.extend(extra)
            if phrase:
                dimensions.append(phrase)
            work = _blank(work, idx, idx + len(cue) + m.end())

    # filter cues
    m = re.search(r"\swhere\s+(.+)$", work.rstrip())
    if m:
        cmp_filter = _extract_comparison(m.group(1))
        if cmp_filter:
            filters.append(cmp_filter)
            work = _blank(work, m.start(), m.end())
    for cue in (" with ", " having "):
        idx = work.find(cue)
        if idx >= 0:
            m = re.match(r"(.+?)" + _BOUNDARY, work[idx + len(cue) :])
            if m and m.group(1).strip():
                chunk = m.group(1).strip()
                cmp_filter = _extract_comparison(chunk)
                if cmp_filter is None:
                    phrase = _clean_phrase(chunk)
                    if phrase:
                        cmp_filter = FilterSpec(phrase=phrase, comparator="=", literal=True)
                if cmp_filter:
                    filters.append(cmp_filter)
                    work = _blank(work, idx, idx + len(cue) + m.end())
    m = re.search(r"\sin\s+(?:the\s+)?(.+?)" + _BOUNDARY, work)
    if m and m.group(1).strip():
        phrase, extra = _split_modifiers(_clean_phrase(m.group(1)), raw, lexicon)
        filters.extend(extra)
        if phrase:
            caps = {w.lower(): w for w in re.findall(r"\b[A-Z][A-Z0-9]+\b", raw)}
            if phrase in caps:
                filters.append(FilterSpec(phrase=phrase, comparator="=", literal=caps[phrase]))
            else:
                filters.append(FilterSpec(phrase=phrase, comparator="=", literal=phrase))
        work = _blank(work, m.start(), m.end())

    # leftover noun phrase: only schema-flavored text may become an implicit
    # dimension (or measure); anything else stays unrecognized
    leftover = _clean_phrase(re.sub(r"\s+", " ", work).strip())
    if leftover:
        phrase, extra = _split_modifiers(leftover, raw, lexicon)
        filters.extend(extra)
        phrase = " ".join(w for w in phrase.split() if w not in VAGUE_TEMPORAL)
        if phrase:
            known: set[str] = set()
            for bag in lexicon.entries.values():
                known |= bag
            if tokenize(phrase) & known:
                if not dimensions:
                    dimensions.append(phrase)
                elif not measures:
                    measures.append(Measure(agg_fn="sum", target_phrase=phrase))

    if not measures and not dimensions and not filters:
        raise UnparseableUtterance(
            f"no measure, dimension, or filter recognized in {raw!r} (tokens: {sorted(tokenize(raw))})"
        )

    intent = QueryIntent(
        raw_text=raw,
        measures=measures,
        dimensions=dimensions,
        filters=filters,
        time_window=window,
        order=order,
        limit=limit,
    )
    intent.validate()
    return intent


AMBIGUITY_MARGIN = 0.1


def detect_ambiguity(intent: QueryIntent, linked=None) -> list[Clarification]:
    """Clarifications the user must answer before the intent can run.

    Vague temporal wording with no window asks for a date range; near-tied or
    failed bindings ask for an entity or metric choice.
    """
    flags: list[Clarification] = []
    words = set(re.findall(r"[a-z]+", intent.raw_text.lower()))
    if intent.time_window is None and words & VAGUE_TEMPORAL:
        flags.append(
            Clarification(
                slot_id="time_range",
                kind="time_range",
                prompt="Which date range should this cover?",
                candidates=("last 7 days", "last 30 days", "last quarter", "last year"),
            )
        )
    if linked is not None:
        for binding, measure in zip(linked.measure_bindings, intent.measures):
            if binding is None:
                flags.append(
                    Clarification(
                        slot_id=f"metric:{measure.target_phrase}",
                        kind="metric",
                        prompt=f"Which numeric column should '{measure.target_phrase}' measure?",
                        candidates=(),
                    )
                )
        for binding, phrase in list(zip(linked.dimension_bindings, intent.dimensions)) + [
            (b, f.phrase) for b, f in zip(linked.filter_bindings, intent.filters)
        ]:
            if binding is None:
                flags.append(
                    Clarification(
                        slot_id=f"entity:{phrase}",
                        kind="entity",
                        prompt=f"Which schema element does '{phrase}' refer to?",
                        candidates=(),
                    )
                )
            elif binding.alternatives and binding.score - binding.alternatives[0][1] < AMBIGUITY_MARGIN:
                top_two = (binding.element, binding.alternatives[0][0])
                flags.append(
                    Clarification(
                        slot_id=f"entity:{binding.phrase}",
                        kind="entity",
                        prompt=f"'{binding.phrase}' could mean {top_two[0]} or {top_two[1]}; which one?",
                        candidates=top_two,
                    )
                )
    unique: dict[str, Clarification] = {}
    for flag in flags:
        unique.setdefault(flag.slot_id, flag)
    return list(unique.values())


def merge_clarification(intent: QueryIntent, answer: ClarificationAnswer) -> QueryIntent:
    """Apply one clarification answer, removing its flag; other fields unchanged."""
    match = next((f for f in intent.ambiguity_flags if f.slot_id == answer.slot_id), None)
    if match is None:
        raise KeyError(f"unknown clarification slot {answer.slot_id!r}")
    payload = answer.payload
    kind = payload.get("kind")
    merged = replace(
        intent,
        measures=list(intent.measures),
        dimensions=list(intent.dimensions),
        filters=list(intent.filters),
        ambiguity_flags=[f for f in intent.ambiguity_flags if f.slot_id != answer.slot_id],
    )
    if match.kind == "time_range":
        if kind == "absolute":
            from .util import parse_iso_utc

            merged.time_window = AbsoluteWindow(
                start=parse_iso_utc(payload["start"]), end=parse_iso_utc(payload["end"])
            )
        elif kind == "relative":
            merged.time_window = RelativeWindow(int(payload["amount"]), payload["unit"])
        else:
            raise ValueError(f"payload kind {kind!r} incompatible with time_range clarification")
    elif match.kind in ("entity", "metric"):
        if kind not in ("choice", "text"):
            raise ValueError(f"payload kind {kind!r} incompatible with {match.kind} clarification")
        replacement = payload.get("element") if kind == "choice" else payload.get("value")
        if not replacement:
            raise ValueError("clarification answer missing replacement value")
        old_phrase = match.slot_id.split(":", 1)[1]
        merged.measures = [
            Measure(m.agg_fn, replacement) if m.target_phrase == old_phrase else m for m in merged.measures
        ]
        merged.dimensions = [replacement if d == old_phrase else d for d in merged.dimensions]
        merged.filters = [
            FilterSpec(replacement, f.comparator, f.literal) if f.phrase == old_phrase else f
            for f in merged.filters
        ]
    else:
        raise ValueError(f"unknown clarification kind {match.kind!r}")
    merged.validate()
    return merged


def intent_to_dict(intent: QueryIntent) -> dict:
    """JSON-compatible form used by the gateway protocol and session persistence."""
    from .util import iso_utc

    window: dict | None = None
    if isinstance(intent.time_window, AbsoluteWindow):
        window = {"kind": "absolute", "start": iso_utc(intent.time_window.start), "end": iso_utc(intent.time_window.end)}
    elif isinstance(intent.time_window, RelativeWindow):
        window = {"kind": "relative", "amount": intent.time_window.amount, "unit": intent.time_window.unit}
    return {
        "raw_text": intent.raw_text,
        "measures": [{"agg_fn": m.agg_fn, "target_phrase": m.target_phrase} for m in intent.measures],
        "dimensions": list(intent.dimensions),
        "filters": [
            {"phrase": f.phrase, "comparator": f.comparator, "literal": _literal_to_json(f.literal)}
            for f in intent.filters
        ],
        "time_window": window,
        "order": (
            {"key_kind": intent.order.key_kind, "key_index": intent.order.key_index, "direction": intent.order.direction}
            if intent.order
            else None
        ),
        "limit": intent.limit,
        "ambiguity_flags": [
            {"slot_id": c.slot_id, "kind": c.kind, "prompt": c.prompt, "candidates": list(c.candidates)}
            for c in intent.ambiguity_flags
        ],
    }


def _literal_to_json(literal: object) -> object:
    if isinstance(literal, tuple):
        return list(literal)
    return literal


def intent_from_dict(doc: dict) -> QueryIntent:
    """Inverse of intent_to_dict; validates invariants before returning."""
    from .util import parse_iso_utc

    window: TimeWindow = None
    rawwin = doc.get("time_window")
    if rawwin:
        if rawwin.get("kind") == "absolute":
            window = AbsoluteWindow(start=parse_iso_utc(rawwin["start"]), end=parse_iso_utc(rawwin["end"]))
        elif rawwin.get("kind") == "relative":
            window = RelativeWindow(int(rawwin["amount"]), rawwin["unit"])
        else:
            raise ValueError(f"unknown window kind {rawwin.get('kind')!r}")
    order = None
    raworder = doc.get("order")
    if raworder:
        order = OrderSpec(raworder["key_kind"], int(raworder["key_index"]), raworder["direction"])
    intent = QueryIntent(
        raw_text=doc["raw_text"],
        measures=[Measure(m["agg_fn"], m["target_phrase"]) for m in doc.get("measures", [])],
        dimensions=list(doc.get("dimensions", [])),
        filters=[
            FilterSpec(
                f["phrase"],
                f["comparator"],
                tuple(f["literal"]) if isinstance(f["literal"], list) else f["literal"],
            )
            for f in doc.get("filters", [])
        ],
        time_window=window,
        order=order,
        limit=doc.get("limit"),
        ambiguity_flags=[
            Clarification(c["slot_id"], c["kind"], c["prompt"], tuple(c.get("candidates", ())))
            for c in doc.get("ambiguity_flags", [])
        ],
    )
    intent.validate()
    return intent
