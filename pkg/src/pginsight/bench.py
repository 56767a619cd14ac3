"""Reproducible measurement harness: latency by query category, SQL syntax
accuracy over a corpus, and schema-linking precision.

The harness reproduces measurement procedure and table layout; absolute
numbers depend entirely on the backend and corpus supplied. Scripted
virtual-delay mocks exist precisely so the layout and plumbing can be pinned
byte-for-byte in tests.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .executor import MockBackend, ResultColumn, ResultSet, execute
from .intent import detect_ambiguity
from .linker import linking_precision
from .pipeline import Pipeline
from .sqlparse import SqlParseError, parse_sql
from .util import format_number

CATEGORIES = ("simple_select", "join_aggregation", "nested_subquery")

CATEGORY_LABELS = {
    "simple_select": "Simple SELECT",
    "join_aggregation": "JOIN + Aggregation",
    "nested_subquery": "Nested Subquery",
}

DEFAULT_MOCK_DELAYS = {"simple_select": 120.0, "join_aggregation": 450.0, "nested_subquery": 600.0}


@dataclass(frozen=True)
class BenchCase:
    utterance: str
    category: str
    gold_sql: str | None = None
    gold_bindings: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown bench category {self.category!r}")


@dataclass
class BenchReport:
    latency_table: dict[str, dict[str, float | None]]
    syntax_accuracy: float | None = None
    linking_precision: float | None = None
    failures: list[str] = field(default_factory=list)

    def to_markdown(self) -> str:
        lines = ["| Query Type | Pipeline (ms) | Reference (ms) |", "| --- | --- | --- |"]
        for category in CATEGORIES:
            entry = self.latency_table.get(category)
            if entry is None:
                continue
            pipeline_ms = format_number(entry["pipeline_ms"]) if entry["pipeline_ms"] is not None else "-"
            reference_ms = (
                format_number(entry["reference_ms"]) if entry.get("reference_ms") is not None else "-"
            )
            lines.append(f"| {CATEGORY_LABELS[category]} | {pipeline_ms} | {reference_ms} |")
        lines.append("")
        if self.syntax_accuracy is not None:
            lines.append(f"Syntax accuracy: {self.syntax_accuracy:.3f}")
        if self.linking_precision is not None:
            lines.append(f"Linking precision: {self.linking_precision:.3f}")
        if self.failures:
            lines.append(f"Failures: {len(self.failures)}")
            for failure in self.failures:
                lines.append(f"  - {failure}")
        lines.append(
            "Note: timings reflect this environment and corpus; published headline "
            "numbers from other systems are not reproducible here and are reported "
            "only as operator-supplied reference values."
        )
        return "\n".join(lines) + "\n"


def load_corpus(text: str) -> list[BenchCase]:
    cases = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        raw = json.loads(line)
        cases.append(
            BenchCase(
                utterance=raw["utterance"],
                category=raw["category"],
                gold_sql=raw.get("gold_sql"),
                gold_bindings=tuple((p, e) for p, e in raw.get("gold_bindings", [])),
            )
        )
    if not cases:
        raise ValueError("bench corpus is empty")
    return cases


def default_corpus_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("pginsight.data").joinpath("bench_corpus.jsonl")))


def _render_case_sql(pipeline: Pipeline, case: BenchCase) -> str:
    intent = pipeline.parse(case.utterance)
    linked = pipeline.link(intent)
    pending = detect_ambiguity(intent, linked)
    if pending:
        raise ValueError(f"utterance needs clarification: {[c.slot_id for c in pending]}")
    ast = pipeline.build(linked)
    from .advisor import optimize_ast
    from .sqlast import render_sql

    optimized, _ = optimize_ast(ast, pipeline.catalog)
    return render_sql(optimized, pipeline.catalog).text


def run_syntax_accuracy(
    corpus: list[BenchCase],
    pipeline: Pipeline,
    generator: Callable[[BenchCase], str] | None = None,
) -> tuple[float, list[str]]:
    """A case passes iff its SQL parses and executes without a backend error.

    `generator` overrides the pipeline's SQL generation path; the harness's
    own accounting is tested by injecting deliberately broken generators.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    failures: list[str] = []
    for case in corpus:
        try:
            sql = generator(case) if generator is not None else _render_case_sql(pipeline, case)
            parse_sql(sql)
            execute(sql, pipeline.backend, row_cap=pipeline.row_cap, timeout_s=pipeline.timeout_s)
        except Exception as exc:
            failures.append(f"{case.utterance!r}: {exc}")
    accuracy = (len(corpus) - len(failures)) / len(corpus)
    return accuracy, failures


def run_latency(
    corpus: list[BenchCase],
    pipeline: Pipeline,
    repetitions: int = 3,
    live: bool = False,
    mock_delays: dict[str, float] | None = None,
) -> dict[str, dict[str, float | None]]:
    """Median wall-clock per category for the full pipeline path.

    Default mode swaps in a virtual-delay scripted mock per category, which
    reports its configured latency exactly; --live measures the configured
    backend instead.
    """
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3")
    delays = mock_delays or DEFAULT_MOCK_DELAYS
    table: dict[str, dict[str, float | None]] = {}
    empty = ResultSet(columns=(ResultColumn("value", "integer"),), rows=((1,),))
    for category in CATEGORIES:
        cases = [c for c in corpus if c.category == category]
        if not cases:
            continue
        samples: list[float] = []
        for case in cases:
            try:
                sql = _render_case_sql(pipeline, case)
            except Exception:
                continue
            backend = (
                pipeline.backend
                if live
                else MockBackend(default_result=empty, delay_ms=delays[category], virtual_delay=True)
            )
            for _ in range(repetitions):
                _, stats = execute(sql, backend, row_cap=pipeline.row_cap, timeout_s=pipeline.timeout_s)
                samples.append(stats.latency_ms)
        table[category] = {
            "pipeline_ms": statistics.median(samples) if samples else None,
            "reference_ms": None,
        }
    return table


def run_linking_precision(corpus: list[BenchCase], pipeline: Pipeline) -> float:
    """Micro-averaged precision over every case's gold bindings."""
    labeled = [c for c in corpus if c.gold_bindings]
    if not labeled:
        raise ValueError("corpus carries no gold bindings")
    total = 0
    correct = 0.0
    for case in labeled:
        intent = pipeline.parse(case.utterance)
        linked = pipeline.link(intent)
        predicted = [
            b
            for b in (*linked.measure_bindings, *linked.dimension_bindings, *linked.filter_bindings)
            if b is not None and any(b.phrase == phrase for phrase, _ in case.gold_bindings)
        ]
        fraction = linking_precision(predicted, list(case.gold_bindings))
        total += len(case.gold_bindings)
        correct += fraction * len(case.gold_bindings)
    return correct / total


def run_bench(
    pipeline: Pipeline,
    corpus: list[BenchCase],
    repetitions: int = 3,
    live_latency: bool = False,
    reference: dict[str, float] | None = None,
) -> BenchReport:
    accuracy, failures = run_syntax_accuracy(corpus, pipeline)
    latency = run_latency(corpus, pipeline, repetitions=repetitions, live=live_latency)
    if reference:
        for category, value in reference.items():
            if category in latency:
                latency[category]["reference_ms"] = float(value)
    precision = None
    if any(c.gold_bindings for c in corpus):
        precision = run_linking_precision(corpus, pipeline)
    return BenchReport(
        latency_table=latency,
        syntax_accuracy=accuracy,
        linking_precision=precision,
        failures=failures,
    )
