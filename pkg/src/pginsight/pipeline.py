"""End-to-end facade: one object wiring catalog, lexicon, backend, cache, and clock.

The service, the CLI, the report generator, and the bench harness all drive
this facade so behavior cannot drift between entry points.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable

from .advisor import (
    CostEstimate,
    IndexRecommendation,
    RewriteTrace,
    estimate_cost,
    optimize_ast,
    recommend_indexes,
)
from .catalog import SchemaCatalog, SchemaLexicon, build_lexicon
from .executor import (
    DEFAULT_ROW_CAP,
    DEFAULT_TTL_S,
    ExecutionStats,
    QueryCache,
    ResultSet,
    cached_execute,
)
from .intent import Clarification, QueryIntent, detect_ambiguity, parse_utterance
from .linker import LinkedIntent, link
from .questions import QuestionSpec, question_to_intent
from .sqlast import SelectAst, SqlText, render_sql
from .sqlbuild import build_ast


@dataclass
class QueryOutcome:
    sql: SqlText
    ast: SelectAst
    trace: RewriteTrace
    result: ResultSet
    stats: ExecutionStats
    recommendations: list[IndexRecommendation]
    cost: CostEstimate
    intent: QueryIntent | None = None


@dataclass
class Pipeline:
    catalog: SchemaCatalog
    backend: object
    lexicon: SchemaLexicon | None = None
    synonyms: dict[str, list[str]] = field(default_factory=dict)
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc)
    cache: QueryCache | None = None
    cache_ttl_s: float = DEFAULT_TTL_S
    row_cap: int = DEFAULT_ROW_CAP
    timeout_s: float = 30.0
    gateway: object | None = None
    optimize: bool = True

    def __post_init__(self) -> None:
        if self.lexicon is None:
            self.lexicon = build_lexicon(self.catalog, self.synonyms)
        if self.cache is None:
            self.cache = QueryCache(ttl_s=self.cache_ttl_s)

    # stage helpers ---------------------------------------------------------

    def parse(self, text: str) -> QueryIntent:
        if self.gateway is not None:
            from .gateway import gateway_parse

            return gateway_parse(text, self.catalog, self.lexicon, self.gateway, clock=self.clock)
        return parse_utterance(text, self.lexicon, clock=self.clock)

    def link(self, intent: QueryIntent) -> LinkedIntent:
        return link(intent, self.catalog, self.lexicon)

    def clarifications(self, intent: QueryIntent, linked: LinkedIntent) -> list[Clarification]:
        return detect_ambiguity(intent, linked)

    def build(self, linked: LinkedIntent) -> SelectAst:
        return build_ast(linked, self.catalog, self.clock())

    def run_ast(self, ast: SelectAst, intent: QueryIntent | None = None) -> QueryOutcome:
        if self.optimize:
            optimized, trace = optimize_ast(ast, self.catalog)
        else:
            optimized, trace = ast, RewriteTrace()
        sql = render_sql(optimized, self.catalog)
        result, stats = cached_execute(
            sql,
            self.backend,
            self.cache,
            ttl_s=self.cache_ttl_s,
            row_cap=self.row_cap,
            timeout_s=self.timeout_s,
        )
        return QueryOutcome(
            sql=sql,
            ast=optimized,
            trace=trace,
            result=result,
            stats=stats,
            recommendations=recommend_indexes(optimized, self.catalog),
            cost=estimate_cost(optimized, self.catalog),
            intent=intent,
        )

    # entry points ----------------------------------------------------------

    def run_intent(self, intent: QueryIntent) -> QueryOutcome:
        linked = self.link(intent)
        pending = self.clarifications(intent, linked)
        if pending:
            intent.ambiguity_flags = pending
            raise ClarificationsPending(intent, pending)
        ast = self.build(linked)
        return self.run_ast(ast, intent=intent)

    def answer(self, utterance: str) -> QueryOutcome:
        """Full path for an unambiguous utterance; raises ClarificationsPending otherwise."""
        return self.run_intent(self.parse(utterance))

    def resolve_question(self, spec: QuestionSpec) -> QueryOutcome:
        intent = question_to_intent(spec)
        linked = self.link(intent)
        ast = self.build(linked)
        return self.run_ast(ast, intent=intent)


class ClarificationsPending(Exception):
    """The intent needs user input before it can execute."""

    def __init__(self, intent: QueryIntent, clarifications: list[Clarification]):
        super().__init__(f"{len(clarifications)} clarification(s) needed")
        self.intent = intent
        self.clarifications = clarifications


def fixture_pipeline(**overrides) -> Pipeline:
    """Pipeline over the bundled demo database; used by the CLI demo mode and tests."""
    from .executor import SqliteBackend
    from .fixtures import FIXTURE_CLOCK, fixture_catalog, fixture_connection, fixture_synonyms

    defaults = dict(
        catalog=fixture_catalog(),
        backend=SqliteBackend(fixture_connection()),
        synonyms=fixture_synonyms(),
        clock=lambda: FIXTURE_CLOCK,
    )
    defaults.update(overrides)
    return Pipeline(**defaults)


def pipeline_from_url(url: str, **overrides) -> Pipeline:
    """Build a pipeline from a connection URL.

    fixture://          in-memory seeded demo database
    sqlite:///path      file-backed SQLite database (introspected)
    postgresql://...    live PostgreSQL (requires psycopg2)
    """
    if url.startswith("fixture:"):
        return fixture_pipeline(**overrides)
    if url.startswith("sqlite:"):
        from .catalog import introspect
        from .executor import SqliteBackend

        path = url.split("sqlite:", 1)[1].lstrip("/")
        conn = sqlite3.connect(path, check_same_thread=False)
        catalog = introspect(conn)
        return Pipeline(catalog=catalog, backend=SqliteBackend(conn), **overrides)
    if url.startswith(("postgresql:", "postgres:")):
        from .catalog import introspect
        from .executor import PostgresBackend

        catalog = introspect(url)
        return Pipeline(catalog=catalog, backend=PostgresBackend(url), **overrides)
    raise ValueError(f"unsupported connection url {url!r}")
