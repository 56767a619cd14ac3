"""Statement execution with a read-only guard, result serialization, and caching.

Backends are pluggable: an embedded SQLite engine doubles as the seeded demo
database, a scripted mock lets every downstream module test without a real
server, and a PostgreSQL driver hooks in when available. The executor
re-parses every statement before it can reach a backend; nothing but a single
SELECT ever gets through.
"""

from __future__ import annotations

import json
import logging
import re
import sqlite3
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from .sqlast import SqlText
from .sqlparse import SqlParseError, parse_sql
from .util import fnv1a64, iso_utc, parse_iso_utc

logger = logging.getLogger(__name__)

DEFAULT_ROW_CAP = 10_000
DEFAULT_TIMEOUT_S = 30.0
DEFAULT_TTL_S = 300.0
DEFAULT_CACHE_CAPACITY = 1000


class SafetyViolation(ValueError):
    """Statement refused before reaching any backend."""


class BackendError(RuntimeError):
    """Backend failure with a sanitized message (no credentials, no raw driver text)."""


class ExecutionTimeout(BackendError):
    pass


@dataclass(frozen=True)
class ResultColumn:
    name: str
    type_tag: str


@dataclass(frozen=True)
class ResultSet:
    columns: tuple[ResultColumn, ...]
    rows: tuple[tuple, ...]
    truncated: bool = False
    row_limit_applied: int | None = None

    def __post_init__(self) -> None:
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row arity does not match column count")
        if self.truncated and self.row_limit_applied != len(self.rows):
            raise ValueError("truncated result must carry exactly row_limit_applied rows")


@dataclass(frozen=True)
class ExecutionStats:
    latency_ms: float
    row_count: int
    cache_hit: bool
    backend: str  # live | mock


@dataclass
class CacheEntry:
    key: int
    result: ResultSet
    inserted_at: float
    ttl_s: float


def normalize_statement(sql: str) -> str:
    """Canonical text form: lowercase outside string literals, single spaces,
    no trailing semicolon."""
    out: list[str] = []
    in_string = False
    i = 0
    while i < len(sql):
        ch = sql[i]
        if in_string:
            out.append(ch)
            if ch == "'":
                if i + 1 < len(sql) and sql[i + 1] == "'":
                    out.append("'")
                    i += 2
                    continue
                in_string = False
        elif ch == "'":
            in_string = True
            out.append(ch)
        elif ch.isspace():
            if out and out[-1] != " ":
                out.append(" ")
        else:
            out.append(ch.lower())
        i += 1
    text = "".join(out).strip()
    if text.endswith(";"):
        text = text[:-1].rstrip()
    return text


def normalize_key(sql: str) -> int:
    """Stable 64-bit FNV-1a digest of the normalized statement."""
    return fnv1a64(normalize_statement(sql).encode("utf-8"))


# Backends ----------------------------------------------------------------


class MockBackend:
    """Scripted executor: normalized-statement digest to canned result.

    Records every statement it receives, so safety tests can assert nothing
    unexpected arrived. Delays are either real sleeps or, in virtual mode,
    reported latencies for deterministic benchmarking.
    """

    kind = "mock"

    def __init__(
        self,
        scripted: dict[int, ResultSet] | None = None,
        default_result: ResultSet | None = None,
        delay_ms: float = 0.0,
        virtual_delay: bool = False,
        failures: dict[int, str] | None = None,
    ):
        self.scripted = dict(scripted or {})
        self.default_result = default_result
        self.delay_ms = delay_ms
        self.virtual_delay = virtual_delay
        self.failures = dict(failures or {})
        self.received: list[str] = []
        self._lock = threading.Lock()

    def script(self, sql: str, result: ResultSet) -> None:
        self.scripted[normalize_key(sql)] = result

    def fail_on(self, sql: str, message: str) -> None:
        self.failures[normalize_key(sql)] = message

    def run(self, sql: str, timeout_s: float) -> tuple[ResultSet, float | None]:
        with self._lock:
            self.received.append(sql)
        key = normalize_key(sql)
        if self.delay_ms and not self.virtual_delay:
            if self.delay_ms / 1000.0 > timeout_s:
                raise ExecutionTimeout(f"backend exceeded {timeout_s:.1f}s timeout")
            time.sleep(self.delay_ms / 1000.0)
        if key in self.failures:
            raise BackendError(self.failures[key])
        result = self.scripted.get(key, self.default_result)
        if result is None:
            raise BackendError("no scripted result for statement")
        return result, (self.delay_ms if self.virtual_delay else None)


_TYPED_LITERAL = re.compile(r"\b(?:TIMESTAMP|DATE)\s+('(?:[^']|'')*')", re.IGNORECASE)
_DATE_TRUNC = re.compile(
    r"DATE_TRUNC\(\s*'(day|week|month|year)'\s*,\s*([A-Za-z_][\w]*\.[A-Za-z_][\w]*)\s*\)",
    re.IGNORECASE,
)

_SQLITE_TRUNC_FMT = {
    "day": "%Y-%m-%d",
    "week": "%Y-%W",
    "month": "%Y-%m",
    "year": "%Y",
}


def _sqlite_dialect(sql: str) -> str:
    """Adapt the canonical PostgreSQL rendering to the embedded engine.

    SQLite stores timestamps as ISO-8601 text, so typed literals lose their
    prefix and DATE_TRUNC becomes the equivalent STRFTIME bucket.
    """
    adapted = _TYPED_LITERAL.sub(r"\1", sql)
    adapted = _DATE_TRUNC.sub(
        lambda m: f"STRFTIME('{_SQLITE_TRUNC_FMT[m.group(1).lower()]}', {m.group(2)})", adapted
    )
    return adapted


def _infer_type_tag(values: list) -> str:
    for v in values:
        if v is None:
            continue
        if isinstance(v, bool):
            return "boolean"
        if isinstance(v, int):
            return "integer"
        if isinstance(v, float):
            return "float"
        if isinstance(v, (datetime,)):
            return "timestamp"
        if isinstance(v, date):
            return "date"
        if isinstance(v, str):
            return "text"
        return "other"
    return "other"


class SqliteBackend:
    """Embedded SQL engine; serves as the bundled live-style backend for tests
    and the demo configuration."""

    kind = "live"

    def __init__(self, connection: sqlite3.Connection):
        self.connection = connection
        self._lock = threading.Lock()

    def run(self, sql: str, timeout_s: float) -> tuple[ResultSet, float | None]:
        adapted = _sqlite_dialect(sql)
        deadline = time.monotonic() + timeout_s

        def guard():
            return 1 if time.monotonic() > deadline else 0

        with self._lock:
            self.connection.set_progress_handler(guard, 10_000)
            try:
                cursor = self.connection.execute(adapted)
                rows = cursor.fetchall()
            except sqlite3.OperationalError as exc:
                if "interrupted" in str(exc):
                    raise ExecutionTimeout(f"statement exceeded {timeout_s:.1f}s timeout") from exc
                raise BackendError(f"execution failed: {exc}") from exc
            except sqlite3.Error as exc:
                raise BackendError(f"execution failed: {exc}") from exc
            finally:
                self.connection.set_progress_handler(None, 0)
        names = [d[0] for d in cursor.description] if cursor.description else []
        columns = tuple(
            ResultColumn(name=name, type_tag=_infer_type_tag([row[i] for row in rows]))
            for i, name in enumerate(names)
        )
        return ResultSet(columns=columns, rows=tuple(tuple(r) for r in rows)), None


class PostgresBackend:
    """Live PostgreSQL backend; requires the optional psycopg2 driver."""

    kind = "live"

    def __init__(self, dsn: str, connect=None):
        if connect is None:
            try:
                import psycopg2  # type: ignore

                connect = psycopg2.connect
            except ImportError as exc:
                raise BackendError("PostgreSQL execution requires psycopg2 (install extra 'postgres')") from exc
        self._dsn = dsn
        self._connect = connect

    def run(self, sql: str, timeout_s: float) -> tuple[ResultSet, float | None]:
        try:
            conn = self._connect(self._dsn, options=f"-c statement_timeout={int(timeout_s * 1000)}")
        except Exception as exc:
            raise BackendError(f"could not connect to database: {type(exc).__name__}") from exc
        try:
            cur = conn.cursor()
            cur.execute(sql)
            rows = cur.fetchall()
            names = [d[0] for d in cur.description] if cur.description else []
        except Exception as exc:
            raise BackendError(f"execution failed: {type(exc).__name__}") from exc
        finally:
            conn.close()
        columns = tuple(
            ResultColumn(name=name, type_tag=_infer_type_tag([row[i] for row in rows]))
            for i, name in enumerate(names)
        )
        return ResultSet(columns=columns, rows=tuple(tuple(r) for r in rows)), None


# Execution ---------------------------------------------------------------


def execute(
    sql: SqlText | str,
    backend,
    row_cap: int = DEFAULT_ROW_CAP,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> tuple[ResultSet, ExecutionStats]:
    """Run one SELECT against a backend with the read-only guard in front.

    The guard re-parses the statement regardless of where it came from;
    anything that is not a single SELECT in the supported grammar never
    reaches the backend.
    """
    text = sql.text if isinstance(sql, SqlText) else sql
    try:
        parse_sql(text)
    except SqlParseError as exc:
        raise SafetyViolation(f"statement refused: {exc}") from exc
    started = time.perf_counter()
    result, reported_ms = backend.run(text, timeout_s)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    if len(result.rows) > row_cap:
        result = ResultSet(
            columns=result.columns,
            rows=result.rows[:row_cap],
            truncated=True,
            row_limit_applied=row_cap,
        )
    stats = ExecutionStats(
        latency_ms=reported_ms if reported_ms is not None else elapsed_ms,
        row_count=len(result.rows),
        cache_hit=False,
        backend=backend.kind,
    )
    return result, stats


class QueryCache:
    """In-process result cache keyed by normalized statement digest.

    TTL-expired entries are never returned; beyond capacity the least recently
    used entry is evicted. An optional directory persists one serialized
    document per entry. Also keeps the (digest, latency) history the bench
    harness reads.
    """

    def __init__(
        self,
        ttl_s: float = DEFAULT_TTL_S,
        capacity: int = DEFAULT_CACHE_CAPACITY,
        directory: str | Path | None = None,
        clock=time.monotonic,
    ):
        self.ttl_s = ttl_s
        self.capacity = capacity
        self.directory = Path(directory) if directory else None
        self.clock = clock
        self._entries: OrderedDict[int, CacheEntry] = OrderedDict()
        self._lock = threading.Lock()
        self.latency_history: list[tuple[int, float]] = []
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    def get(self, key: int) -> ResultSet | None:
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                return self._load_file(key)
            if self.clock() - entry.inserted_at > entry.ttl_s:
                del self._entries[key]
                self._drop_file(key)
                return None
            self._entries.move_to_end(key)
            return entry.result

    def put(self, key: int, result: ResultSet, ttl_s: float | None = None) -> None:
        with self._lock:
            self._entries[key] = CacheEntry(
                key=key, result=result, inserted_at=self.clock(), ttl_s=ttl_s or self.ttl_s
            )
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                evicted, _ = self._entries.popitem(last=False)
                self._drop_file(evicted)
            self._store_file(key, result)

    def record_latency(self, key: int, latency_ms: float) -> None:
        with self._lock:
            self.latency_history.append((key, latency_ms))

    def _file_for(self, key: int) -> Path | None:
        if self.directory is None:
            return None
        return self.directory / f"{key:016x}.result"

    def _store_file(self, key: int, result: ResultSet) -> None:
        path = self._file_for(key)
        if path is None:
            return
        try:
            payload = {"inserted_at": self.clock(), "ttl_s": self.ttl_s, "result": serialize_result(result)}
            path.write_text(json.dumps(payload), encoding="utf-8")
        except OSError as exc:
            logger.warning("cache file write failed for %016x: %s", key, exc)

    def _load_file(self, key: int) -> ResultSet | None:
        path = self._file_for(key)
        if path is None or not path.exists():
            return None
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            if self.clock() - payload["inserted_at"] > payload["ttl_s"]:
                path.unlink(missing_ok=True)
                return None
            return deserialize_result(payload["result"])
        except (OSError, ValueError, KeyError) as exc:
            logger.warning("cache file read failed for %016x: %s", key, exc)
            return None

    def _drop_file(self, key: int) -> None:
        path = self._file_for(key)
        if path is not None:
            try:
                path.unlink(missing_ok=True)
            except OSError as exc:
                logger.warning("cache file delete failed for %016x: %s", key, exc)


def cached_execute(
    sql: SqlText | str,
    backend,
    cache: QueryCache,
    ttl_s: float | None = None,
    row_cap: int = DEFAULT_ROW_CAP,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> tuple[ResultSet, ExecutionStats]:
    """Execute through the cache: hits skip the backend entirely."""
    text = sql.text if isinstance(sql, SqlText) else sql
    key = normalize_key(text)
    started = time.perf_counter()
    try:
        hit = cache.get(key)
    except Exception as exc:  # cache trouble degrades to uncached execution
        logger.warning("cache lookup failed (%s); executing uncached", exc)
        hit = None
    if hit is not None:
        lookup_ms = (time.perf_counter() - started) * 1000.0
        stats = ExecutionStats(
            latency_ms=lookup_ms, row_count=len(hit.rows), cache_hit=True, backend=backend.kind
        )
        return hit, stats
    result, stats = execute(sql, backend, row_cap=row_cap, timeout_s=timeout_s)
    try:
        cache.put(key, result, ttl_s=ttl_s)
        cache.record_latency(key, stats.latency_ms)
    except Exception as exc:
        logger.warning("cache store failed (%s); result returned uncached", exc)
    return result, stats


# Serialization -----------------------------------------------------------


def _value_to_json(value, type_tag: str):
    if value is None:
        return None
    if type_tag == "timestamp" and isinstance(value, datetime):
        return iso_utc(value)
    if type_tag == "date" and isinstance(value, date):
        return value.isoformat()
    if isinstance(value, datetime):
        return iso_utc(value)
    if isinstance(value, date):
        return value.isoformat()
    return value


def _value_from_json(value, type_tag: str):
    if value is None:
        return None
    if type_tag == "timestamp":
        return parse_iso_utc(value)
    if type_tag == "date":
        return datetime.strptime(value, "%Y-%m-%d").date()
    return value


def serialize_result(rs: ResultSet) -> dict:
    """Canonical row-major document; timestamps in ISO-8601 UTC."""
    return {
        "columns": [{"name": c.name, "type": c.type_tag} for c in rs.columns],
        "rows": [
            [_value_to_json(v, c.type_tag) for v, c in zip(row, rs.columns)] for row in rs.rows
        ],
        "truncated": rs.truncated,
        **({"row_limit_applied": rs.row_limit_applied} if rs.truncated else {}),
    }


def deserialize_result(doc: dict) -> ResultSet:
    columns = tuple(ResultColumn(name=c["name"], type_tag=c["type"]) for c in doc["columns"])
    rows = tuple(
        tuple(_value_from_json(v, c.type_tag) for v, c in zip(row, columns)) for row in doc["rows"]
    )
    return ResultSet(
        columns=columns,
        rows=rows,
        truncated=doc.get("truncated", False),
        row_limit_applied=doc.get("row_limit_applied"),
    )


def result_to_json(rs: ResultSet) -> str:
    return json.dumps(serialize_result(rs), sort_keys=True)
