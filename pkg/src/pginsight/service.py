"""HTTP service exposing the pipeline: query, clarify, report, schema, analyze.

Clarification state lives server side in an expiring session store; session
ids carry 128 bits of entropy. Error payloads are sanitized ApiError shapes;
raw backend text and connection credentials never leave the process.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .catalog import export_catalog
from .executor import BackendError, ExecutionTimeout, SafetyViolation, serialize_result
from .intent import (
    Clarification,
    ClarificationAnswer,
    QueryIntent,
    UnparseableUtterance,
    detect_ambiguity,
    intent_from_dict,
    intent_to_dict,
    merge_clarification,
)
from .pipeline import ClarificationsPending, Pipeline, QueryOutcome
from .questions import UnsatisfiableQuota
from .report import ReportConfig, document_to_dict, emit_markdown, generate_report
from .util import iso_utc

logger = logging.getLogger(__name__)

STATUS_BY_CODE = {
    "bad_request": 400,
    "not_found": 404,
    "unprocessable": 422,
    "backend_error": 502,
    "timeout": 504,
}


class ApiError(Exception):
    def __init__(self, code: str, message: str):
        assert code in STATUS_BY_CODE
        super().__init__(message)
        self.code = code
        self.message = message

    def payload(self) -> dict:
        return {"error": {"code": self.code, "message": self.message}}


@dataclass
class Session:
    id: str
    intent: QueryIntent
    created_at: datetime
    ttl_s: float


class SessionStore:
    """Expiring in-memory clarification sessions; safe under concurrent access."""

    def __init__(self, ttl_s: float, clock):
        self.ttl_s = ttl_s
        self.clock = clock
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def open(self, intent: QueryIntent) -> Session:
        session = Session(
            id=secrets.token_hex(16),
            intent=intent,
            created_at=self.clock(),
            ttl_s=self.ttl_s,
        )
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                return None
            age = (self.clock() - session.created_at).total_seconds()
            if age > session.ttl_s:
                del self._sessions[session_id]
                return None
            return session

    def consume(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)


def _clarification_payload(session: Session, clarifications: list[Clarification]) -> dict:
    return {
        "kind": "clarification_needed",
        "session_id": session.id,
        "clarifications": [
            {
                "slot_id": c.slot_id,
                "kind": c.kind,
                "prompt": c.prompt,
                "candidates": list(c.candidates),
            }
            for c in clarifications
        ],
    }


def _result_payload(outcome: QueryOutcome) -> dict:
    return {
        "kind": "result",
        "sql": outcome.sql.text,
        "result": serialize_result(outcome.result),
        "stats": {
            "latency_ms": outcome.stats.latency_ms,
            "row_count": outcome.stats.row_count,
            "cache_hit": outcome.stats.cache_hit,
            "backend": outcome.stats.backend,
        },
        "advisor": {
            "rewrites": [
                {"rule": s.rule_name, "description": s.description} for s in outcome.trace.steps
            ],
            "recommendations": [
                {
                    "table": r.table,
                    "columns": list(r.columns),
                    "reason": r.reason,
                    "estimated_benefit": r.estimated_benefit,
                }
                for r in outcome.recommendations
            ],
            "cost": {
                "estimated_rows": outcome.cost.estimated_rows,
                "estimated_cost_units": outcome.cost.estimated_cost_units,
            },
        },
        "intent": intent_to_dict(outcome.intent) if outcome.intent else None,
    }


@dataclass
class ServiceState:
    pipeline: Pipeline
    sessions: SessionStore
    report_config: ReportConfig
    reports: dict[str, dict] = field(default_factory=dict)
    reports_lock: threading.Lock = field(default_factory=threading.Lock)


def create_app(
    pipeline: Pipeline,
    session_ttl_s: float = 600.0,
    report_config: ReportConfig | None = None,
) -> FastAPI:
    app = FastAPI(title="pginsight", version="0.1.0")
    state = ServiceState(
        pipeline=pipeline,
        sessions=SessionStore(ttl_s=session_ttl_s, clock=pipeline.clock),
        report_config=report_config or ReportConfig(),
    )
    app.state.service = state

    @app.exception_handler(ApiError)
    async def api_error_handler(_request: Request, exc: ApiError):
        return JSONResponse(status_code=STATUS_BY_CODE[exc.code], content=exc.payload())

    def run_intent_or_clarify(intent: QueryIntent) -> dict:
        from .sqlbuild import BuildError

        try:
            outcome = state.pipeline.run_intent(intent)
            return _result_payload(outcome)
        except ClarificationsPending as pending:
            session = state.sessions.open(pending.intent)
            return _clarification_payload(session, pending.clarifications)
        except (SafetyViolation, BuildError) as exc:
            raise ApiError("unprocessable", str(exc)) from exc
        except ExecutionTimeout as exc:
            raise ApiError("timeout", "statement timed out") from exc
        except BackendError as exc:
            raise ApiError("backend_error", str(exc)) from exc

    @app.post("/api/query")
    async def handle_query(request: Request):
        body = await _json_body(request)
        utterance = (body.get("utterance") or "").strip()
        if not utterance:
            raise ApiError("bad_request", "utterance must be non-empty")
        try:
            intent = state.pipeline.parse(utterance)
        except UnparseableUtterance as exc:
            raise ApiError("unprocessable", str(exc)) from exc
        return run_intent_or_clarify(intent)

    @app.post("/api/clarify")
    async def handle_clarify(request: Request):
        body = await _json_body(request)
        session_id = body.get("session_id") or ""
        answers = body.get("answers") or []
        session = state.sessions.get(session_id)
        if session is None:
            raise ApiError("not_found", "unknown or expired session")
        intent = session.intent
        try:
            for raw in answers:
                answer = ClarificationAnswer(slot_id=raw.get("slot_id", ""), payload=raw.get("payload") or {})
                intent = merge_clarification(intent, answer)
        except KeyError as exc:
            raise ApiError("unprocessable", f"unknown clarification slot: {exc}") from exc
        except ValueError as exc:
            raise ApiError("unprocessable", str(exc)) from exc
        if intent.ambiguity_flags:
            session.intent = intent
            return _clarification_payload(session, intent.ambiguity_flags)
        state.sessions.consume(session_id)
        linked = state.pipeline.link(intent)
        remaining = detect_ambiguity(intent, linked)
        if remaining:
            intent.ambiguity_flags = remaining
            reopened = state.sessions.open(intent)
            return _clarification_payload(reopened, remaining)
        return run_intent_or_clarify(intent)

    @app.post("/api/report")
    async def handle_report(request: Request):
        body = await _json_body(request)
        seed = body.get("seed")
        config = state.report_config
        if seed is not None:
            from dataclasses import replace

            config = replace(config, seed=int(seed))
        try:
            doc = generate_report(state.pipeline, config)
        except UnsatisfiableQuota as exc:
            raise ApiError("unprocessable", str(exc)) from exc
        markdown = emit_markdown(doc)
        document = document_to_dict(doc)
        report_id = secrets.token_hex(8)
        with state.reports_lock:
            state.reports[report_id] = {"markdown": markdown, "document": document}
        return {"report_id": report_id, "markdown": markdown, "document": document}

    @app.get("/api/report/{report_id}")
    async def get_report(report_id: str):
        with state.reports_lock:
            stored = state.reports.get(report_id)
        if stored is None:
            raise ApiError("not_found", f"no report {report_id!r}")
        return {"report_id": report_id, **stored}

    @app.get("/api/schema")
    async def handle_schema():
        return json.loads(export_catalog(state.pipeline.catalog))

    @app.post("/api/analyze")
    async def handle_analyze(request: Request):
        body = await _json_body(request)
        return analyze(state.pipeline, body)

    return app


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception as exc:
        raise ApiError("bad_request", "request body must be a JSON object") from exc
    if not isinstance(body, dict):
        raise ApiError("bad_request", "request body must be a JSON object")
    return body


def analyze(pipeline: Pipeline, body: dict) -> dict:
    """Analytics over an inline series or the result of a guarded SELECT."""
    from .analytics import detect_trend, fit_arima, forecast, series_from_rows, zscore_outliers
    from .sqlparse import SqlParseError, parse_sql

    method = body.get("method")
    if method not in ("zscore", "trend", "forecast"):
        raise ApiError("bad_request", f"unknown analyze method {method!r}")
    params = body.get("params") or {}
    if body.get("series") is not None:
        rows = [(p[0], p[1]) for p in body["series"]]
    elif body.get("sql"):
        try:
            ast = parse_sql(body["sql"])
        except SqlParseError as exc:
            raise ApiError("unprocessable", f"sql rejected: {exc}") from exc
        try:
            outcome = pipeline.run_ast(ast)
        except BackendError as exc:
            raise ApiError("backend_error", str(exc)) from exc
        rows = list(outcome.result.rows)
    else:
        raise ApiError("bad_request", "provide either 'series' or 'sql'")
    try:
        series = series_from_rows(rows, grain=body.get("grain"))
    except Exception as exc:
        raise ApiError("unprocessable", f"rows do not form a uniform series: {exc}") from exc
    try:
        if method == "zscore":
            hits = zscore_outliers(series, k=float(params.get("k", 3.0)))
            return {
                "method": "zscore",
                "anomalies": [
                    {
                        "index": a.index,
                        "timestamp": iso_utc(a.timestamp),
                        "value": a.value,
                        "score": a.score,
                    }
                    for a in hits
                ],
            }
        if method == "trend":
            result = detect_trend(series)
            return {"method": "trend", "slope": result.slope, "class": result.trend_class}
        model = fit_arima(series, p=int(params.get("p", 1)), d=int(params.get("d", 0)))
        fc = forecast(model, series, horizon=int(params.get("h", 5)))
        return {
            "method": "forecast",
            "model": {"p": model.p, "d": model.d, "phi": list(model.phi), "sigma2": model.sigma2},
            "points": [
                {"timestamp": iso_utc(t), "mean": m, "lower95": lo, "upper95": hi}
                for t, m, lo, hi in fc.points
            ],
        }
    except ValueError as exc:
        raise ApiError("unprocessable", str(exc)) from exc
    except Exception as exc:
        raise ApiError("unprocessable", str(exc)) from exc
