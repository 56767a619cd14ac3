"""Command-line interface mirroring the HTTP API.

Subcommands: query, clarify, report, analyze, schema, bench, serve. Pending
clarification sessions persist to a state file so `query` and `clarify` work
across separate invocations. The default connection is the bundled demo
database (fixture://).
"""

from __future__ import annotations

import json
import secrets
import sys
from pathlib import Path

import click

from .catalog import export_catalog
from .config import ServiceConfig
from .executor import serialize_result
from .intent import ClarificationAnswer, intent_from_dict, intent_to_dict, merge_clarification
from .pipeline import ClarificationsPending, Pipeline, pipeline_from_url
from .util import iso_utc

STATE_DIR = Path(".pgi")
SESSIONS_FILE = "sessions.json"


def _build_pipeline(database_url: str | None, cache_ttl: float | None, row_cap: int | None) -> Pipeline:
    config = ServiceConfig.from_env(
        database_url=database_url,
        cache_ttl_s=cache_ttl,
        row_cap=row_cap,
    )
    overrides = {}
    if config.gateway_url:
        from .gateway import HttpGateway

        overrides["gateway"] = HttpGateway(config.gateway_url, config.gateway_key)
    return pipeline_from_url(
        config.database_url,
        cache_ttl_s=config.cache_ttl_s,
        row_cap=config.row_cap,
        **overrides,
    )


def _load_sessions(state_dir: Path) -> dict:
    path = state_dir / SESSIONS_FILE
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return {}


def _store_sessions(state_dir: Path, sessions: dict) -> None:
    state_dir.mkdir(parents=True, exist_ok=True)
    (state_dir / SESSIONS_FILE).write_text(json.dumps(sessions, indent=2), encoding="utf-8")


def _print_result(outcome, as_json: bool) -> None:
    if as_json:
        click.echo(
            json.dumps(
                {
                    "sql": outcome.sql.text,
                    "result": serialize_result(outcome.result),
                    "stats": {
                        "latency_ms": outcome.stats.latency_ms,
                        "cache_hit": outcome.stats.cache_hit,
                        "backend": outcome.stats.backend,
                    },
                },
                indent=2,
            )
        )
        return
    click.echo(f"SQL: {outcome.sql.text}")
    names = [c.name for c in outcome.result.columns]
    click.echo(" | ".join(names))
    for row in outcome.result.rows[:50]:
        click.echo(" | ".join(str(v) for v in row))
    if len(outcome.result.rows) > 50:
        click.echo(f"... {len(outcome.result.rows) - 50} more rows")
    click.echo(
        f"[{outcome.stats.row_count} rows, {outcome.stats.latency_ms:.1f} ms, "
        f"cache_hit={outcome.stats.cache_hit}]"
    )
    for rec in outcome.recommendations:
        click.echo(f"advice: index {rec.table}({', '.join(rec.columns)}) [{rec.reason}]")


@click.group()
@click.option("--database-url", envvar="PGI_DATABASE_URL", default=None, help="fixture://, sqlite:///path, or postgresql://")
@click.option("--cache-ttl", type=float, default=None, help="result cache TTL in seconds")
@click.option("--row-cap", type=int, default=None, help="maximum rows returned per query")
@click.option("--state-dir", type=click.Path(path_type=Path), default=STATE_DIR, help="where pending sessions are stored")
@click.pass_context
def main(ctx, database_url, cache_ttl, row_cap, state_dir):
    """Natural-language analytics over a SQL schema."""
    ctx.ensure_object(dict)
    ctx.obj["database_url"] = database_url
    ctx.obj["cache_ttl"] = cache_ttl
    ctx.obj["row_cap"] = row_cap
    ctx.obj["state_dir"] = state_dir


def _pipeline_from_ctx(ctx) -> Pipeline:
    return _build_pipeline(ctx.obj["database_url"], ctx.obj["cache_ttl"], ctx.obj["row_cap"])


@main.command()
@click.argument("utterance")
@click.option("--json", "as_json", is_flag=True, help="emit JSON instead of a grid")
@click.pass_context
def query(ctx, utterance, as_json):
    """Answer a natural-language question."""
    pipeline = _pipeline_from_ctx(ctx)
    try:
        outcome = pipeline.answer(utterance)
    except ClarificationsPending as pending:
        session_id = secrets.token_hex(16)
        sessions = _load_sessions(ctx.obj["state_dir"])
        sessions[session_id] = intent_to_dict(pending.intent)
        _store_sessions(ctx.obj["state_dir"], sessions)
        click.echo(f"Clarification needed (session {session_id}):")
        for c in pending.clarifications:
            line = f"  [{c.slot_id}] {c.prompt}"
            if c.candidates:
                line += f" (candidates: {', '.join(c.candidates)})"
            click.echo(line)
        click.echo(f"Answer with: pgi clarify {session_id} --range 2024-01-01..2024-03-31")
        sys.exit(2)
    _print_result(outcome, as_json)


@main.command()
@click.argument("session_id")
@click.option("--range", "time_range", default=None, help="absolute range start..end for time_range slots")
@click.option("--choose", nargs=2, multiple=True, metavar="SLOT ELEMENT", help="answer an entity/metric slot")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def clarify(ctx, session_id, time_range, choose, as_json):
    """Answer pending clarifications from an earlier query."""
    sessions = _load_sessions(ctx.obj["state_dir"])
    if session_id not in sessions:
        raise click.ClickException(f"unknown session {session_id!r}")
    intent = intent_from_dict(sessions[session_id])
    answers = []
    if time_range:
        try:
            start, end = time_range.split("..", 1)
        except ValueError:
            raise click.ClickException("--range must look like 2024-01-01..2024-03-31")
        slot = next((f.slot_id for f in intent.ambiguity_flags if f.kind == "time_range"), "time_range")
        answers.append(
            ClarificationAnswer(
                slot_id=slot, payload={"kind": "absolute", "start": start.strip(), "end": end.strip()}
            )
        )
    for slot, element in choose:
        answers.append(ClarificationAnswer(slot_id=slot, payload={"kind": "choice", "element": element}))
    if not answers:
        raise click.ClickException("nothing to answer; pass --range or --choose")
    try:
        for answer in answers:
            intent = merge_clarification(intent, answer)
    except (KeyError, ValueError) as exc:
        raise click.ClickException(str(exc))
    if intent.ambiguity_flags:
        sessions[session_id] = intent_to_dict(intent)
        _store_sessions(ctx.obj["state_dir"], sessions)
        click.echo(f"{len(intent.ambiguity_flags)} clarification(s) still pending:")
        for c in intent.ambiguity_flags:
            click.echo(f"  [{c.slot_id}] {c.prompt}")
        sys.exit(2)
    del sessions[session_id]
    _store_sessions(ctx.obj["state_dir"], sessions)
    pipeline = _pipeline_from_ctx(ctx)
    try:
        outcome = pipeline.run_intent(intent)
    except ClarificationsPending as pending:
        click.echo("further clarification needed:")
        for c in pending.clarifications:
            click.echo(f"  [{c.slot_id}] {c.prompt}")
        sys.exit(2)
    _print_result(outcome, as_json)


@main.command()
@click.option("--seed", type=int, default=0, help="question-generation seed")
@click.option("-o", "--output", type=click.Path(path_type=Path), default=None, help="write Markdown here")
@click.pass_context
def report(ctx, seed, output):
    """Generate the full analytical report."""
    from .report import ReportConfig, emit_markdown, generate_report

    pipeline = _pipeline_from_ctx(ctx)
    url = ctx.obj["database_url"] or ServiceConfig.from_env().database_url
    if url.startswith("fixture:"):
        from .fixtures import fixture_report_config

        config = fixture_report_config(seed=seed)
    else:
        config = ReportConfig(seed=seed)
    doc = generate_report(pipeline, config)
    markdown = emit_markdown(doc)
    if output:
        output.write_text(markdown, encoding="utf-8")
        click.echo(f"report written to {output}")
    else:
        click.echo(markdown)


@main.command()
@click.option("--method", type=click.Choice(["zscore", "trend", "forecast"]), required=True)
@click.option("--sql", default=None, help="SELECT returning (timestamp, value) rows")
@click.option("--series-file", type=click.Path(path_type=Path), default=None, help="JSON [[ts, value], ...]")
@click.option("--param", "params", nargs=2, multiple=True, metavar="KEY VALUE")
@click.pass_context
def analyze(ctx, method, sql, series_file, params):
    """Run an analytics kernel over a series or a query result."""
    from .service import ApiError, analyze as run_analyze

    pipeline = _pipeline_from_ctx(ctx)
    body = {"method": method, "params": {k: v for k, v in params}}
    if sql:
        body["sql"] = sql
    if series_file:
        body["series"] = json.loads(series_file.read_text(encoding="utf-8"))
    try:
        click.echo(json.dumps(run_analyze(pipeline, body), indent=2))
    except ApiError as exc:
        raise click.ClickException(f"{exc.code}: {exc.message}")


@main.command()
@click.pass_context
def schema(ctx):
    """Print the catalog document for the connected database."""
    pipeline = _pipeline_from_ctx(ctx)
    click.echo(export_catalog(pipeline.catalog), nl=False)


@main.command()
@click.option("--corpus", type=click.Path(path_type=Path), default=None, help="bench corpus JSONL")
@click.option("--repetitions", type=int, default=3)
@click.option("--live", is_flag=True, help="run latency against the configured backend instead of the scripted mock")
@click.option("--baseline", type=click.Path(path_type=Path), default=None, help="operator-supplied reference timings JSON")
@click.pass_context
def bench(ctx, corpus, repetitions, live, baseline):
    """Measure syntax accuracy, linking precision, and latency."""
    from .bench import default_corpus_path, load_corpus, run_bench

    pipeline = _pipeline_from_ctx(ctx)
    corpus_path = corpus or default_corpus_path()
    cases = load_corpus(corpus_path.read_text(encoding="utf-8"))
    reference = json.loads(baseline.read_text(encoding="utf-8")) if baseline else None
    bench_report = run_bench(
        pipeline, cases, repetitions=repetitions, live_latency=live, reference=reference
    )
    click.echo(bench_report.to_markdown())


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
def serve(ctx, host, port):
    """Run the HTTP service (requires uvicorn)."""
    try:
        import uvicorn
    except ImportError:
        raise click.ClickException("uvicorn is not installed; pip install 'pginsight[serve]'")
    from .fixtures import fixture_report_config
    from .service import create_app

    config = ServiceConfig.from_env(database_url=ctx.obj["database_url"])
    pipeline = _pipeline_from_ctx(ctx)
    report_config = fixture_report_config() if config.database_url.startswith("fixture:") else None
    app = create_app(pipeline, session_ttl_s=config.session_ttl_s, report_config=report_config)
    uvicorn.run(app, host=host or config.host, port=port or config.port)


if __name__ == "__main__":
    main()
