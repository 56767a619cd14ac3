"""Report synthesis: resolve generated questions, attach analytics, emit Markdown.

Every number that appears in prose is copied from a result digest, a trend
fit, a forecast point, or an anomaly score, so the traceability check can
verify the document against its inputs. Rendering is deterministic given
(catalog, backend, seed, clock).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .analytics import (
    AnomalyPoint,
    CorrelationFinding,
    EventRecord,
    Forecast,
    Series,
    TrendResult,
    correlate_events,
    detect_trend,
    fit_arima,
    forecast as run_forecast,
    series_from_rows,
    zscore_outliers,
)
from .advisor import IndexRecommendation
from .executor import ResultSet
from .pipeline import Pipeline
from .questions import QuestionConfig, QuestionSet, QuestionSpec, generate_questions
from .sqlast import SqlText
from .util import format_number, iso_utc

logger = logging.getLogger(__name__)

SECTION_ORDER = ("overview", "key_trends", "anomalies", "forecasts", "qa_appendix", "recommendations")

SECTION_HEADINGS = {
    "overview": "Overview",
    "key_trends": "Key Trends",
    "anomalies": "Anomalies",
    "forecasts": "Forecasts",
    "qa_appendix": "Question & Answer Appendix",
    "recommendations": "Recommendations",
}

_AGG_WORDS = {
    "sum": "total",
    "avg": "average",
    "count": "number of",
    "max": "highest",
    "min": "lowest",
    "count_distinct": "distinct count of",
}

NO_FINDINGS = "No findings for this section."


@dataclass(frozen=True)
class ResultDigest:
    columns: tuple[str, ...]
    top_rows: tuple[tuple, ...]
    row_count: int
    scalar: float | int | str | None = None


@dataclass
class QARecord:
    question: QuestionSpec
    status: str  # ok | failed
    sql: SqlText | None = None
    digest: ResultDigest | None = None
    narrative: str = ""
    failure: str | None = None
    trend: TrendResult | None = None
    anomalies: tuple[AnomalyPoint, ...] = ()
    recommendations: tuple[IndexRecommendation, ...] = ()
    cache_hit: bool = False

    def __post_init__(self) -> None:
        if self.status == "ok" and (self.sql is None or self.digest is None):
            raise ValueError("ok record must carry sql and a result digest")
        if self.status == "failed" and not self.failure:
            raise ValueError("failed record must carry a reason")


@dataclass(frozen=True)
class ChartSpec:
    kind: str  # bar | line | histogram | table
    title: str
    x_labels: tuple[str, ...]
    series: tuple[tuple[str, tuple[float, ...]], ...]
    section: str = "overview"

    def __post_init__(self) -> None:
        if self.kind not in ("bar", "line", "histogram", "table"):
            raise ValueError(f"unknown chart kind {self.kind!r}")
        if self.kind != "table":
            for name, values in self.series:
                if len(values) != len(self.x_labels):
                    raise ValueError(f"series {name!r} length does not match x_labels")


@dataclass(frozen=True)
class MetricFinding:
    name: str
    series: Series
    trend: TrendResult
    anomalies: tuple[AnomalyPoint, ...]


@dataclass(frozen=True)
class ForecastFinding:
    name: str
    forecast: Forecast
    trend: TrendResult


@dataclass
class Section:
    name: str
    heading: str
    paragraphs: list[str] = field(default_factory=list)
    table: tuple[tuple[str, ...], list[tuple[str, ...]]] | None = None  # (headers, rows)


@dataclass
class ReportDocument:
    title: str
    generated_at: datetime
    sections: list[Section]
    charts: list[ChartSpec] = field(default_factory=list)
    summary: str = ""

    def section(self, name: str) -> Section:
        for section in self.sections:
            if section.name == name:
                return section
        raise KeyError(name)


# Question resolution -------------------------------------------------------


def _digest(result: ResultSet) -> ResultDigest:
    rows = []
    for row in result.rows[:10]:
        rows.append(tuple(iso_utc(v) if isinstance(v, datetime) else v for v in row))
    scalar = None
    if len(result.rows) == 1 and len(result.columns) == 1:
        scalar = result.rows[0][0]
    return ResultDigest(
        columns=tuple(c.name for c in result.columns),
        top_rows=tuple(rows),
        row_count=len(result.rows),
        scalar=scalar,
    )


def _series_shaped(result: ResultSet) -> bool:
    if len(result.columns) != 2 or len(result.rows) < 3:
        return False
    head = result.rows[0]
    return isinstance(head[1], (int, float)) and not isinstance(head[1], bool)


def _top_k_shaped(result: ResultSet) -> bool:
    if len(result.columns) != 2 or not (1 <= len(result.rows) <= 10):
        return False
    head = result.rows[0]
    return isinstance(head[0], str) and isinstance(head[1], (int, float)) and not _series_shaped_first(head[0])


def _series_shaped_first(value: str) -> bool:
    return bool(re.match(r"^\d{4}(-\d{2})?(-\d{2})?", str(value)))


def measure_label(spec: QuestionSpec) -> str:
    from .questions import _render_slot

    agg_word = _AGG_WORDS.get(spec.agg, spec.agg)
    measure = spec.slot("measure")
    if measure:
        return f"{agg_word} {_render_slot('measure', measure)}"
    table = spec.slot("table")
    if table:
        return f"{agg_word} {_render_slot('table', table)}"
    return agg_word


def resolve_questions(
    qset: QuestionSet,
    pipeline: Pipeline,
    zscore_k: float = 3.0,
) -> list[QARecord]:
    """Run every question through the pipeline; failures never abort the batch.

    Trend- and anomaly-category results that look like a time series also get
    a trend fit and z-score scan attached.
    """
    records: list[QARecord] = []
    for spec in qset.specs:
        try:
            outcome = pipeline.resolve_question(spec)
        except Exception as exc:
            logger.warning("question %r failed: %s", spec.text, exc)
            records.append(QARecord(question=spec, status="failed", failure=str(exc)))
            continue
        trend = None
        anomalies: tuple[AnomalyPoint, ...] = ()
        if spec.category in ("trend", "anomaly") and _series_shaped(outcome.result):
            try:
                series = series_from_rows(outcome.result.rows)
                if len(series) >= 3:
                    trend = detect_trend(series)
                if spec.category == "anomaly" and len(series) >= 2:
                    anomalies = tuple(zscore_outliers(series, k=zscore_k))
            except Exception as exc:
                logger.info("series analysis skipped for %r: %s", spec.text, exc)
        record = QARecord(
            question=spec,
            status="ok",
            sql=outcome.sql,
            digest=_digest(outcome.result),
            trend=trend,
            anomalies=anomalies,
            recommendations=tuple(outcome.recommendations),
            cache_hit=outcome.stats.cache_hit,
        )
        record.narrative = narrate_result(record)
        records.append(record)
    return records


def narrate_result(record: QARecord) -> str:
    """Template realization keyed on result shape; deterministic."""
    if record.status != "ok":
        return f"Could not be answered: {record.failure}"
    digest = record.digest
    assert digest is not None
    label = measure_label(record.question)
    if digest.row_count == 0:
        return "No data matched this question."
    if digest.scalar is not None and digest.row_count == 1:
        return f"The {label} is {_fmt(digest.scalar)}."
    if record.trend is not None:
        direction = record.trend.trend_class
        verb = {"up": "trended upward", "down": "trended downward", "flat": "stayed flat"}[direction]
        sentence = (
            f"Across {digest.row_count} periods, {label} {verb} "
            f"(slope {format_number(round(record.trend.slope, 2))} per period)."
        )
        if record.anomalies:
            worst = max(record.anomalies, key=lambda a: a.score)
            sentence += (
                f" {len(record.anomalies)} outlier period(s) detected; the strongest sits at "
                f"{worst.timestamp.date().isoformat()} with value {_fmt(worst.value)}."
            )
        return sentence
    if len(digest.columns) == 2 and 1 <= digest.row_count <= 10:
        listed = ", ".join(f"{row[0]} ({_fmt(row[1])})" for row in digest.top_rows[:5])
        return f"Ranked by {label}: {listed}."
    return f"{digest.row_count} rows across {len(digest.columns)} columns."


def _fmt(value) -> str:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return format_number(round(value, 2) if isinstance(value, float) else value)
    return str(value)


# Metric scan ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricQuery:
    name: str
    sql: str
    grain: str = "day"


@dataclass(frozen=True)
class ReportConfig:
    title: str = "Automated Analytics Report"
    seed: int = 0
    question_config: QuestionConfig = QuestionConfig()
    metrics: tuple[MetricQuery, ...] = ()
    events: tuple[EventRecord, ...] = ()
    forecast_metric: str | None = None
    forecast_order: tuple[int, int] = (1, 0)
    forecast_horizon: int = 7
    correlation_window: timedelta = timedelta(days=3)
    zscore_k: float = 3.0
    sentence_budget: int = 5


def scan_metrics(pipeline: Pipeline, config: ReportConfig) -> list[MetricFinding]:
    findings = []
    for metric in config.metrics:
        try:
            from .sqlparse import parse_sql

            ast = parse_sql(metric.sql)
            outcome = pipeline.run_ast(ast)
            series = series_from_rows(outcome.result.rows, grain=metric.grain)
            trend = detect_trend(series)
            anomalies = tuple(zscore_outliers(series, k=config.zscore_k))
            findings.append(MetricFinding(name=metric.name, series=series, trend=trend, anomalies=anomalies))
        except Exception as exc:
            logger.warning("metric scan %r failed: %s", metric.name, exc)
    return findings


def build_forecasts(findings: list[MetricFinding], config: ReportConfig) -> list[ForecastFinding]:
    out = []
    for finding in findings:
        if config.forecast_metric is not None and finding.name != config.forecast_metric:
            continue
        p, d = config.forecast_order
        try:
            model = fit_arima(finding.series, p=p, d=d)
            fc = run_forecast(model, finding.series, horizon=config.forecast_horizon)
            out.append(ForecastFinding(name=finding.name, forecast=fc, trend=finding.trend))
        except Exception as exc:
            logger.warning("forecast for %r skipped: %s", finding.name, exc)
    return out


# Synthesis ------------------------------------------------------------------


def synthesize_report(
    records: list[QARecord],
    anomalies: list[MetricFinding],
    forecasts: list[ForecastFinding],
    correlations: list[CorrelationFinding],
    title: str = "Automated Analytics Report",
    generated_at: datetime | None = None,
) -> ReportDocument:
    """Assemble the six fixed sections; empty inputs still yield a complete document."""
    from datetime import timezone

    generated_at = generated_at or datetime.now(timezone.utc)
    sections = {name: Section(name=name, heading=SECTION_HEADINGS[name]) for name in SECTION_ORDER}
    charts: list[ChartSpec] = []

    ok_records = [r for r in records if r.status == "ok"]
    failed_records = [r for r in records if r.status != "ok"]
    overview = sections["overview"]
    if records or anomalies or forecasts:
        overview.paragraphs.append(
            f"This report covers {len(records)} generated questions: "
            f"{len(ok_records)} answered, {len(failed_records)} failed."
        )
        tables = sorted({r.sql.text.split(" FROM ")[1].split(" ")[0] for r in ok_records if r.sql})
        if tables:
            overview.paragraphs.append(
                f"Primary tables touched: {', '.join(tables[:8])}."
            )
        if anomalies:
            overview.paragraphs.append(
                f"{len(anomalies)} standing metrics were scanned for outliers and trends."
            )
    else:
        overview.paragraphs.append(NO_FINDINGS)

    key_trends = sections["key_trends"]
    for finding in anomalies:
        direction = finding.trend.trend_class
        if direction == "flat":
            continue
        verb = "rose" if direction == "up" else "declined"
        key_trends.paragraphs.append(
            f"Metric '{finding.name}' {verb} over the covered window "
            f"(slope {format_number(round(finding.trend.slope, 2))} per period)."
        )
    for record in ok_records:
        if record.trend is not None and record.trend.trend_class != "flat":
            key_trends.paragraphs.append(f"{record.question.text} {record.narrative}")
    if not key_trends.paragraphs:
        key_trends.paragraphs.append(NO_FINDINGS)

    anomaly_section = sections["anomalies"]
    for correlation in correlations:
        anomaly_section.paragraphs.append(correlation.narrative)
    for finding in anomalies:
        uncorrelated = [
            a
            for a in finding.anomalies
            if not any(c.anomaly == a for c in correlations)
        ]
        for point in uncorrelated:
            anomaly_section.paragraphs.append(
                f"Metric '{finding.name}' shows an outlier at {point.timestamp.date().isoformat()} "
                f"(value {_fmt(point.value)}, score {format_number(round(point.score, 2))})."
            )
    for record in ok_records:
        for point in record.anomalies:
            anomaly_section.paragraphs.append(
                f"{record.question.text} Outlier at {point.timestamp.date().isoformat()} "
                f"with value {_fmt(point.value)}."
            )
    if not anomaly_section.paragraphs:
        anomaly_section.paragraphs.append(NO_FINDINGS)

    forecast_section = sections["forecasts"]
    for finding in forecasts:
        first = finding.forecast.points[0]
        last = finding.forecast.points[-1]
        forecast_section.paragraphs.append(
            f"Metric '{finding.name}' is forecast at {_fmt(first[1])} next period "
            f"(95% interval {_fmt(first[2])} to {_fmt(first[3])}), reaching {_fmt(last[1])} "
            f"by period {finding.forecast.horizon} ({_fmt(last[2])} to {_fmt(last[3])})."
        )
        charts.append(
            ChartSpec(
                kind="line",
                title=f"Forecast: {finding.name}",
                x_labels=tuple(p[0].date().isoformat() for p in finding.forecast.points),
                series=(
                    ("mean", tuple(round(p[1], 2) for p in finding.forecast.points)),
                    ("lower95", tuple(round(p[2], 2) for p in finding.forecast.points)),
                    ("upper95", tuple(round(p[3], 2) for p in finding.forecast.points)),
                ),
                section="forecasts",
            )
        )
    if not forecast_section.paragraphs:
        forecast_section.paragraphs.append(NO_FINDINGS)

    qa = sections["qa_appendix"]
    headers = ("#", "Category", "Question", "Status", "Answer")
    rows = []
    for i, record in enumerate(records, start=1):
        answer = record.narrative if record.status == "ok" else f"failed: {record.failure}"
        rows.append((str(i), record.question.category, record.question.text, record.status, answer))
    qa.table = (headers, rows)
    qa.paragraphs.append(f"All {len(records)} generated questions with their outcomes.")

    recommendations = sections["recommendations"]
    index_recs: dict[tuple, IndexRecommendation] = {}
    for record in ok_records:
        for rec in record.recommendations:
            index_recs.setdefault((rec.table, rec.columns, rec.reason), rec)
    for key in sorted(index_recs, key=lambda k: (-index_recs[k].estimated_benefit, k)):
        rec = index_recs[key]
        recommendations.paragraphs.append(
            f"Consider an index on {rec.table}({', '.join(rec.columns)}): "
            f"{rec.reason.replace('_', ' ')} workload, estimated benefit "
            f"{format_number(round(rec.estimated_benefit, 1))}."
        )
    for correlation in correlations:
        if correlation.events:
            event = correlation.events[0][0]
            recommendations.paragraphs.append(
                f"Investigate the {correlation.anomaly.timestamp.date().isoformat()} outlier "
                f"alongside '{event.label}' from {event.source}."
            )
    if not recommendations.paragraphs:
        recommendations.paragraphs.append(NO_FINDINGS)

    # charts for metric series and question results
    for finding in anomalies:
        charts.append(
            ChartSpec(
                kind="line",
                title=f"Metric: {finding.name}",
                x_labels=tuple(t.date().isoformat() for t, _ in finding.series.points),
                series=((finding.name, tuple(v for _, v in finding.series.points)),),
                section="anomalies" if finding.anomalies else "key_trends",
            )
        )
    for record in ok_records:
        if record.digest is None or record.sql is None:
            continue
        if record.trend is not None and record.digest.row_count >= 3:
            continue  # the metric-style chart is only emitted for clean series below
        if len(record.digest.columns) == 2 and 1 <= record.digest.row_count <= 10:
            head = record.digest.top_rows[0]
            if isinstance(head[1], (int, float)) and not isinstance(head[1], bool):
                charts.append(
                    ChartSpec(
                        kind="bar",
                        title=record.question.text,
                        x_labels=tuple(str(r[0]) for r in record.digest.top_rows),
                        series=(
                            (measure_label(record.question), tuple(float(r[1]) for r in record.digest.top_rows)),
                        ),
                        section="qa_appendix",
                    )
                )
    for record in ok_records:
        if record.trend is not None and record.digest and record.digest.row_count >= 3:
            rows_used = record.digest.top_rows
            charts.append(
                ChartSpec(
                    kind="line",
                    title=record.question.text,
                    x_labels=tuple(str(r[0]) for r in rows_used),
                    series=(
                        (measure_label(record.question), tuple(float(r[1]) for r in rows_used)),
                    ),
                    section="key_trends",
                )
            )

    return ReportDocument(
        title=title,
        generated_at=generated_at,
        sections=[sections[name] for name in SECTION_ORDER],
        charts=charts,
    )


# Summarization ---------------------------------------------------------------


SECTION_WEIGHTS = {
    "key_trends": 3.0,
    "anomalies": 2.5,
    "forecasts": 2.0,
    "recommendations": 1.5,
    "overview": 1.0,
    "qa_appendix": 0.5,
}

NUMERIC_BONUS = 0.3
LEAD_BONUS = 0.2


def summarize(doc: ReportDocument, sentence_budget: int = 5) -> str:
    """Extractive summary: top-weighted sentences, deduplicated, document order."""
    if sentence_budget < 1:
        raise ValueError("sentence budget must be >= 1")
    scored: list[tuple[float, int, str]] = []
    position = 0
    seen: set[str] = set()
    for section in doc.sections:
        for i, paragraph in enumerate(section.paragraphs):
            for sentence in _sentences(paragraph):
                position += 1
                if sentence == NO_FINDINGS:
                    continue
                normalized = re.sub(r"[^a-z0-9]+", " ", sentence.lower()).strip()
                if not normalized or normalized in seen:
                    continue
                seen.add(normalized)
                score = SECTION_WEIGHTS.get(section.name, 0.0)
                if re.search(r"\d", sentence):
                    score += NUMERIC_BONUS
                if i == 0:
                    score += LEAD_BONUS
                scored.append((score, position, sentence))
    top = sorted(scored, key=lambda item: (-item[0], item[1]))[:sentence_budget]
    ordered = sorted(top, key=lambda item: item[1])
    return " ".join(sentence for _, _, sentence in ordered)


def _sentences(paragraph: str) -> list[str]:
    parts = re.split(r"(?<=[.!?])\s+", paragraph.strip())
    return [p for p in parts if p]


# Markdown --------------------------------------------------------------------


def emit_markdown(doc: ReportDocument) -> str:
    """Deterministic layout: H1 title, one H2 per section, fenced chart payloads."""
    import json

    lines: list[str] = [f"# {doc.title}", ""]
    lines.append(f"_Generated at {iso_utc(doc.generated_at)}_")
    lines.append("")
    if doc.summary:
        lines.append(f"**Summary.** {doc.summary}")
        lines.append("")
    for section in doc.sections:
        lines.append(f"## {section.heading}")
        lines.append("")
        for paragraph in section.paragraphs:
            lines.append(paragraph)
            lines.append("")
        if section.table is not None:
            headers, rows = section.table
            lines.append("| " + " | ".join(headers) + " |")
            lines.append("|" + "|".join(" --- " for _ in headers) + "|")
            for row in rows:
                cells = [c.replace("|", "\\|") for c in row]
                lines.append("| " + " | ".join(cells) + " |")
            lines.append("")
        for chart in doc.charts:
            if chart.section != section.name:
                continue
            payload = {
                "kind": chart.kind,
                "title": chart.title,
                "x_labels": list(chart.x_labels),
                "series": {name: list(values) for name, values in chart.series},
            }
            lines.append("```chartspec")
            lines.append(json.dumps(payload, sort_keys=True))
            lines.append("```")
            lines.append("")
    text = "\n".join(lines)
    return text if text.endswith("\n") else text + "\n"


def load_events_jsonl(text: str) -> list[EventRecord]:
    """Events feed: one {timestamp, label, source} JSON record per line."""
    import json

    from .util import parse_iso_utc

    events = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        raw = json.loads(line)
        events.append(
            EventRecord(
                timestamp=parse_iso_utc(raw["timestamp"]),
                label=raw["label"],
                source=raw.get("source", "unknown"),
            )
        )
    return events


# Orchestration ----------------------------------------------------------------


def generate_report(pipeline: Pipeline, config: ReportConfig | None = None) -> ReportDocument:
    """Question generation, resolution, metric scan, correlation, synthesis."""
    config = config or ReportConfig()
    qset = generate_questions(
        pipeline.catalog,
        config.question_config,
        seed=config.seed,
        synonyms=pipeline.synonyms,
    )
    records = resolve_questions(qset, pipeline, zscore_k=config.zscore_k)
    metric_findings = scan_metrics(pipeline, config)
    forecasts = build_forecasts(metric_findings, config)
    anomalies = [a for f in metric_findings for a in f.anomalies]
    correlations = correlate_events(anomalies, list(config.events), window=config.correlation_window)
    doc = synthesize_report(
        records,
        metric_findings,
        forecasts,
        correlations,
        title=config.title,
        generated_at=pipeline.clock(),
    )
    doc.summary = summarize(doc, sentence_budget=config.sentence_budget)
    return doc


def document_to_dict(doc: ReportDocument) -> dict:
    """Structured form served over the API and consumed by the console."""
    return {
        "title": doc.title,
        "generated_at": iso_utc(doc.generated_at),
        "summary": doc.summary,
        "sections": [
            {
                "name": s.name,
                "heading": s.heading,
                "paragraphs": list(s.paragraphs),
                **(
                    {"table": {"headers": list(s.table[0]), "rows": [list(r) for r in s.table[1]]}}
                    if s.table is not None
                    else {}
                ),
            }
            for s in doc.sections
        ],
        "charts": [
            {
                "kind": c.kind,
                "title": c.title,
                "x_labels": list(c.x_labels),
                "series": {name: list(values) for name, values in c.series},
                "section": c.section,
            }
            for c in doc.charts
        ],
    }
