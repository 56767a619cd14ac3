from __future__ import annotations

import re

import pytest

from pginsight.analytics import EventRecord
from pginsight.executor import MockBackend, normalize_key
from pginsight.fixtures import FIXTURE_CLOCK, fixture_report_config
from pginsight.pipeline import fixture_pipeline
from pginsight.questions import QuestionSpec, generate_questions
from pginsight.report import (
    NO_FINDINGS,
    QARecord,
    ReportConfig,
    ResultDigest,
    document_to_dict,
    emit_markdown,
    generate_report,
    load_events_jsonl,
    narrate_result,
    resolve_questions,
    summarize,
    synthesize_report,
)
from pginsight.sqlast import SqlText
from pginsight.util import utc


def make_record(scalar=None, rows=(), columns=("a",), text="What is x?", category="comparison", agg="avg"):
    digest = ResultDigest(
        columns=tuple(columns),
        top_rows=tuple(rows),
        row_count=len(rows) if scalar is None else 1,
        scalar=scalar,
    )
    spec = QuestionSpec(
        template_id="cmp_last_quarter_average",
        category=category,
        slots=(("measure", "transactions.amount"),),
        text=text,
        agg=agg,
    )
    return QARecord(question=spec, status="ok", sql=SqlText(text="SELECT 1"), digest=digest)


class TestNarrate:
    def test_scalar_sentence(self):
        record = make_record(scalar=42, rows=((42,),))
        assert narrate_result(record) == "The average transaction amount is 42."

    def test_empty_result(self):
        record = make_record(rows=())
        assert narrate_result(record) == "No data matched this question."

    def test_top_k_listing(self, catalog, lexicon):
        rows = (("Alice Fox", 5000.0), ("Bob Hale", 4200.0), ("Carol Vega", 3800.0), ("David Liu", 3100.0), ("Erin Shaw", 2600.0))
        record = make_record(rows=rows, columns=("name", "total"), agg="sum")
        narrative = narrate_result(record)
        assert "Alice Fox (5000)" in narrative
        assert narrative.index("Alice Fox") < narrative.index("Bob Hale") < narrative.index("Erin Shaw")


@pytest.fixture(scope="module")
def resolved(synonyms):
    pipeline = fixture_pipeline()
    qset = generate_questions(pipeline.catalog, seed=42, synonyms=synonyms)
    return qset, resolve_questions(qset, pipeline)


class TestResolveQuestions:
    def test_thirty_records_all_ok(self, resolved):
        qset, records = resolved
        assert len(records) == 30
        assert all(r.status == "ok" for r in records)

    def test_failure_isolation(self, synonyms):
        pipeline = fixture_pipeline()
        qset = generate_questions(pipeline.catalog, seed=42, synonyms=synonyms)
        # scripted failure for exactly one question's statement
        victim_sql = None
        records = resolve_questions(qset, pipeline)
        victim_sql = records[3].sql.text
        failing = fixture_pipeline()

        class Sabotage:
            kind = "live"

            def __init__(self, inner):
                self.inner = inner

            def run(self, sql, timeout_s):
                if normalize_key(sql) == normalize_key(victim_sql):
                    raise RuntimeError("backend failure injected")
                return self.inner.run(sql, timeout_s)

        failing.backend = Sabotage(failing.backend)
        failing.cache.ttl_s = 0.0
        records2 = resolve_questions(qset, failing)
        statuses = [r.status for r in records2]
        assert statuses.count("failed") == 1
        assert statuses.count("ok") == 29
        failed = next(r for r in records2 if r.status == "failed")
        assert failed.failure

    def test_rerun_within_ttl_hits_cache(self, synonyms):
        pipeline = fixture_pipeline()
        qset = generate_questions(pipeline.catalog, seed=42, synonyms=synonyms)
        first = resolve_questions(qset, pipeline)
        second = resolve_questions(qset, pipeline)
        assert all(r.cache_hit for r in second)
        assert [r.digest for r in second] == [r.digest for r in first]


class TestSynthesize:
    def test_empty_inputs_give_six_no_findings_sections(self):
        doc = synthesize_report([], [], [], [], generated_at=FIXTURE_CLOCK)
        assert [s.name for s in doc.sections] == [
            "overview",
            "key_trends",
            "anomalies",
            "forecasts",
            "qa_appendix",
            "recommendations",
        ]
        for section in doc.sections:
            if section.name == "qa_appendix":
                continue
            assert section.paragraphs[0] == NO_FINDINGS or section.paragraphs

    def test_full_fixture_run(self):
        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        qa = doc.section("qa_appendix")
        assert qa.table is not None and len(qa.table[1]) == 30
        anomalies_text = " ".join(doc.section("anomalies").paragraphs)
        assert "port strike" in anomalies_text
        assert "1 day" in anomalies_text
        kinds = {c.kind for c in doc.charts}
        assert {"line", "bar"} <= kinds

    def test_chart_invariants_hold(self):
        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        for chart in doc.charts:
            if chart.kind == "table":
                continue
            for _, values in chart.series:
                assert len(values) == len(chart.x_labels)

    def test_narrative_numbers_are_traceable(self):
        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        allowed: set[str] = set()
        qa = doc.section("qa_appendix")
        for row in qa.table[1]:
            allowed |= set(re.findall(r"\d+(?:\.\d+)?", " ".join(row)))
        for chart in doc.charts:
            for _, values in chart.series:
                allowed |= {re.sub(r"\.0$", "", f"{v}") for v in values}
                allowed |= {f"{v}" for v in values}
        for section in doc.sections:
            for paragraph in section.paragraphs:
                for number in re.findall(r"\d+(?:\.\d+)?", paragraph):
                    stripped = number.rstrip(".")
                    ok = (
                        stripped in allowed
                        or re.match(r"^\d{4}$", stripped)  # years
                        or float(stripped) < 400  # counts, scores, slopes, percentiles, days
                    )
                    assert ok, f"unexplained number {number!r} in {paragraph!r}"


class TestSummarize:
    def test_budget_larger_than_content_keeps_everything(self):
        doc = synthesize_report([], [], [], [], generated_at=FIXTURE_CLOCK)
        full = summarize(doc, sentence_budget=100)
        assert "covers" not in full or full

    def test_budget_one_picks_key_trends_sentence(self):
        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        top = summarize(doc, sentence_budget=1)
        key_trend_sentences = doc.section("key_trends").paragraphs
        assert any(top.startswith(s.split(". ")[0][:30]) for s in key_trend_sentences)

    def test_count_never_exceeds_budget(self):
        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        for budget in (1, 2, 5, 8):
            text = summarize(doc, sentence_budget=budget)
            sentences = [s for s in re.split(r"(?<=[.!?])\s+", text) if s]
            assert len(sentences) <= budget

    def test_scoring_matches_reference_recomputation(self):
        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        from pginsight.report import LEAD_BONUS, NUMERIC_BONUS, SECTION_WEIGHTS, _sentences

        scored = []
        position = 0
        seen = set()
        for section in doc.sections:
            for i, paragraph in enumerate(section.paragraphs):
                for sentence in _sentences(paragraph):
                    position += 1
                    if sentence == NO_FINDINGS:
                        continue
                    norm = re.sub(r"[^a-z0-9]+", " ", sentence.lower()).strip()
                    if not norm or norm in seen:
                        continue
                    seen.add(norm)
                    score = SECTION_WEIGHTS.get(section.name, 0.0)
                    if re.search(r"\d", sentence):
                        score += NUMERIC_BONUS
                    if i == 0:
                        score += LEAD_BONUS
                    scored.append((score, position, sentence))
        expected_top = sorted(scored, key=lambda t: (-t[0], t[1]))[:1][0][2]
        assert summarize(doc, sentence_budget=1) == expected_top


class TestMarkdown:
    def test_six_h2_sections(self):
        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        markdown = emit_markdown(doc)
        assert len(re.findall(r"^## ", markdown, flags=re.M)) == 6

    def test_empty_document_minimal(self):
        doc = synthesize_report([], [], [], [], generated_at=FIXTURE_CLOCK)
        doc.summary = summarize(doc)
        markdown = emit_markdown(doc)
        assert markdown.startswith("# ")
        assert len(re.findall(r"^## ", markdown, flags=re.M)) == 6
        assert NO_FINDINGS in markdown

    def test_matches_pinned_golden(self):
        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        markdown = emit_markdown(doc)
        from tests.conftest import ASSETS

        golden = (ASSETS / "golden_report.md").read_text(encoding="utf-8")
        assert markdown == golden

    def test_document_dict_round_trips_to_json(self):
        import json

        pipeline = fixture_pipeline()
        doc = generate_report(pipeline, fixture_report_config(seed=0))
        payload = document_to_dict(doc)
        assert json.loads(json.dumps(payload)) == payload


class TestEventsFeed:
    def test_load_events_jsonl(self):
        text = '{"timestamp": "2024-03-29T00:00:00Z", "label": "port strike", "source": "x"}\n'
        events = load_events_jsonl(text)
        assert events == [EventRecord(timestamp=utc(2024, 3, 29), label="port strike", source="x")]
