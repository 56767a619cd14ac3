from __future__ import annotations

import json
from collections import Counter

import pytest

from pginsight.catalog import load_catalog
from pginsight.executor import execute
from pginsight.fixtures import FIXTURE_CLOCK
from pginsight.intent import RelativeWindow
from pginsight.linker import link
from pginsight.questions import (
    QuestionConfig,
    QuestionSpec,
    QuestionTemplate,
    UnsatisfiableQuota,
    generate_questions,
    load_templates,
    question_to_intent,
    render_question,
)
from pginsight.sqlast import render_sql
from pginsight.sqlbuild import build_ast


class TestTemplates:
    def test_library_has_enough_templates(self):
        templates = load_templates()
        assert len(templates) >= 16
        by_category = Counter(t.category for t in templates)
        for category in ("trend", "distribution", "comparison", "anomaly"):
            assert by_category[category] >= 4

    def test_pattern_slots_must_be_required(self):
        with pytest.raises(Exception):
            QuestionTemplate(id="bad", category="trend", pattern="How {measure}?", required_slots=())


class TestGenerateQuestions:
    def test_fixture_yields_thirty_distinct_with_quotas(self, catalog, synonyms):
        qset = generate_questions(catalog, seed=42, synonyms=synonyms)
        assert len(qset.specs) == 30
        signatures = {s.signature for s in qset.specs}
        assert len(signatures) == 30
        texts = {s.text for s in qset.specs}
        assert len(texts) == 30
        by_category = Counter(s.category for s in qset.specs)
        for category in ("trend", "distribution", "comparison", "anomaly"):
            assert by_category[category] >= 5
        # the paper-style average question shape is present
        assert any(
            s.agg == "avg" and s.slot("measure") and "average" in s.text.lower() for s in qset.specs
        )

    def test_deterministic_under_seed(self, catalog, synonyms):
        a = generate_questions(catalog, seed=7, synonyms=synonyms)
        b = generate_questions(catalog, seed=7, synonyms=synonyms)
        assert a == b

    def test_no_timestamp_columns_fails_trend_quota(self):
        doc = {
            "tables": [
                {
                    "name": "things",
                    "columns": [
                        {"name": "id", "type": "integer", "primary_key": True, "nullable": False},
                        {"name": "label", "type": "text", "nullable": False},
                        {"name": "value", "type": "float", "nullable": False},
                    ],
                }
            ],
            "foreign_keys": [],
        }
        catalog = load_catalog(json.dumps(doc))
        with pytest.raises(UnsatisfiableQuota, match="trend"):
            generate_questions(catalog, seed=1)

    def test_empty_catalog_rejected(self):
        catalog = load_catalog('{"tables": [], "foreign_keys": []}')
        with pytest.raises(Exception):
            generate_questions(catalog, seed=1)

    def test_all_thirty_compile_and_execute(self, catalog, lexicon, synonyms, backend):
        qset = generate_questions(catalog, seed=42, synonyms=synonyms)
        for spec in qset.specs:
            intent = question_to_intent(spec)
            linked = link(intent, catalog, lexicon)
            ast = build_ast(linked, catalog, FIXTURE_CLOCK)
            sql = render_sql(ast, catalog)
            result, stats = execute(sql, backend)
            assert stats.backend == "live", spec.text


class TestQuestionToIntent:
    def test_comparison_question_shape(self, catalog):
        spec = QuestionSpec(
            template_id="cmp_highest_total",
            category="comparison",
            slots=(("dimension", "regions.name"), ("measure", "sales.revenue")),
            text="Which region name have the highest total sale revenue?",
            agg="sum",
        )
        intent = question_to_intent(spec)
        assert intent.measures[0].agg_fn == "sum"
        assert intent.measures[0].target_phrase == "sales.revenue"
        assert intent.dimensions == ["regions.name"]
        assert intent.order is not None and intent.order.direction == "desc"

    def test_trend_question_gets_relative_window_and_time_dimension(self, catalog):
        spec = QuestionSpec(
            template_id="trend_total_over_time",
            category="trend",
            slots=(("measure", "sales.revenue"), ("time_grain", "sales.created_at:month")),
            text="How has total sale revenue changed monthly over time?",
            agg="sum",
        )
        intent = question_to_intent(spec)
        assert intent.time_window == RelativeWindow(12, "month")
        assert "sales.created_at" in intent.dimensions

    def test_retention_question_counts_distinct_with_flag_filter(self, catalog, lexicon):
        spec = QuestionSpec(
            template_id="trend_retention",
            category="trend",
            slots=(
                ("__dimension_boolean__", "1"),
                ("dimension", "users.premium"),
                ("table", "users"),
                ("time_grain", "users.signup_date:month"),
            ),
            text="What is the monthly retention rate of premium users?",
            agg="count_distinct",
        )
        intent = question_to_intent(spec)
        assert intent.measures[0].agg_fn == "count_distinct"
        assert intent.filters and intent.filters[0].phrase == "users.premium"
        assert intent.filters[0].literal is True
        linked = link(intent, catalog, lexicon)
        ast = build_ast(linked, catalog, FIXTURE_CLOCK)
        text = render_sql(ast, catalog).text
        assert "COUNT(DISTINCT users.id)" in text
        assert "users.premium = TRUE" in text
        assert "DATE_TRUNC('month', users.signup_date)" in text


class TestRenderQuestion:
    def test_growth_rate_paper_text(self):
        templates = {t.id: t for t in load_templates()}
        growth = templates["trend_growth_by_dimension"]
        from pginsight.questions import _render_pattern

        text = _render_pattern(
            growth,
            {"dimension": "regions", "measure": "sales.revenue", "time_grain": "sales.created_at:month"},
        )
        assert text == "Which regions show the highest growth rate?"

    def test_unbound_slot_is_error(self):
        spec = QuestionSpec(template_id="x", category="trend", slots=(), text="", agg="sum")
        with pytest.raises(Exception):
            render_question(spec)

    def test_rendering_injective_over_fixture_set(self, catalog, synonyms):
        qset = generate_questions(catalog, seed=11, synonyms=synonyms)
        texts = [render_question(s) for s in qset.specs]
        assert len(set(texts)) == len(texts)
