from __future__ import annotations

import json
import re

import pytest
from click.testing import CliRunner

from pginsight.cli import main

PAPER_SQL = (
    "SELECT users.name, SUM(sales.revenue) FROM sales JOIN users ON sales.user_id = users.id "
    "GROUP BY users.name ORDER BY SUM(sales.revenue) DESC LIMIT 5"
)


@pytest.fixture()
def runner():
    return CliRunner()


def invoke(runner, tmp_path, *args):
    return runner.invoke(
        main,
        ["--database-url", "fixture://", "--state-dir", str(tmp_path / ".pgi"), *args],
        catch_exceptions=False,
    )


class TestQueryCommand:
    def test_paper_query_prints_sql_and_rows(self, runner, tmp_path):
        result = invoke(runner, tmp_path, "query", "Top 5 customers by revenue")
        assert result.exit_code == 0
        assert PAPER_SQL in result.output
        assert "Alice Fox" in result.output

    def test_json_output(self, runner, tmp_path):
        result = invoke(runner, tmp_path, "query", "--json", "list products")
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert payload["result"]["rows"]

    def test_ambiguous_query_opens_session(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["--database-url", "fixture://", "--state-dir", str(tmp_path / ".pgi"), "query", "show recent transactions"],
        )
        assert result.exit_code == 2
        assert "Clarification needed" in result.output
        sessions = json.loads((tmp_path / ".pgi" / "sessions.json").read_text())
        assert len(sessions) == 1


class TestClarifyCommand:
    def test_range_answer_completes_query(self, runner, tmp_path):
        opened = runner.invoke(
            main,
            ["--database-url", "fixture://", "--state-dir", str(tmp_path / ".pgi"), "query", "show recent transactions"],
        )
        session_id = re.search(r"session ([0-9a-f]{32})", opened.output).group(1)
        result = invoke(runner, tmp_path, "clarify", session_id, "--range", "2024-01-01..2024-03-31")
        assert result.exit_code == 0
        assert "transactions" in result.output
        assert not json.loads((tmp_path / ".pgi" / "sessions.json").read_text())

    def test_unknown_session_fails(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["--database-url", "fixture://", "--state-dir", str(tmp_path / ".pgi"), "clarify", "feed", "--range", "a..b"],
        )
        assert result.exit_code != 0


class TestReportCommand:
    def test_report_written_to_file(self, runner, tmp_path):
        out = tmp_path / "report.md"
        result = invoke(runner, tmp_path, "report", "--seed", "0", "-o", str(out))
        assert result.exit_code == 0
        text = out.read_text()
        assert text.startswith("# Retail Demo Analytics Report")
        assert len(re.findall(r"^## ", text, flags=re.M)) == 6


class TestSchemaCommand:
    def test_schema_prints_catalog_document(self, runner, tmp_path):
        result = invoke(runner, tmp_path, "schema")
        assert result.exit_code == 0
        doc = json.loads(result.output)
        assert {t["name"] for t in doc["tables"]} >= {"users", "sales"}


class TestAnalyzeCommand:
    def test_zscore_over_sql(self, runner, tmp_path):
        result = invoke(
            runner,
            tmp_path,
            "analyze",
            "--method",
            "zscore",
            "--sql",
            "SELECT metrics_daily.day, metrics_daily.value FROM metrics_daily "
            "WHERE metrics_daily.metric = 'refund_count' ORDER BY metrics_daily.day ASC",
        )
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert [a["value"] for a in payload["anomalies"]] == [300.0, 300.0]


class TestBenchCommand:
    def test_bench_prints_table(self, runner, tmp_path):
        result = invoke(runner, tmp_path, "bench", "--repetitions", "3")
        assert result.exit_code == 0
        assert "| Simple SELECT | 120 |" in result.output
        assert "Syntax accuracy: 1.000" in result.output
