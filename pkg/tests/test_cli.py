"""CLI verbs: assess, eval, ablate, index-corpus."""

import json

import pytest
from click.testing import CliRunner

from riskforge.cli import main
from riskforge.contracts import DATA_DIR

FIXTURES = DATA_DIR / "fixtures"
PROFILE = DATA_DIR / "profiles" / "health_15.json"


@pytest.fixture
def runner():
    return CliRunner()


def test_index_corpus_reports_counts(runner):
    result = runner.invoke(main, ["index-corpus"])
    assert result.exit_code == 0
    assert "nist_csf: 15 excerpts" in result.output
    assert "cis: 2 excerpts" in result.output
    assert "total: 17 excerpts" in result.output


def test_index_corpus_rejects_malformed_file(runner, tmp_path):
    bad = tmp_path / "corpus.jsonl"
    bad.write_text('{"framework": "nist_csf"}\n', encoding="utf-8")
    result = runner.invoke(main, ["index-corpus", "--corpus", str(bad)])
    assert result.exit_code != 0
    assert "cannot ingest corpus" in result.output


def test_assess_multi_default_window_completes(runner, tmp_path):
    result = runner.invoke(main, [
        "assess", "--profile", str(PROFILE), "--mode", "multi",
        "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    record = json.loads(result.output)
    assert record["completed"] is True
    run_dir = tmp_path / record["run_id"]
    assert (run_dir / "report.md").is_file()
    assert (run_dir / "report.json").is_file()
    ledger = (tmp_path / "ledger.jsonl").read_text().splitlines()
    assert len(ledger) == 1
    assert json.loads(ledger[0])["run_id"] == record["run_id"]


def test_assess_multi_small_window_exits_2_but_records(runner, tmp_path):
    result = runner.invoke(main, [
        "assess", "--profile", str(PROFILE), "--mode", "multi",
        "--window", "4096", "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "context_overflow" in result.output
    record = json.loads((tmp_path / "ledger.jsonl").read_text())
    assert record["completed"] is False
    assert record["failure_kind"] == "context_overflow"


def test_assess_single_small_window_completes(runner, tmp_path):
    result = runner.invoke(main, [
        "assess", "--profile", str(PROFILE), "--mode", "single",
        "--window", "4096", "--schema-mode", "cross_sector",
        "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    record = json.loads(result.output)
    assert record["completed"] is True
    assert record["structural_ok"] is True


def test_assess_http_provider_needs_url(runner, monkeypatch):
    monkeypatch.delenv("RISKFORGE_MODEL_URL", raising=False)
    result = runner.invoke(main, [
        "assess", "--profile", str(PROFILE), "--provider", "http"])
    assert result.exit_code != 0
    assert "RISKFORGE_MODEL_URL" in result.output


def test_assess_rejects_unreadable_profile(runner, tmp_path):
    bad = tmp_path / "profile.json"
    bad.write_text("{not json", encoding="utf-8")
    result = runner.invoke(main, ["assess", "--profile", str(bad)])
    assert result.exit_code != 0
    assert "cannot read profile" in result.output


def test_eval_fixture_table(runner):
    result = runner.invoke(main, [
        "eval", "--register", str(FIXTURES / "case_study_register.json"),
        "--annotations", str(FIXTURES / "annotations.jsonl"),
        "--aliases", str(FIXTURES / "aliases.json")])
    assert result.exit_code == 0, result.output
    assert "18/21 (0.857)" in result.output
    assert "12/13 (0.923)" in result.output


def test_eval_json_output(runner):
    result = runner.invoke(main, [
        "eval", "--register", str(FIXTURES / "case_study_register.json"),
        "--annotations", str(FIXTURES / "annotations.jsonl"),
        "--aliases", str(FIXTURES / "aliases.json"), "--json"])
    assert result.exit_code == 0
    doc = json.loads(result.output)
    assert doc["agreement"] == {"matched": 18, "total": 21, "ratio": 0.857143}
    assert doc["coverage"]["matched"] == 12


def test_eval_requires_some_input(runner):
    result = runner.invoke(main, ["eval"])
    assert result.exit_code != 0
    assert "nothing to evaluate" in result.output


def test_eval_rejects_bad_selector(runner, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    ledger.write_text("", encoding="utf-8")
    for args in (["--select", "model"], ["--select", "colour=blue"]):
        result = runner.invoke(main, ["eval", "--ledger", str(ledger)] + args)
        assert result.exit_code != 0


def test_eval_ledger_with_selector(runner, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    runner.invoke(main, [
        "assess", "--profile", str(PROFILE), "--mode", "single",
        "--window", "4096", "--schema-mode", "cross_sector",
        "--out", str(tmp_path)])
    result = runner.invoke(main, [
        "eval", "--ledger", str(tmp_path / "ledger.jsonl"),
        "--select", "mode=single_agent"])
    assert result.exit_code == 0, result.output
    assert "stability     1.000" in result.output


def test_ablate_runs_and_resumes(runner, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    args = ["ablate", "--runs", "1", "--out", str(ledger)]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    assert "executed 10 new runs (0 already in ledger)" in result.output
    assert len(ledger.read_text().splitlines()) == 10

    result = runner.invoke(main, args)
    assert result.exit_code == 0
    assert "executed 0 new runs (10 already in ledger)" in result.output


def test_ablate_requires_profiles(runner, tmp_path):
    empty = tmp_path / "profiles"
    empty.mkdir()
    result = runner.invoke(main, [
        "ablate", "--profiles", str(empty), "--out", str(tmp_path / "l.jsonl")])
    assert result.exit_code != 0
    assert "no profile JSON files" in result.output
