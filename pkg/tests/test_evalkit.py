"""Evaluation kit: fixture-exact metrics, generative oracles, ablation sweep."""

import json
import random
from fractions import Fraction

import pytest

from riskforge.contracts import DATA_DIR, ContractSet
from riskforge.errors import NoRunsSelected, RiskforgeError
from riskforge.evalkit import (AliasMap, ModelSpec, PractitionerAnnotation,
                               compute_metrics, coverage, latency_stats,
                               load_annotations, run_ablation,
                               severity_agreement, structural_stability,
                               title_variability)
from riskforge.orchestrator import RunRecord, load_ledger
from riskforge.risk_model import RiskItem

FIXTURES = DATA_DIR / "fixtures"


def fixture_register():
    doc = json.loads((FIXTURES / "case_study_register.json").read_text())
    return [RiskItem.from_dict(r) for r in doc["risks"]]


def run_record(**kw):
    base = dict(run_id="r", profile_id="p", model_id="m", mode="single_agent",
                seed=0, completed=True, structural_ok=True,
                unique_threat_titles=["A", "B", "C"])
    base.update(kw)
    return RunRecord(**base)


# -- fixture-exact metrics ---------------------------------------------------

def test_case_study_agreement_is_18_of_21():
    stat = severity_agreement(fixture_register(),
                              load_annotations(FIXTURES / "annotations.jsonl"),
                              AliasMap.load(FIXTURES / "aliases.json"))
    assert (stat.matched, stat.total) == (18, 21)
    assert abs(float(stat.ratio) - 0.857) < 0.001


def test_case_study_coverage_is_12_of_13():
    stat = coverage(fixture_register(),
                    load_annotations(FIXTURES / "annotations.jsonl"),
                    AliasMap.load(FIXTURES / "aliases.json"))
    assert (stat.matched, stat.total) == (12, 13)
    assert abs(float(stat.ratio) - 0.923) < 0.001


def test_annotations_fixture_shape():
    annotations = load_annotations(FIXTURES / "annotations.jsonl")
    assert len(annotations) == 22
    assert {a.assessor_id for a in annotations} == {
        "assessor_a", "assessor_b", "assessor_c"}


def test_duplicate_annotation_rejected(tmp_path):
    line = json.dumps({"assessor_id": "a", "risk_title": "Same Risk",
                       "severity": "High"})
    path = tmp_path / "ann.jsonl"
    path.write_text(line + "\n" + line + "\n", encoding="utf-8")
    with pytest.raises(RiskforgeError):
        load_annotations(path)


def test_ambiguous_alias_rejected():
    aliases = AliasMap([("Variant", "Sys A"), ("Variant", "Sys B")])
    system = [RiskItem(title="Sys A", likelihood="High", impact="High", reasoning=""),
              RiskItem(title="Sys B", likelihood="High", impact="High", reasoning="")]
    with pytest.raises(RiskforgeError):
        severity_agreement(system, [], aliases)


def test_empty_annotations_give_undefined_ratio():
    stat = severity_agreement(fixture_register(), [], AliasMap())
    assert stat.ratio is None
    assert stat.display() == "n/a"


# -- generative oracles ------------------------------------------------------

def test_agreement_against_generative_oracle():
    """Construct instances where matched/total are known by construction."""
    rng = random.Random(11)
    for _ in range(200):
        n_risks = rng.randint(1, 6)
        system = [RiskItem(title=f"System Risk {i}",
                           likelihood=rng.choice(["Low", "Medium", "High"]),
                           impact=rng.choice(["Low", "Medium", "High"]),
                           reasoning="") for i in range(n_risks)]
        assessors = [f"assessor_{j}" for j in range(rng.randint(1, 4))]
        aliases = AliasMap()
        annotations = []
        expected_total = 0
        expected_matched = 0
        for i, risk in enumerate(system):
            for assessor in assessors:
                if rng.random() < 0.3:
                    continue  # this assessor skipped this risk
                expected_total += 1
                if rng.random() < 0.5:
                    title = risk.title
                else:
                    title = f"Variant {i} of {risk.title}"
                    aliases.add(title, risk.title)
                if rng.random() < 0.7:
                    severity = risk.severity.label
                    expected_matched += 1
                else:
                    others = [s for s in ("Low", "Medium", "High")
                              if s != risk.severity.label]
                    severity = rng.choice(others)
                annotations.append(PractitionerAnnotation(
                    assessor_id=assessor, risk_title=title, severity=severity))
        stat = severity_agreement(system, annotations, aliases)
        assert (stat.matched, stat.total) == (expected_matched, expected_total)


def test_coverage_against_generative_oracle():
    """Build pooled components explicitly and check class/match counts."""
    rng = random.Random(23)
    for _ in range(200):
        system = [RiskItem(title=f"Sys {i}", likelihood="High", impact="High",
                           reasoning="") for i in range(rng.randint(1, 5))]
        aliases = AliasMap()
        annotations = []
        serial = 0
        expected_classes = 0
        expected_matched = 0

        def annotate(title):
            annotations.append(PractitionerAnnotation(
                assessor_id=f"assessor_{rng.randint(0, 2)}",
                risk_title=title, severity="High"))

        # direct system-title mentions: each is its own matched class
        for risk in rng.sample(system, rng.randint(0, len(system))):
            annotate(risk.title)
            expected_classes += 1
            expected_matched += 1

        # variant components: chains of 1-3 variant titles merged by
        # practitioner-practitioner aliases; optionally matched by aliasing
        # the first variant to an unused system title
        unused = [r.title for r in system]
        for _ in range(rng.randint(0, 3)):
            size = rng.randint(1, 3)
            members = []
            for _ in range(size):
                members.append(f"Unique Variant {serial}")
                serial += 1
            for a, b in zip(members, members[1:]):
                aliases.add(a, b)
            for member in members:
                annotate(member)
            expected_classes += 1
            if unused and rng.random() < 0.5:
                aliases.add(members[0], unused.pop())
                expected_matched += 1
        stat = coverage(system, annotations, aliases)
        assert (stat.matched, stat.total) == (expected_matched, expected_classes)


# -- stability, variability, latency ----------------------------------------

def test_stability_counts_failures_in_denominator():
    records = [run_record(run_id=f"r{i}") for i in range(28)]
    records.append(run_record(run_id="r28", completed=False,
                              failure_kind="context_overflow",
                              structural_ok=False, unique_threat_titles=[]))
    records.append(run_record(run_id="r29", completed=True, structural_ok=False))
    assert structural_stability(records) == Fraction(28, 30)
    assert structural_stability([]) is None
    assert structural_stability(records, {"model": "absent"}) is None


def test_variability_unions_normalized_titles():
    records = [
        run_record(run_id="a", unique_threat_titles=["Phishing", "Data Breach"]),
        run_record(run_id="b", unique_threat_titles=["phishing", "Malware"]),
        run_record(run_id="c", completed=False, unique_threat_titles=["Ignored"]),
    ]
    assert title_variability(records, "p", "m") == 3
    with pytest.raises(NoRunsSelected):
        title_variability(records, "p", "other-model")


def test_latency_single_case_study_run():
    stats = latency_stats([run_record(wall_seconds=878.0)])
    assert stats.mean_s == stats.min_s == stats.max_s == 878.0
    assert stats.runs == 1


def test_latency_mean_over_selector():
    records = [run_record(run_id=f"r{i}", wall_seconds=w, mode="multi_agent")
               for i, w in enumerate([60.2, 70.4, 80.6])]
    records.append(run_record(run_id="x", wall_seconds=900.0, mode="single_agent"))
    stats = latency_stats(records, {"mode": "multi_agent"})
    assert abs(stats.mean_s - 70.4) < 1e-9
    assert stats.runs == 3


def test_metrics_report_rendering():
    report = compute_metrics(
        records=[run_record()],
        system=fixture_register(),
        annotations=load_annotations(FIXTURES / "annotations.jsonl"),
        aliases=AliasMap.load(FIXTURES / "aliases.json"))
    table = report.render_table()
    assert "agreement     18/21 (0.857)" in table
    assert "coverage      12/13 (0.923)" in table
    assert "stability     1.000" in table
    doc = report.to_json()
    assert doc["agreement"]["matched"] == 18
    assert doc["stability"] == 1.0


# -- ablation sweep ----------------------------------------------------------

@pytest.fixture(scope="module")
def model_specs():
    specs = []
    for doc in json.loads((DATA_DIR / "ablation_models.json").read_text()):
        specs.append(ModelSpec(label=doc["label"], script=doc["script"],
                               context_window_tokens=doc.get("window", 4096)))
    return specs


def test_ablation_runs_and_resumes(profiles, corpus, model_specs, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    contracts = ContractSet(schema_mode="cross_sector")
    executed = run_ablation(list(profiles.values()), model_specs, 1,
                            "single_agent", ledger, contracts, corpus,
                            DATA_DIR / "stub")
    assert executed == 10  # 5 profiles x 2 models x 1 seed
    records = load_ledger(ledger)
    assert len(records) == 10
    assert all(r.completed for r in records)
    # rerunning the same sweep is a no-op
    assert run_ablation(list(profiles.values()), model_specs, 1,
                        "single_agent", ledger, contracts, corpus,
                        DATA_DIR / "stub") == 0
    # extending runs_per_cell only adds the missing seeds
    assert run_ablation(list(profiles.values()), model_specs, 2,
                        "single_agent", ledger, contracts, corpus,
                        DATA_DIR / "stub") == 10


def test_multi_agent_ablation_at_4096_never_completes(profiles, corpus,
                                                      model_specs, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    contracts = ContractSet(schema_mode="cross_sector")
    run_ablation(list(profiles.values()), model_specs, 1, "multi_agent",
                 ledger, contracts, corpus, DATA_DIR / "stub")
    records = load_ledger(ledger)
    assert len(records) == 10
    assert all(not r.completed for r in records)
    assert {r.failure_kind for r in records} == {"context_overflow"}
    assert structural_stability(records) == 0
