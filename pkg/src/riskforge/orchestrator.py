"""Pipeline execution: staged DAG, budget enforcement, run records.

Five stages with one parallel pair (threat modeling and control
assessment both read only the intake profile). Before every stage the
prospective prompt is assembled exactly and checked against the context
window; the paper-observed failure mode is context accumulation outpacing
the window mid-pipeline, so the check runs per stage, not just once.
Failures never escape execute_pipeline: they are captured in the
RunRecord so ablation sweeps can count them.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import jsonschema

from .context_store import ContextEntry, ContextSnapshot, ContextStore
from .contracts import ENTRY_KINDS, ROLES, ContractSet
from .errors import (AgentFailed, ContextOverflow, ProfileInvalid, ProviderError,
                     ProviderUnreachable, StorageFailure, Unparseable)
from .gateway import CompletionRequest, ModelConfig
from .grounding import Corpus
from .risk_model import normalize_title
from .tokens import canonical_json, estimate_tokens
from . import report as report_mod

STAGES: list[list[str]] = [
    ["risk_intake"],
    ["threat_modeling", "control_assessment"],
    ["risk_scoring"],
    ["mitigation"],
    ["report_synthesis"],
]

SINGLE_AGENT_ROLE = "single_agent"

_LEDGER_LOCK = threading.Lock()


@dataclass
class RunRecord:
    run_id: str
    profile_id: str
    model_id: str
    mode: str  # multi_agent | single_agent
    seed: int
    completed: bool
    failed_stage: Optional[str] = None
    failure_kind: Optional[str] = None  # context_overflow | agent_failed | provider_error
    wall_seconds: float = 0.0
    structural_ok: bool = False
    unique_threat_titles: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "profile_id": self.profile_id,
            "model_id": self.model_id,
            "mode": self.mode,
            "seed": self.seed,
            "completed": self.completed,
            "failed_stage": self.failed_stage,
            "failure_kind": self.failure_kind,
            "wall_seconds": self.wall_seconds,
            "structural_ok": self.structural_ok,
            "unique_threat_titles": self.unique_threat_titles,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RunRecord":
        return cls(**doc)


@dataclass(frozen=True)
class BudgetDecision:
    ok: bool
    role: str
    prompt_tokens: int
    reserved_output_tokens: int
    context_window_tokens: int
    deficit: int
    largest_entry_key: Optional[str] = None
    largest_entry_tokens: int = 0

    def describe(self) -> str:
        verdict = "fits" if self.ok else f"overflows by {self.deficit}"
        detail = (f"role {self.role}: {self.prompt_tokens} prompt tokens + "
                  f"{self.reserved_output_tokens} reserved vs window "
                  f"{self.context_window_tokens} ({verdict})")
        if self.largest_entry_key:
            detail += (f"; largest context entry: {self.largest_entry_key} "
                       f"({self.largest_entry_tokens} tokens)")
        return detail


def enforce_budget(snapshot: Optional[ContextSnapshot], role: str,
                   config: ModelConfig, prompt_tokens: int) -> BudgetDecision:
    """Decide whether a fully assembled prompt fits the context window."""
    deficit = prompt_tokens + config.reserved_output_tokens - config.context_window_tokens
    largest_key = None
    largest_tokens = 0
    if snapshot is not None and snapshot.entries:
        largest = max(snapshot.entries, key=lambda e: e.token_estimate)
        largest_key = largest.key
        largest_tokens = largest.token_estimate
    return BudgetDecision(
        ok=deficit <= 0,
        role=role,
        prompt_tokens=prompt_tokens,
        reserved_output_tokens=config.reserved_output_tokens,
        context_window_tokens=config.context_window_tokens,
        deficit=max(deficit, 0),
        largest_entry_key=largest_key,
        largest_entry_tokens=largest_tokens,
    )


def record_run(record: RunRecord, path: Path) -> None:
    """Append one record to the run ledger as a single JSON line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = json.dumps(record.to_json(), ensure_ascii=False) + "\n"
    try:
        with _LEDGER_LOCK:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(line)
    except OSError as exc:
        raise StorageFailure(f"cannot append to run ledger {path}: {exc}") from exc


def load_ledger(path: Path) -> list[RunRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_json(json.loads(line)))
    return records


def _new_run_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    return f"{stamp}-{secrets.token_hex(2)}"


class _StageFailure(Exception):
    def __init__(self, role: str, kind: str, cause: Exception):
        self.role = role
        self.kind = kind
        self.cause = cause
        super().__init__(f"stage {role} failed ({kind}): {cause}")


def _classify(role: str, exc: Exception) -> _StageFailure:
    if isinstance(exc, ContextOverflow):
        return _StageFailure(role, "context_overflow", exc)
    if isinstance(exc, AgentFailed):
        return _StageFailure(role, "agent_failed", exc)
    if isinstance(exc, (ProviderError, ProviderUnreachable)):
        return _StageFailure(role, "provider_error", exc)
    raise exc


def _dedupe_titles(titles: list[str]) -> list[str]:
    seen = set()
    out = []
    for title in titles:
        norm = normalize_title(title)
        if norm not in seen:
            seen.add(norm)
            out.append(title)
    return out


def execute_pipeline(profile: dict, config: ModelConfig, mode: str, gateway,
                     corpus: Optional[Corpus], contracts: ContractSet,
                     out_dir: Optional[Path] = None) -> tuple[RunRecord, Optional[ContextEntry]]:
    """Run one assessment. Returns the run record and, when the run
    completed, the final report entry. Raises ProfileInvalid before any
    stage executes; every other failure lands in the record."""
    if mode not in ("multi_agent", "single_agent"):
        raise ValueError(f"unknown mode {mode!r}")
    try:
        jsonschema.Draft202012Validator(contracts.questionnaire_schema()).validate(profile)
    except jsonschema.ValidationError as exc:
        raise ProfileInvalid(f"questionnaire invalid: {exc.message}") from exc

    run_id = _new_run_id()
    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
    store = ContextStore(ENTRY_KINDS,
                         log_path=run_dir / "session.jsonl" if run_dir else None)

    record = RunRecord(
        run_id=run_id,
        profile_id=profile["profile_id"],
        model_id=config.model_id,
        mode=mode,
        seed=config.seed if config.seed is not None else 0,
        completed=False,
    )

    start = time.perf_counter()
    try:
        if mode == "multi_agent":
            _run_multi(profile, config, gateway, corpus, contracts, store)
        else:
            _run_single(profile, config, gateway, corpus, contracts, store)
        record.completed = True
    except _StageFailure as failure:
        record.failed_stage = failure.role
        record.failure_kind = failure.kind
    record.wall_seconds = time.perf_counter() - start

    report_entry: Optional[ContextEntry] = None
    if record.completed:
        report_entry = store.read_latest("report")
        record.structural_ok, record.unique_threat_titles = _structure_check(store, mode)
        if run_dir is not None:
            _write_outputs(store, corpus, config, mode, record, run_dir)
    store.close()
    return record, report_entry


def _run_role(contracts: ContractSet, role: str, store: ContextStore, gateway,
              corpus: Optional[Corpus], config: ModelConfig,
              extra: Optional[dict] = None) -> None:
    try:
        contracts.run_agent(role, store, gateway, corpus, config, extra=extra)
    except Exception as exc:  # classified below; unexpected kinds re-raise
        raise _classify(role, exc)


def _run_multi(profile: dict, config: ModelConfig, gateway, corpus,
               contracts: ContractSet, store: ContextStore) -> None:
    questionnaire = {"questionnaire": canonical_json(profile)}
    for stage in STAGES:
        snapshot = store.snapshot()
        for role in stage:
            extra = questionnaire if role == "risk_intake" else None
            grounding = contracts.gather_grounding(role, snapshot, corpus)
            prompt = contracts.assemble_prompt(role, snapshot, grounding, extra=extra)
            decision = enforce_budget(snapshot, role, config, estimate_tokens(prompt))
            if not decision.ok:
                raise _StageFailure(role, "context_overflow", ContextOverflow(
                    role, decision.prompt_tokens, decision.reserved_output_tokens,
                    decision.context_window_tokens))
        if len(stage) == 1:
            role = stage[0]
            extra = questionnaire if role == "risk_intake" else None
            _run_role(contracts, role, store, gateway, corpus, config, extra=extra)
        else:
            with ThreadPoolExecutor(max_workers=len(stage)) as pool:
                futures = {
                    pool.submit(_run_role, contracts, role, store, gateway,
                                corpus, config): role
                    for role in stage
                }
                failure = None
                for future in futures:
                    try:
                        future.result()
                    except _StageFailure as exc:
                        if failure is None:
                            failure = exc
                if failure is not None:
                    raise failure


def _single_prompt(profile: dict, contracts: ContractSet,
                   corpus: Optional[Corpus]) -> str:
    grounding = []
    if corpus is not None:
        grounding = corpus.retrieve(
            "access control authentication policy incident response monitoring", 4)
    parts = [
        "You are a security analyst performing a complete cybersecurity risk "
        "assessment in a single pass. Work through every stage below in order.",
        "",
        "=== QUESTIONNAIRE ===",
        canonical_json(profile),
        "",
        "=== FRAMEWORK EXCERPTS ===",
    ]
    if grounding:
        for excerpt in grounding:
            parts.append(f"[{excerpt.framework} {excerpt.identifier}] "
                         f"{excerpt.title}: {excerpt.body}")
    else:
        parts.append("(none supplied)")
    parts += [
        "",
        "=== CITATION POLICY ===",
        "Reference framework control identifiers only if they appear verbatim in "
        "the FRAMEWORK EXCERPTS section above.",
        "",
        "=== TASK ===",
        contracts.combined_task_text(canonical_json(profile)),
        "",
        "Respond with a single JSON object with exactly three threats, three "
        "risks, and three recommendations.",
    ]
    return "\n".join(parts)


def _run_single(profile: dict, config: ModelConfig, gateway, corpus,
                contracts: ContractSet, store: ContextStore) -> None:
    from .contracts import MAX_ATTEMPTS
    from .gateway import RETRY_MARKER

    prompt = _single_prompt(profile, contracts, corpus)
    decision = enforce_budget(None, SINGLE_AGENT_ROLE, config, estimate_tokens(prompt))
    if not decision.ok:
        raise _StageFailure(SINGLE_AGENT_ROLE, "context_overflow", ContextOverflow(
            SINGLE_AGENT_ROLE, decision.prompt_tokens,
            decision.reserved_output_tokens, decision.context_window_tokens))

    last_violations = ()
    for attempt in range(1, MAX_ATTEMPTS + 1):
        try:
            result = gateway.complete(CompletionRequest(
                role=SINGLE_AGENT_ROLE, prompt=prompt, config=config))
        except Exception as exc:
            raise _classify(SINGLE_AGENT_ROLE, exc)
        try:
            outcome, doc = contracts.validate_single_output(result.text, attempt=attempt)
        except Unparseable:
            outcome, doc = None, None
        if outcome is not None and outcome.valid:
            store.append_entry("report", SINGLE_AGENT_ROLE, doc)
            return
        last_violations = outcome.violations if outcome is not None else (
            ("$", "no parseable JSON object"),)
        violation_lines = "\n".join(f"- {p}: {m}" for p, m in last_violations)
        prompt = (f"{prompt}\n\n=== {RETRY_MARKER} ===\n"
                  f"Your previous output did not satisfy the schema:\n{violation_lines}\n"
                  f"Emit a corrected JSON object.")
    raise _StageFailure(SINGLE_AGENT_ROLE, "agent_failed",
                        AgentFailed(SINGLE_AGENT_ROLE, last_violations))


def _structure_check(store: ContextStore, mode: str) -> tuple[bool, list[str]]:
    """The 3/3/3 structural stability check plus threat title collection."""
    if mode == "single_agent":
        doc = store.read_latest("report").payload
        threats = doc.get("threats", [])
        risks = doc.get("risks", [])
        recs = doc.get("recommendations", [])
    else:
        threats = store.read_latest("threat_model").payload.get("threats", [])
        risks = store.read_latest("risk_register").payload.get("risks", [])
        recs = store.read_latest("recommendations").payload.get("recommendations", [])
    titles = _dedupe_titles([t.get("title", "") for t in threats])
    structural_ok = len(threats) == 3 and len(risks) == 3 and len(recs) == 3
    return structural_ok, titles


def _write_outputs(store: ContextStore, corpus: Optional[Corpus],
                   config: ModelConfig, mode: str, record: RunRecord,
                   run_dir: Path) -> None:
    if mode == "single_agent":
        doc = store.read_latest("report").payload
        (run_dir / "report.json").write_text(
            json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8")
        return
    snapshot = store.snapshot()
    citations = []
    if corpus is not None:
        citations = corpus.verify_citations(report_mod.citation_source_text(snapshot))
    flags = report_mod.contradiction_flags(snapshot)
    markdown = report_mod.render_report(snapshot, citations, flags,
                                        model_id=config.model_id, mode=mode)
    (run_dir / "report.md").write_text(markdown, encoding="utf-8")
    doc = report_mod.report_document(snapshot, citations, flags, record)
    (run_dir / "report.json").write_text(
        json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8")
