"""Evaluation kit: agreement, coverage, stability, variability, latency.

Risk matching between system output and practitioner annotations was a
human judgment in the original study, so it is encoded here as explicit
alias data: a pair (a, b) declares two titles equivalent after
normalization. That keeps the bundled case-study fixtures exactly
reproducible without any semantic matching. Ratios are computed with
exact rational arithmetic and only rounded for display; an undefined
ratio renders as n/a, never as 0 or 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional

from .errors import NoRunsSelected, RiskforgeError
from .orchestrator import RunRecord
from .risk_model import RiskItem, normalize_title


@dataclass(frozen=True)
class PractitionerAnnotation:
    assessor_id: str
    risk_title: str
    severity: str  # Low | Medium | High


def load_annotations(path: Path) -> list[PractitionerAnnotation]:
    annotations = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            ann = PractitionerAnnotation(
                assessor_id=doc["assessor_id"],
                risk_title=doc["risk_title"],
                severity=doc["severity"],
            )
            key = (ann.assessor_id, normalize_title(ann.risk_title))
            if key in seen:
                raise RiskforgeError(f"duplicate annotation for {key}")
            seen.add(key)
            annotations.append(ann)
    return annotations


class AliasMap:
    """Declared title equivalences, symmetric after normalization."""

    def __init__(self, pairs: Iterable[tuple[str, str]] = ()):
        self._pairs: set[frozenset] = set()
        for a, b in pairs:
            self.add(a, b)

    def add(self, a: str, b: str) -> None:
        na, nb = normalize_title(a), normalize_title(b)
        if na != nb:
            self._pairs.add(frozenset((na, nb)))

    @classmethod
    def load(cls, path: Path) -> "AliasMap":
        pairs = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls((a, b) for a, b in pairs)

    def equivalent(self, a: str, b: str) -> bool:
        na, nb = normalize_title(a), normalize_title(b)
        return na == nb or frozenset((na, nb)) in self._pairs

    def partners(self, title: str) -> set[str]:
        norm = normalize_title(title)
        out = set()
        for pair in self._pairs:
            if norm in pair:
                out |= pair - {norm}
        return out

    def check_unambiguous(self, system_titles: Iterable[str]) -> None:
        """No practitioner title may alias-match two distinct system titles."""
        system_norms = {normalize_title(t) for t in system_titles}
        candidates = {n for pair in self._pairs for n in pair} - system_norms
        for cand in candidates:
            hits = {n for n in self.partners(cand) if n in system_norms}
            if len(hits) > 1:
                raise RiskforgeError(
                    f"title {cand!r} aliases to multiple system risks: {sorted(hits)}")


@dataclass
class RatioStat:
    matched: int
    total: int

    @property
    def ratio(self) -> Optional[Fraction]:
        if self.total == 0:
            return None
        return Fraction(self.matched, self.total)

    def display(self) -> str:
        if self.ratio is None:
            return "n/a"
        return f"{self.matched}/{self.total} ({float(self.ratio):.3f})"


def severity_agreement(system: list[RiskItem],
                       annotations: list[PractitionerAnnotation],
                       aliases: AliasMap) -> RatioStat:
    """For every (system risk, assessor) pair where the assessor annotated
    an alias-matched title, count exact severity-label matches."""
    aliases.check_unambiguous([r.title for r in system])
    matched = 0
    total = 0
    assessors = sorted({a.assessor_id for a in annotations})
    for risk in system:
        label = risk.severity.label
        for assessor in assessors:
            hits = [a for a in annotations
                    if a.assessor_id == assessor
                    and aliases.equivalent(a.risk_title, risk.title)]
            if not hits:
                continue
            total += 1
            if any(a.severity == label for a in hits):
                matched += 1
    return RatioStat(matched=matched, total=total)


def coverage(system: list[RiskItem],
             annotations: list[PractitionerAnnotation],
             aliases: AliasMap) -> RatioStat:
    """Pool distinct practitioner titles, collapse practitioner-side
    aliases, and count how many pooled items the system also caught."""
    aliases.check_unambiguous([r.title for r in system])
    system_norms = {normalize_title(r.title) for r in system}
    pooled = list(dict.fromkeys(normalize_title(a.risk_title) for a in annotations))

    # Union-find over pooled titles; only practitioner-to-practitioner alias
    # pairs merge pool classes (a variant paired with a system title stays
    # its own pooled item, it just counts as matched).
    parent = {t: t for t in pooled}

    def find(t):
        while parent[t] != t:
            parent[t] = parent[parent[t]]
            t = parent[t]
        return t

    for a in pooled:
        for b in aliases.partners(a):
            if b in parent and a not in system_norms and b not in system_norms:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[rb] = ra

    classes: dict[str, list[str]] = {}
    for title in pooled:
        classes.setdefault(find(title), []).append(title)

    matched = 0
    for members in classes.values():
        if any(member in system_norms
               or any(p in system_norms for p in aliases.partners(member))
               for member in members):
            matched += 1
    return RatioStat(matched=matched, total=len(classes))


def _select(records: list[RunRecord], selector: Optional[dict] = None) -> list[RunRecord]:
    selector = selector or {}
    out = []
    for record in records:
        if "model" in selector and record.model_id != selector["model"]:
            continue
        if "mode" in selector and record.mode != selector["mode"]:
            continue
        if "profile" in selector and record.profile_id != selector["profile"]:
            continue
        out.append(record)
    return out


def structural_stability(records: list[RunRecord],
                         selector: Optional[dict] = None) -> Optional[Fraction]:
    """Fraction of selected runs that completed with the expected 3/3/3
    structure. Non-completed runs count as failures in the denominator."""
    selected = _select(records, selector)
    if not selected:
        return None
    ok = sum(1 for r in selected if r.completed and r.structural_ok)
    return Fraction(ok, len(selected))


def title_variability(records: list[RunRecord], profile: str, model: str) -> int:
    selected = [r for r in _select(records, {"profile": profile, "model": model})
                if r.completed]
    if not selected:
        raise NoRunsSelected(f"no completed runs for profile={profile} model={model}")
    titles = set()
    for record in selected:
        titles.update(normalize_title(t) for t in record.unique_threat_titles)
    return len(titles)


@dataclass(frozen=True)
class LatencyStats:
    mean_s: float
    min_s: float
    max_s: float
    runs: int


def latency_stats(records: list[RunRecord],
                  selector: Optional[dict] = None) -> LatencyStats:
    selected = _select(records, selector)
    if not selected:
        raise NoRunsSelected("latency selector matched no runs")
    walls = [r.wall_seconds for r in selected]
    return LatencyStats(mean_s=sum(walls) / len(walls), min_s=min(walls),
                        max_s=max(walls), runs=len(walls))


@dataclass
class MetricsReport:
    agreement: Optional[RatioStat] = None
    coverage: Optional[RatioStat] = None
    stability: Optional[Fraction] = None
    variability: dict = field(default_factory=dict)
    latency: Optional[LatencyStats] = None

    def to_json(self) -> dict:
        def ratio_doc(stat: Optional[RatioStat]):
            if stat is None:
                return None
            return {"matched": stat.matched, "total": stat.total,
                    "ratio": None if stat.ratio is None else round(float(stat.ratio), 6)}

        return {
            "agreement": ratio_doc(self.agreement),
            "coverage": ratio_doc(self.coverage),
            "stability": None if self.stability is None else round(float(self.stability), 6),
            "variability": self.variability,
            "latency": None if self.latency is None else {
                "mean_s": round(self.latency.mean_s, 3),
                "min_s": round(self.latency.min_s, 3),
                "max_s": round(self.latency.max_s, 3),
                "runs": self.latency.runs,
            },
        }

    def render_table(self) -> str:
        lines = ["metric        value", "------        -----"]
        lines.append("agreement     "
                     + (self.agreement.display() if self.agreement else "n/a"))
        lines.append("coverage      "
                     + (self.coverage.display() if self.coverage else "n/a"))
        if self.stability is None:
            lines.append("stability     n/a")
        else:
            lines.append(f"stability     {float(self.stability):.3f}")
        for key in sorted(self.variability):
            lines.append(f"variability   {key}: {self.variability[key]} unique titles")
        if self.latency is not None:
            lines.append(f"latency       mean {self.latency.mean_s:.1f}s "
                         f"min {self.latency.min_s:.1f}s max {self.latency.max_s:.1f}s "
                         f"over {self.latency.runs} runs")
        return "\n".join(lines)


def compute_metrics(records: Optional[list[RunRecord]] = None,
                    system: Optional[list[RiskItem]] = None,
                    annotations: Optional[list[PractitionerAnnotation]] = None,
                    aliases: Optional[AliasMap] = None,
                    selector: Optional[dict] = None) -> MetricsReport:
    report = MetricsReport()
    if system is not None and annotations is not None:
        amap = aliases or AliasMap()
        report.agreement = severity_agreement(system, annotations, amap)
        report.coverage = coverage(system, annotations, amap)
    if records:
        selected = _select(records, selector)
        report.stability = structural_stability(selected)
        cells = sorted({(r.profile_id, r.model_id) for r in selected})
        for profile, model in cells:
            try:
                count = title_variability(selected, profile, model)
            except NoRunsSelected:
                continue
            report.variability[f"{profile}/{model}"] = count
        if selected:
            report.latency = latency_stats(selected)
    return report


@dataclass(frozen=True)
class ModelSpec:
    """One ablation column: a label plus how to run it."""

    label: str
    script: str  # stub script name, e.g. "specific" or "generic"
    context_window_tokens: int = 4096
    sleep_seconds: float = 0.0


def run_ablation(profiles: list[dict], models: list[ModelSpec], runs_per_cell: int,
                 mode: str, ledger_path: Path, contracts, corpus,
                 stub_root: Path, workers: int = 1) -> int:
    """Execute profiles x models x seeds, appending RunRecords to the
    ledger. Triples already present are skipped, so reruns resume."""
    from concurrent.futures import ThreadPoolExecutor

    from .gateway import ModelConfig, StubGateway
    from .orchestrator import execute_pipeline, load_ledger, record_run

    ledger_path = Path(ledger_path)
    done = set()
    if ledger_path.exists():
        for record in load_ledger(ledger_path):
            done.add((record.profile_id, record.model_id, record.seed))

    cells = []
    for profile in profiles:
        for spec in models:
            for seed in range(runs_per_cell):
                if (profile["profile_id"], spec.label, seed) not in done:
                    cells.append((profile, spec, seed))

    def run_cell(cell):
        profile, spec, seed = cell
        gateway = StubGateway(Path(stub_root) / spec.script,
                              sleep_seconds=spec.sleep_seconds)
        config = ModelConfig(model_id=spec.label,
                             context_window_tokens=spec.context_window_tokens,
                             seed=seed)
        record, _ = execute_pipeline(profile, config, mode, gateway, corpus, contracts)
        record.model_id = spec.label
        record_run(record, ledger_path)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_cell, cells))
    else:
        for cell in cells:
            run_cell(cell)
    return len(cells)
