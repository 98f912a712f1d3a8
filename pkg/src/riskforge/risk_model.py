"""Deterministic risk-domain logic.

Likelihood and impact are ordinal (Low < Medium < High); severity is
their product on a 1..9 scale with three bands. Compliance rolls control
findings up to the five CSF functions, and contradiction checks compare
the risk register against the recommendation links.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from .errors import MissingFunction
from .grounding import FrameworkCitation

ORDINALS = {"low": 1, "medium": 2, "high": 3}
LEVEL_LABELS = {1: "Low", 2: "Medium", 3: "High"}
CSF_FUNCTIONS = ("Identify", "Protect", "Detect", "Respond", "Recover")


def parse_level(value: str) -> int:
    level = ORDINALS.get(value.strip().lower())
    if level is None:
        raise ValueError(f"not an ordinal level: {value!r} (expected Low/Medium/High)")
    return level


def normalize_title(title: str) -> str:
    """Case-fold, strip punctuation, collapse whitespace. Idempotent."""
    return " ".join(re.split(r"[^0-9a-z]+", title.lower())).strip()


@dataclass(frozen=True)
class SeverityScore:
    value: int
    band: str

    @property
    def label(self) -> str:
        return self.band.capitalize()


def derive_severity(likelihood: str, impact: str) -> SeverityScore:
    value = parse_level(likelihood) * parse_level(impact)
    if value >= 6:
        band = "high"
    elif value >= 3:
        band = "medium"
    else:
        band = "low"
    return SeverityScore(value=value, band=band)


@dataclass
class RiskItem:
    title: str
    likelihood: str
    impact: str
    reasoning: str
    linked_threat_titles: list[str] = field(default_factory=list)
    linked_control_gaps: list[str] = field(default_factory=list)
    citations: list[FrameworkCitation] = field(default_factory=list)

    @property
    def severity(self) -> SeverityScore:
        return derive_severity(self.likelihood, self.impact)

    @classmethod
    def from_dict(cls, doc: dict) -> "RiskItem":
        return cls(
            title=doc["title"],
            likelihood=doc["likelihood"],
            impact=doc["impact"],
            reasoning=doc["reasoning"],
            linked_threat_titles=list(doc.get("linked_threat_titles", [])),
            linked_control_gaps=list(doc.get("linked_control_gaps", [])),
        )


def rank_risks(register: Iterable[RiskItem]) -> list[RiskItem]:
    """Descending severity; ties broken by impact descending, then title."""
    return sorted(
        register,
        key=lambda r: (-r.severity.value, -parse_level(r.impact), r.title),
    )


@dataclass(frozen=True)
class ComplianceRollup:
    status: dict  # function -> Compliant | PartiallyCompliant | NotCompliant
    evidence: dict  # function -> list of finding strings


def compliance_rollup(control_assessment: dict) -> ComplianceRollup:
    functions = control_assessment.get("functions", {})
    status = {}
    evidence = {}
    for function in CSF_FUNCTIONS:
        if function not in functions:
            raise MissingFunction(f"control assessment lacks function {function!r}")
        findings = functions[function]
        gaps = [f for f in findings if f.get("status") == "gap"]
        if not gaps:
            status[function] = "Compliant"
        elif len(gaps) == len(findings):
            status[function] = "NotCompliant"
        else:
            status[function] = "PartiallyCompliant"
        evidence[function] = [f["finding"] for f in findings]
    return ComplianceRollup(status=status, evidence=evidence)


@dataclass(frozen=True)
class ContradictionFlag:
    kind: str  # unaddressed_high_risk | dangling_reference
    title: str
    detail: str


def check_contradictions(register: list[RiskItem], recommendations: dict) -> list[ContradictionFlag]:
    recs = recommendations.get("recommendations", [])
    linked = set()
    flags = []
    register_titles = {normalize_title(r.title): r.title for r in register}
    for rec in recs:
        for title in rec.get("linked_risk_titles", []):
            norm = normalize_title(title)
            linked.add(norm)
            if norm not in register_titles:
                flags.append(ContradictionFlag(
                    kind="dangling_reference",
                    title=title,
                    detail=f"recommendation {rec.get('action', '')!r} references a risk "
                           f"absent from the register",
                ))
    for risk in register:
        if risk.severity.band == "high" and normalize_title(risk.title) not in linked:
            flags.append(ContradictionFlag(
                kind="unaddressed_high_risk",
                title=risk.title,
                detail="high-severity risk has no linked recommendation",
            ))
    return flags
