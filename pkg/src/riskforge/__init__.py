"""riskforge: automated cybersecurity risk assessments via a six-agent pipeline.

Six specialized agents (intake, threat modeling, control assessment, risk
scoring, mitigation, report synthesis) coordinate through a shared
append-only context store. Framework citations are grounded against an
indexed corpus, context-window budgets are enforced before every model
call, and a deterministic stub gateway makes the whole pipeline
reproducible without model weights.
"""

__version__ = "0.1.0"
