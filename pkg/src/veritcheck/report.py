"""Verdicts, diagnostics and the per-proof check report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class codes:
    """Stable diagnostic codes (documented in docs/diagnostics.md)."""

    LEX_ERROR = "E001"
    PARSE_ERROR = "E002"
    NAME_ERROR = "E003"
    DEFINE_ERROR = "E004"
    SORT_ERROR = "E005"
    STRUCTURE_ERROR = "E010"
    DANGLING_PREMISE = "E011"
    SUBPROOF_PREMISE_ESCAPE = "E012"
    BAD_FINAL_STEP = "E013"
    UNDISCHARGED_ASSUME = "E014"
    DUPLICATE_INDEX = "E015"
    STEP_INVALID = "E020"
    STEP_UNCHECKED = "W021"
    CONTEXT_RULE = "W030"
    UNUSED_ARGS = "W031"
    IO_ERROR = "E040"


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    code: str
    message: str
    step: str | None = None
    rule: str | None = None

    def to_json(self) -> str:
        payload = {"severity": self.severity, "code": self.code,
                   "message": self.message}
        if self.step is not None:
            payload["step"] = self.step
        if self.rule is not None:
            payload["rule"] = self.rule
        return json.dumps(payload, sort_keys=True)

    def render(self) -> str:
        where = f" [{self.step}]" if self.step else ""
        return f"{self.severity}{where} {self.code}: {self.message}"


@dataclass(frozen=True)
class StepResult:
    verdict: str  # "valid", "invalid" or "unchecked"
    reason: str = ""
    elapsed: float = 0.0

    @property
    def is_valid(self):
        return self.verdict == "valid"


def valid(elapsed=0.0):
    return StepResult("valid", elapsed=elapsed)


def invalid(reason, elapsed=0.0):
    return StepResult("invalid", reason, elapsed)


def unchecked(reason, elapsed=0.0):
    return StepResult("unchecked", reason, elapsed)


@dataclass
class CheckReport:
    results: list = field(default_factory=list)  # (index, rule, StepResult)
    diagnostics: list = field(default_factory=list)

    def add(self, index, rule, result: StepResult):
        self.results.append((index, rule, result))
        if result.verdict == "invalid":
            self.diagnostics.append(Diagnostic(
                "error", codes.STEP_INVALID,
                result.reason or f"step {index} does not match rule {rule}",
                step=index, rule=rule))
        elif result.verdict == "unchecked":
            self.diagnostics.append(Diagnostic(
                "warning", codes.STEP_UNCHECKED,
                result.reason or f"rule {rule} is not checked",
                step=index, rule=rule))

    def count(self, verdict):
        return sum(1 for _, _, r in self.results if r.verdict == verdict)

    def overall_valid(self, allow_unchecked=False) -> bool:
        if self.count("invalid"):
            return False
        if self.count("unchecked") and not allow_unchecked:
            return False
        return True
