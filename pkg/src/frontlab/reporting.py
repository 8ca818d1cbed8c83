"""Pass/fail bookkeeping shared by the verification stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

__all__ = ["CheckResult", "VerificationReport"]


@dataclass
class CheckResult:
    """One named check with the measured value and its threshold."""

    name: str
    passed: bool
    value: Any = None
    threshold: Optional[float] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": self.value,
            "threshold": self.threshold,
            "detail": self.detail,
        }


@dataclass
class VerificationReport:
    """A collection of checks with an aggregate verdict."""

    name: str
    checks: list = field(default_factory=list)

    def add(self, check: CheckResult) -> None:
        self.checks.append(check)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def get(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }

    def summary_lines(self) -> list:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            extra = ""
            if c.value is not None:
                extra += f" value={c.value}"
            if c.threshold is not None:
                extra += f" threshold={c.threshold}"
            if c.detail:
                extra += f" ({c.detail})"
            lines.append(f"[{status}] {self.name}/{c.name}{extra}")
        return lines
