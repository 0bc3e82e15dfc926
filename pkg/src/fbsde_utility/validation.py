"""Report containers shared by the (C1) and (C2) style audits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    observed: float
    bound: float
    worst_point: Any = None
    detail: str = ""

    def to_dict(self) -> dict:
        point = self.worst_point
        if point is not None and hasattr(point, "tolist"):
            point = point.tolist()
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "observed": float(self.observed),
            "bound": float(self.bound),
            "worst_point": point,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ValidationReport:
    """Ordered list of named checks; ``passed`` is true only if every check passed."""

    subject: str
    checks: tuple[CheckResult, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"{self.subject}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            flag = "ok  " if c.passed else "FAIL"
            lines.append(f"  [{flag}] {c.name}: observed={c.observed:.6g} bound={c.bound:.6g} {c.detail}".rstrip())
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }
