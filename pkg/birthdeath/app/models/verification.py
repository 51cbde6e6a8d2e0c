"""Identity-suite results."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class CheckResult:
    name: str
    chain: str
    passed: bool
    hard: bool  # a failed hard check makes the suite fail
    value: float | None = None
    reference: float | None = None
    detail: str = ""
    seconds: float = 0.0


@dataclass(frozen=True)
class VerificationReport:
    checks: list[CheckResult]
    quick: bool
    samples: int
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.hard)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def matrix(self) -> dict[str, dict[str, bool]]:
        """chain -> check name -> passed."""
        out: dict[str, dict[str, bool]] = {}
        for c in self.checks:
            out.setdefault(c.chain, {})[c.name] = c.passed
        return out
