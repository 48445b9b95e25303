#!filepath: src/weakfbsde_app/mgcheck/report.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Literal, Mapping

CheckForm = Literal["two-sided", "upper-bound"]


@dataclass(frozen=True, slots=True)
class CheckReport:
    """Outcome of one statistical check.

    Attributes:
        name: Check identifier, e.g. "martingale-MX".
        statistic: Headline statistic.
        standard_error: Its standard error (0 for deterministic bounds).
        threshold: Pass threshold, in s.e. units for two-sided checks.
        passed: Verdict.
        form: "two-sided" for mean-zero tests, "upper-bound" for residual bounds.
        details: Per-step and auxiliary statistics.
    """

    name: str
    statistic: float
    standard_error: float
    threshold: float
    passed: bool
    form: CheckForm = "two-sided"
    details: Mapping[str, Any] = field(default_factory=dict)

    @property
    def z_score(self) -> float:
        if self.standard_error > 0:
            return abs(self.statistic) / self.standard_error
        return 0.0 if self.statistic == 0 else float("inf")

    def to_record(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "statistic": self.statistic,
            "standard_error": self.standard_error,
            "threshold": self.threshold,
            "pass": self.passed,
            "form": self.form,
            "details": dict(self.details),
        }
