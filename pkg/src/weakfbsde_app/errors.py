#!src/weakfbsde_app/errors.py
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional


class ErrorKind(str, Enum):
    UNKNOWN = "unknown"
    INVALID_COEFFICIENT = "invalid_coefficient"
    MOLLIFICATION = "mollification_failure"
    DOMAIN = "domain"
    ELLIPTICITY = "ellipticity"
    DIVERGENCE = "divergence"
    SINGULAR_SYSTEM = "singular_system"
    CONFIGURATION = "configuration"
    PROBLEM_NOT_FOUND = "problem_not_found"
    OVERFLOW = "overflow"
    INSUFFICIENT_SAMPLE = "insufficient_sample"
    OUT_OF_NODAL_SET = "out_of_nodal_set"
    DEGENERATE_SIGMA = "degenerate_sigma"
    GRID = "grid"


@dataclass(frozen=True, slots=True)
class LabErrorDetails:
    kind: ErrorKind
    message: str = ""
    context: Mapping[str, Any] = field(default_factory=dict)

    @property
    def reason(self) -> str:
        return str(self.kind.value)


class LabError(Exception):
    """Base error; carries a kind and the offending probe, path or step."""

    kind: ErrorKind = ErrorKind.UNKNOWN

    def __init__(self, message: str = "", **context: Any) -> None:
        super().__init__(message or self.kind.value)
        self._details = LabErrorDetails(
            kind=self.kind, message=message, context=dict(context)
        )

    @property
    def details(self) -> LabErrorDetails:
        return self._details

    @property
    def context(self) -> Mapping[str, Any]:
        return self._details.context

    @property
    def reason(self) -> str:
        return self._details.reason

    @property
    def exit_code(self) -> int:
        return 2


class InvalidCoefficientError(LabError):
    kind = ErrorKind.INVALID_COEFFICIENT


class MollificationError(LabError):
    kind = ErrorKind.MOLLIFICATION


class DomainError(LabError):
    kind = ErrorKind.DOMAIN


class EllipticityError(LabError):
    kind = ErrorKind.ELLIPTICITY


class DivergenceError(LabError):
    kind = ErrorKind.DIVERGENCE


class PicardDivergenceError(DivergenceError):
    """Picard iteration did not settle within its cap."""

    def __init__(self, message: str = "", *, residual: float, step: int, **context: Any) -> None:
        super().__init__(message, residual=residual, step=step, **context)

    @property
    def residual(self) -> float:
        return float(self.context["residual"])


class PolicyIterationError(DivergenceError):
    pass


class SingularSystemError(LabError):
    kind = ErrorKind.SINGULAR_SYSTEM


class ConfigurationError(LabError):
    kind = ErrorKind.CONFIGURATION


class ProblemNotFoundError(ConfigurationError):
    kind = ErrorKind.PROBLEM_NOT_FOUND


class GirsanovOverflowError(LabError):
    kind = ErrorKind.OVERFLOW

    @property
    def path_index(self) -> Optional[int]:
        value = self.context.get("path")
        return None if value is None else int(value)


class InsufficientSampleError(LabError):
    kind = ErrorKind.INSUFFICIENT_SAMPLE


class OutOfNodalSetError(LabError):
    kind = ErrorKind.OUT_OF_NODAL_SET


class DegenerateSigmaError(LabError):
    kind = ErrorKind.DEGENERATE_SIGMA


class GridError(LabError):
    kind = ErrorKind.GRID
