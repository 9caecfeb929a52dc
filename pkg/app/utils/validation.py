# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Solver exceptions and small argument validators."""
# -------------------------------------------
import math
from typing import Any, Optional

import numpy as np


class SolverError(Exception):
    """Base class for every error raised by the solver."""

    exit_code = 1


class ValidationError(SolverError):
    """Invalid inputs, malformed configuration or unknown names."""

    exit_code = 2


class ConfigurationError(ValidationError):
    """Numerical parameters that cannot be honoured (CFL cap, short skeleton)."""


class NotApplicableError(SolverError):
    """An oracle was asked to handle a problem outside its pre-conditions."""

    exit_code = 2


class NumericError(SolverError):
    """Non-finite values or numerical breakdown during a run."""

    exit_code = 3


class CoverageError(NumericError):
    """A control bucket holds too few scenarios for its regression."""

    def __init__(self, message: str, coverage: Optional[np.ndarray] = None):
        super().__init__(message)
        self.coverage = coverage


class FilterCollapseError(NumericError):
    """All particle weights vanished."""


class SimulationError(NumericError):
    """Too many simulated paths left the admissible region."""


class InternalError(SolverError):
    """An algorithmic invariant failed; carries diagnostics."""

    def __init__(self, message: str, diagnostics: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def require_positive(name: str, value: float) -> float:
    if not math.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be positive and finite, got {value!r}")
    return float(value)


def require_positive_int(name: str, value: int) -> int:
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValidationError(f"{name} must be an integer >= 1, got {value!r}")
    return int(value)

