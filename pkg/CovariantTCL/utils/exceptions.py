"""
Exception hierarchy for CovariantTCL.
Library code raises these; only the CLI maps them to exit codes.
"""

from typing import Optional


class TCLError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(TCLError, ValueError):
    """Operand shapes do not fit together."""


class HermiticityError(TCLError, ValueError):
    """A Hamiltonian or observable is not Hermitian within tolerance."""


class StateValidationError(TCLError, ValueError):
    """A matrix that must be a density matrix is not one."""


class GridError(TCLError, ValueError):
    """Invalid foliation or slice indices."""


class ModelError(TCLError, ValueError):
    """A model, drive or reference does not have the required shape."""


class ConfigError(TCLError, ValueError):
    """Run configuration failed schema validation."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")


class SingularMatrixError(TCLError, ArithmeticError):
    """Matrix inversion requested for a numerically singular matrix."""

    def __init__(self, condition: float, threshold: float):
        self.condition = condition
        self.threshold = threshold
        super().__init__(
            f"matrix is numerically singular: condition estimate {condition:.3e} > {threshold:.1e}"
        )


class TCLBreakdownError(TCLError, ArithmeticError):
    """The convolutionless rearrangement lost invertibility (theta or W)."""

    def __init__(self, slice_index: int, time: float, condition: float, operator: str):
        self.slice_index = slice_index
        self.time = time
        self.condition = condition
        self.operator = operator
        super().__init__(
            f"TCL breakdown at slice {slice_index} (t={time:.6g}): "
            f"{operator} condition estimate {condition:.3e}"
        )
