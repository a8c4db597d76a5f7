"""
Exception hierarchy shared by every impedans module.

The CLI maps these onto process exit codes:
- 0 success
- 1 validation (DomainError, SchemaError)
- 2 numeric failure (NumericError)
"""

from typing import Optional


class ImpedansError(Exception):
    """Base class for all impedans errors."""

    exit_code: int = 1


class DomainError(ImpedansError, ValueError):
    """A precondition on an input value was violated."""


class PoleError(DomainError):
    """A rational expression hit its pole (e.g. zeta*cos(theta) = -1)."""


class SingularityError(DomainError):
    """A field or layer expression is singular at the requested point."""


class GridMismatchError(DomainError):
    """Two frequency grids that must align do not."""


class SchemaError(ImpedansError):
    """A file or config failed schema validation."""

    def __init__(self, message: str, locations: Optional[list[str]] = None):
        super().__init__(message)
        self.locations = locations or []


class NumericError(ImpedansError):
    """A non-finite value appeared during computation."""

    exit_code = 2

    def __init__(self, message: str, location: Optional[str] = None):
        if location:
            message = f"{message} (at {location})"
        super().__init__(message)
        self.location = location


class TrainingAbortedError(NumericError):
    """Training stopped on a non-finite loss or a fully degenerate boundary."""

    def __init__(
        self,
        message: str,
        epoch: Optional[int] = None,
        frequency_hz: Optional[float] = None,
    ):
        parts = []
        if epoch is not None:
            parts.append(f"epoch={epoch}")
        if frequency_hz is not None:
            parts.append(f"frequency={frequency_hz:.2f} Hz")
        super().__init__(message, ", ".join(parts) or None)
        self.epoch = epoch
        self.frequency_hz = frequency_hz


class DegenerateBoundaryError(DomainError):
    """Too few boundary points have a usable normal derivative."""

    def __init__(self, message: str, frequency_index: int):
        super().__init__(message)
        self.frequency_index = frequency_index
