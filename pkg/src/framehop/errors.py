"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: usage/data problems exit 2,
failed checks exit 1, numeric blowups exit 3.
"""


class FramehopError(Exception):
    """Base class for all package errors."""


class DomainError(FramehopError, ValueError):
    """Input outside an operation's stated domain."""


class ShapeError(FramehopError, ValueError):
    """Dimension mismatch between tensors."""


class CapacityError(DomainError):
    """Input exceeds a configured padding bound (e.g. too many SRL args)."""


class DataFormatError(FramehopError, ValueError):
    """A file could not be parsed (bad JSON, bad base64, bad version)."""


class SchemaError(DataFormatError):
    """A parsed file violates the episode/checkpoint/trace schema."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        detail = message
        if line is not None:
            detail = f"line {line}: {detail}"
        if field is not None:
            detail = f"{detail} (field: {field})"
        super().__init__(detail)
        self.line = line
        self.field = field


class IntegrityError(FramehopError):
    """Synthetic episode content disagrees with its ground-truth plan."""


class StateError(FramehopError, RuntimeError):
    """Operation invoked in an invalid state (e.g. optimizer without grads)."""


class NumericError(FramehopError, ArithmeticError):
    """A non-finite value appeared where the contract requires finite ones."""
