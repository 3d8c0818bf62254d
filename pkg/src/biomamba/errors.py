"""Exception hierarchy shared by every layer of the package."""


class BioMambaError(Exception):
    """Base class for all package errors."""


class ConfigError(BioMambaError, ValueError):
    """Invalid configuration (bad hyperparameters, unknown keys, impossible physics)."""


class DataError(BioMambaError, ValueError):
    """Malformed or inconsistent data (labels out of range, empty splits)."""


class ShapeError(BioMambaError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(BioMambaError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ContractError(BioMambaError, RuntimeError):
    """A precondition of an API call was violated by the caller."""


class NumericError(BioMambaError, FloatingPointError):
    """A computation produced a non-finite value."""


class ContainerError(DataError):
    """A binary container could not be parsed; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UndefinedMetricError(BioMambaError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""
