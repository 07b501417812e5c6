"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """A value lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A caller violated an operation's stated precondition."""


class ParseError(ValueError):
    """A data file row could not be parsed; carries the offending line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class FormatError(ValueError):
    """A data file is structurally inconsistent (e.g. ragged feature counts)."""


class ConfigError(ValueError):
    """Invalid or unknown run configuration."""


class DataError(ValueError):
    """Runtime data violates a model precondition (e.g. node id out of range)."""


class TrainingError(RuntimeError):
    """Training had to be aborted (e.g. non-finite loss)."""
