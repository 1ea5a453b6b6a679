"""Exception types shared across the package."""


class FaerecError(Exception):
    """Base class for all package errors."""


class DimensionError(FaerecError, ValueError):
    pass


class DomainError(FaerecError, ValueError):
    """Raised for math outside an operation's domain, e.g. log of a non-positive value."""


class ContractError(FaerecError, RuntimeError):
    pass


class DegenerateInputError(FaerecError, ValueError):
    """Raised when an input has a zero norm where a division by it is required."""


class GroupTooSmallError(DegenerateInputError):
    pass


class ParseError(FaerecError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class FormatError(FaerecError, ValueError):
    pass


class ConsistencyError(FaerecError, ValueError):
    pass


class EmptyDatasetError(FaerecError, ValueError):
    pass


class ConfigError(FaerecError, ValueError):
    pass


class TrainingError(FaerecError, RuntimeError):
    pass
