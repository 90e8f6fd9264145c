"""Exception types raised across the package."""


class IncDSTError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(IncDSTError, ValueError):
    pass


class InvalidLabelError(IncDSTError, ValueError):
    pass


class UnknownTokenError(IncDSTError, KeyError):
    pass


class TrainingDivergedError(IncDSTError, RuntimeError):
    pass


class ParseError(IncDSTError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(IncDSTError, ValueError):
    pass


class ConfigurationError(IncDSTError, ValueError):
    pass


class UndefinedRatioError(IncDSTError, ValueError):
    pass


class OrderingError(IncDSTError, RuntimeError):
    """A pipeline stage ran before the stage it depends on."""
