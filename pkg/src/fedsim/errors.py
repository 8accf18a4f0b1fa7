class FedSimError(Exception):
    """Base class for fedsim errors."""


class ConfigError(FedSimError, ValueError):
    """Invalid configuration; the message names the offending field or key."""


class ParseError(FedSimError, ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.reason, self.line, self.path = message, line, path
        if line is not None:
            message = f"line {line}: {message}"
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class ConformanceError(FedSimError, ValueError):
    """Parameter sets whose names, order or shapes do not line up."""


class ProtocolError(FedSimError, RuntimeError):
    """Secure-aggregation round could not complete."""
