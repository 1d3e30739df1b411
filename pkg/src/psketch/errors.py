"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation (e.g. non-finite)."""


class ParseError(ValueError):
    """Malformed matrix file. Carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ResourceError(RuntimeError):
    """A size guard was exceeded (memory, grid size, astronomical row counts)."""


class ConditioningError(RuntimeError):
    """A sketched matrix lost rank; retry with a different seed."""
