"""Exception types raised across the package."""


class Abr5gError(Exception):
    """Base class for all errors raised by abr5g."""


class MalformedTrace(Abr5gError, ValueError):
    """Trace input violates ordering or sign constraints."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DeadTrace(Abr5gError, ValueError):
    """Trace has no positive throughput sample."""


class InvalidInterval(Abr5gError, ValueError):
    pass


class InvalidSpec(Abr5gError, ValueError):
    pass


class InvalidRung(Abr5gError, IndexError):
    pass


class EmptyRecord(Abr5gError, ValueError):
    pass


class DegenerateReference(Abr5gError, ZeroDivisionError):
    pass


class SessionComplete(Abr5gError):
    """Raised when a chunk is requested past the end of the video."""


class PolicyFault(Abr5gError):
    """A policy returned something that is not a valid rung."""


class NumericalFault(Abr5gError, FloatingPointError):
    pass


class NoData(Abr5gError, ValueError):
    pass
