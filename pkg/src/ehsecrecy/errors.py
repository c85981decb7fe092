"""Exception hierarchy shared by all solver modules."""


class OSPError(Exception):
    """Base class for every error raised by this package."""


class DomainError(OSPError, ValueError):
    """An argument lies outside the domain of a function."""


class BracketError(OSPError, ValueError):
    """Root finder called on an interval whose endpoints do not bracket a root."""


class ConvergenceError(OSPError, RuntimeError):
    """An iterative method exhausted its iteration budget."""


class SingularMatrixError(OSPError, ArithmeticError):
    """A linear system is numerically singular."""


class SizeError(OSPError, ValueError):
    """A state space would exceed the configured size cap."""


class InfeasibleActionError(OSPError, ValueError):
    """A policy asks for more energy than the battery holds."""


class ConfigError(OSPError, ValueError):
    """A configuration file or object is malformed.

    ``line`` and ``field`` are filled in when the error can be traced to a
    location in a config file.
    """

    def __init__(self, message, *, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field is not None:
            where.append(f"field {self.field!r}")
        return f"{msg} ({', '.join(where)})" if where else msg
