"""Exception hierarchy shared by every mechanism and solver."""


class MechanismError(Exception):
    """Base class for all errors raised by :mod:`mechdesign`."""


class DomainError(MechanismError, ValueError):
    """An input lies outside the domain of a formula (e.g. ``log`` of 0)."""


class ConfigurationError(MechanismError, ValueError):
    """Parameters violate a mechanism invariant (e.g. an infeasible reserve bid)."""


class ConvergenceError(MechanismError, RuntimeError):
    """An iterative scheme hit its step cap without settling.

    The last iterate, the residual at exit and (for traced runs) the partial
    trace are attached so callers can inspect or plot the failure.
    """

    def __init__(self, message, *, last_iterate=None, residual=None, trace=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.trace = trace


class NoSolutionError(MechanismError, RuntimeError):
    """A nonlinear system could not be solved; ``diagnostics`` says why."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SingularMatrixError(MechanismError, ArithmeticError):
    """The price matrix is numerically singular."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
