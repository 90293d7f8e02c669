"""Exception hierarchy shared by every pdisc module."""


class PdiscError(Exception):
    """Base class for all errors raised by pdisc."""


class SizeError(PdiscError, ValueError):
    """Requested instance dimensions are empty or too large to allocate."""


class InfeasibleError(PdiscError):
    """An (alpha, kappa) pair or an LP instance admits no feasible point.

    ``certificate`` optionally carries a Farkas-type witness or solver status.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ScheduleError(PdiscError):
    """A slack schedule violates the precondition of the step that consumes it."""

    def __init__(self, message, round_index=None, row=None, diagnostics=None):
        super().__init__(message)
        self.round_index = round_index
        self.row = row
        self.diagnostics = diagnostics or {}


class DegenerateStateError(PdiscError):
    """The coloring ODE reached a state where p0 is undefined (u(T2) = 1)."""


class HorizonError(PdiscError):
    """The coloring ODE did not cross u = 1 - v before the integration horizon."""


class RetryExhaustedError(PdiscError):
    """Every partial-coloring attempt of a pipeline round failed."""

    def __init__(self, message, round_index=None, diagnostics=None):
        super().__init__(message)
        self.round_index = round_index
        self.diagnostics = diagnostics or {}


class RegimeError(PdiscError):
    """The requested regime is not runnable at the requested scale."""
