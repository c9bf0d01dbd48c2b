"""Exception types shared across the package."""


class QrotError(Exception):
    """Base class for all package-specific errors."""


class ConvergenceError(QrotError):
    """A solver stopped before reaching its tolerance.

    Carries the best iterate found so the caller can inspect or reuse it.
    """

    def __init__(self, message, potential=None, plan=None, diagnostics=None):
        super().__init__(message)
        self.potential = potential
        self.plan = plan
        self.diagnostics = diagnostics


class InfeasibleSupportError(ConvergenceError):
    """The active-set support cannot carry a hollow bistochastic plan.

    Raised when the restricted dual diverges and the support stops growing;
    the fix is a larger or denser initial support.
    """


class CsvFormatError(QrotError):
    """A CSV artifact is malformed; ``line`` is the offending 1-based line."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
