"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries a ``exit_code``.
"""


class FblError(Exception):
    exit_code = 1


class DomainError(FblError, ValueError):
    """An argument lies outside the mathematical domain of a formula."""

    exit_code = 2


class RegionError(DomainError):
    """A point lies outside the region where an analytic result is valid."""


class UsageError(FblError, ValueError):
    exit_code = 2


class ValidationError(UsageError):
    """Scenario/schema problem; ``field`` names the offending path."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class ModelError(FblError, ValueError):
    exit_code = 2


class InfeasibleError(FblError):
    """No strictly feasible point exists; ``residual`` is the best slack found."""

    exit_code = 3

    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)


class NumericalError(FblError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class ResourceError(FblError):
    """Requested computation exceeds a configured budget (e.g. enumeration cap)."""

    exit_code = 4
