"""Exception hierarchy shared across the package."""


class SpdelabError(Exception):
    """Base class for all package errors."""


class InvalidGridError(SpdelabError, ValueError):
    """Degenerate extents, too few nodes, or an unsupported dimension."""


class AssumptionViolationError(SpdelabError, ValueError):
    """A structural assumption (symmetry, ellipticity, definiteness) failed."""


class DomainError(SpdelabError, ValueError):
    """An argument is outside the operation's domain (t < 0, grid mismatch, ...)."""


class SingularKernelError(DomainError):
    """The gradient kernel was requested at t = 0 where it is singular."""


class UnknownPresetError(SpdelabError, LookupError):
    """A coefficient preset name was not recognized."""


class BlowUpError(SpdelabError, ArithmeticError):
    """A trajectory exceeded the blow-up threshold or the step-size guard."""

    def __init__(self, message, t=None, sup_value=None):
        super().__init__(message)
        self.t = t
        self.sup_value = sup_value


class ConvergenceError(SpdelabError, ArithmeticError):
    """A fixed-point sweep failed to reach its tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class ActionMinimizationError(SpdelabError, ArithmeticError):
    """The action minimizer stopped without a feasible, converged iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InsufficientDataError(SpdelabError, ValueError):
    """A fit was requested with too little usable data."""


class DegenerateEstimateError(SpdelabError, ArithmeticError):
    """An importance-sampling estimate had no effective samples."""


class ConfigError(SpdelabError, ValueError):
    """A run configuration failed validation; carries the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
