"""Exception hierarchy shared by all modules."""


class ProxIMHError(Exception):
    """Base class for library errors."""


class DimensionError(ProxIMHError, ValueError):
    """Operands have non-conforming shapes."""


class ParameterError(ProxIMHError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ConditioningError(ProxIMHError, ArithmeticError):
    """A matrix is singular or too ill-conditioned to invert reliably."""

    def __init__(self, message, condition=float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class SolverError(ProxIMHError, ArithmeticError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=float("nan"), history=None):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual
        self.history = [] if history is None else list(history)


class CapacityError(ProxIMHError, ValueError):
    """Problem too large for a dense code path."""


class StateError(ProxIMHError, ArithmeticError):
    """A sampler met a non-finite log-weight, density or gradient."""


class UnsupportedModelError(ProxIMHError, ValueError):
    """Closed forms requested for a model that has none."""


class ShiftSingularityError(ProxIMHError, ArithmeticError):
    """A spectral preconditioner hit a (near-)zero denominator."""


class ConfigError(ProxIMHError, ValueError):
    """Invalid experiment configuration."""


class NumericalFailure(ProxIMHError, ArithmeticError):
    """A run finished but failed a numerical quality gate (e.g. reference Rhat)."""
