"""Exception hierarchy shared by every module."""


class InvuqError(Exception):
    """Base class for library errors."""


class ConfigError(InvuqError, ValueError):
    """Invalid or incomplete configuration."""


class DimensionError(InvuqError, ValueError):
    pass


class BoundsError(InvuqError, ValueError):
    """A design point lies outside the declared design bounds."""

    def __init__(self, violations):
        self.violations = list(violations)
        parts = [f"x[{i}]={v!r} not in [{lo!r}, {hi!r}]" for i, v, lo, hi in self.violations]
        super().__init__("design point out of bounds: " + "; ".join(parts))


class ConditioningError(InvuqError, ArithmeticError):
    """Covariance matrix is not positive definite, even after jitter escalation."""


class UndefinedIndexError(InvuqError, ArithmeticError):
    """Sobol' indices are undefined (zero output variance)."""


class ScaleCollapseError(InvuqError, RuntimeError):
    """MCMC accepted nothing over a whole adaptation window."""


class CalibrationError(InvuqError, RuntimeError):
    pass
