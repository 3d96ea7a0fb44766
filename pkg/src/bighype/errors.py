"""Exception types raised by the solver."""

from __future__ import annotations


class BigHypeError(Exception):
    """Base class for all solver errors."""


class DimensionMismatch(BigHypeError, ValueError):
    pass


class NotStronglyMonotone(BigHypeError):
    pass


class RankDeficientConstraint(BigHypeError):
    pass


class ContractionViolation(BigHypeError):
    """Step size outside the window where the PPG map contracts."""


class Infeasible(BigHypeError):
    pass


class MaxIterExceeded(BigHypeError):
    def __init__(self, message, best=None, residuals=None):
        super().__init__(message)
        self.best = best
        self.residuals = residuals


class SingularSystem(BigHypeError):
    pass


class DegeneratePoint(BigHypeError):
    pass


class ScheduleContractViolation(BigHypeError):
    pass


class NonFiniteValue(BigHypeError, FloatingPointError):
    pass


class ConfigInvalid(BigHypeError, ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = {"config": errors}
        self.errors = dict(errors)
        msg = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(msg)


class AgentError(BigHypeError):
    """Wraps an error raised while updating one follower."""

    def __init__(self, agent, error):
        super().__init__(f"agent {agent}: {error}")
        self.agent = agent
        self.error = error


class ConvergenceWarning(UserWarning):
    pass
