"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    """An input is outside the domain an operation accepts."""


class DegenerateCollision(ValueError):
    """Collision geometry is undefined because the two momenta coincide (g = 0)."""


class InvalidModel(ValueError):
    """A cross-section model produced or contains a negative value."""


class QuadratureFailure(RuntimeError):
    """Adaptive quadrature did not reach its requested accuracy."""

    def __init__(self, message, error_estimate=None):
        super().__init__(message)
        self.error_estimate = error_estimate


class CorruptedField(ValueError):
    """A distribution field contains NaN or infinite values."""


class PositivityViolation(ValueError):
    """A strictly positive distribution was required but a value <= 0 was found."""


class CorruptedIteration(RuntimeError):
    """NaN appeared while evaluating a Picard iterate."""

    def __init__(self, message, time_index=None):
        super().__init__(message)
        self.time_index = time_index


class NonConvergence(RuntimeError):
    """Fixed-point iteration exhausted its iteration budget."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class StepSizeError(RuntimeError):
    """A marching step produced more negative mass than the clamp threshold allows."""


class NotApplicable(ValueError):
    """A diagnostic was requested for a run it does not apply to."""


class ConfigError(ValueError):
    """Configuration failed validation; ``problems`` lists every (key, reason) pair."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"{key}: {reason}" for key, reason in self.problems)
        super().__init__(f"invalid configuration: {lines}")
