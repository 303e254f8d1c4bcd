"""Exception hierarchy shared by all modules."""


class StochLeafError(Exception):
    """Base class for library errors."""


class ConfigurationError(StochLeafError, ValueError):
    """Invalid grid, model or run parameters."""


class TruncationError(ConfigurationError):
    """The truncated OU integral misses the requested tail tolerance."""

    def __init__(self, message, required_t_min=None):
        super().__init__(message)
        self.required_t_min = required_t_min


class DomainError(StochLeafError, ValueError):
    """Operation applied outside its domain (e.g. backward flow on stable modes)."""


class BlowUpError(StochLeafError, ArithmeticError):
    """A trajectory left the admissible region."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConvergenceError(StochLeafError, ArithmeticError):
    """A fixed-point iteration failed to contract."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
