"""Exception hierarchy shared by all modules."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class ConfigurationError(ValueError):
    """Inconsistent experiment configuration (overlapping pulses, mismatched
    interferometers, duplicate tomography settings, bad config keys)."""


class NumericalInstabilityError(RuntimeError):
    """Density-matrix invariants were violated during integration."""

    def __init__(self, message, time):
        super().__init__(f"{message} at t = {time:.6g} ps")
        self.time = time


class InsufficientStatisticsError(RuntimeError):
    """Too few events to form the requested estimate."""


class ConvergenceError(RuntimeError):
    """An iterative optimizer exhausted its budget.

    ``best`` holds the best state found so far and ``diagnostic`` a short
    description of where the optimizer stopped.
    """

    def __init__(self, message, best=None, diagnostic=None):
        super().__init__(message)
        self.best = best
        self.diagnostic = diagnostic
