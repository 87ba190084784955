"""Exception hierarchy shared across the engine.

The CLI maps :class:`ValidationError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class FoodRiskError(Exception):
    """Base class for all engine errors."""


class ValidationError(FoodRiskError, ValueError):
    """Bad input data, schema violation or inconsistent configuration."""


class NumericalError(FoodRiskError, ArithmeticError):
    """A numerical procedure failed (no bracket, no convergence, instability)."""


class BracketError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class InstabilityError(NumericalError):
    pass
