"""Probabilistic SSP-RCP scenarios and food security risk assessment."""

from .errors import (BracketError, ConvergenceError, FoodRiskError, InstabilityError, NumericalError,
                     ValidationError)
from .trajectories import TrajectorySet

__version__ = "0.1.0"

__all__ = [
    "BracketError", "ConvergenceError", "FoodRiskError", "InstabilityError", "NumericalError",
    "TrajectorySet", "ValidationError", "__version__",
]
