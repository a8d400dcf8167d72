"""Neural-network parameter inversion through differentiable physics solvers.

A small MLP maps a constant input to physical parameters (permeability or
viscosity). Each epoch runs a forward solve, measures the misfit against
observations, obtains solver sensitivities by a discrete adjoint or by
perturbation, and backpropagates the chained gradient into the network.
"""

from .errors import (AdjointFailureError, AdjointNetError, ConfigError, InstabilityError,
                     InvalidArgumentError, SensitivityError, SolverDivergedError,
                     TrainingDivergedError)

__version__ = "0.1.0"

__all__ = [
    "AdjointFailureError", "AdjointNetError", "ConfigError", "InstabilityError",
    "InvalidArgumentError", "SensitivityError", "SolverDivergedError", "TrainingDivergedError",
]
