"""Exception types raised across the toolkit."""


class AdjointNetError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(AdjointNetError, ValueError):
    pass


class SolverDivergedError(AdjointNetError):
    """Newton iteration failed to reach tolerance.

    ``residuals`` holds the residual norm after each iteration of the failing step.
    """

    def __init__(self, message, residuals=(), step=None):
        super().__init__(message)
        self.residuals = list(residuals)
        self.step = step


class InstabilityError(AdjointNetError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class AdjointFailureError(AdjointNetError):
    pass


class TrainingDivergedError(AdjointNetError):
    pass


class SensitivityError(AdjointNetError):
    """A perturbed forward solve failed; ``param_index`` names the parameter."""

    def __init__(self, message, param_index):
        super().__init__(message)
        self.param_index = param_index


class ConfigError(AdjointNetError, ValueError):
    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
