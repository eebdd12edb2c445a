"""Exception hierarchy for the solver."""


class FBSDEError(Exception):
    """Base class for all solver errors."""


class ConfigError(FBSDEError, ValueError):
    """Invalid configuration value or grid parameters."""


class ModelError(FBSDEError, ValueError):
    """A model could not be built or evaluated."""


class DecompositionError(ModelError):
    """G(t, x) is not in the range of Sigma(t, x), so no Gamma with Sigma Gamma = G exists."""


class SimulationDivergenceError(FBSDEError, FloatingPointError):
    """A forward trajectory left the finite / guarded region."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class RegressionError(FBSDEError, ArithmeticError):
    """The least-squares normal equations could not be factorized."""
