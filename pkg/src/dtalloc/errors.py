"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Experiment configuration is malformed or inconsistent."""


class InfeasibleNetworkError(ValueError):
    """Network is not connected in mean; no contraction constants exist."""


class InfeasiblePlanError(ValueError):
    """Stepsize plan violates the convergence region."""


class CapacityError(ValueError):
    """Exact enumeration requested beyond the supported edge count."""


class DivergenceError(RuntimeError):
    """State left the trust region (non-finite or > 1e12)."""

    def __init__(self, message, replica=None, iteration=None):
        super().__init__(message)
        self.replica = replica
        self.iteration = iteration
