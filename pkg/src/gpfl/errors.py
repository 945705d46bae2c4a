"""Exception hierarchy shared by every gpfl module."""


class GpflError(Exception):
    """Base class for all gpfl errors."""


class InvalidInputError(GpflError, ValueError):
    """Input has the wrong shape, non-finite entries, or violates a precondition."""


class SingularDynamicsError(GpflError):
    """The inertia matrix could not be factorized."""


class IllConditionedKernelError(GpflError):
    """Cholesky of K + sigma^2 I failed even after adding jitter."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class OptimizationFailedError(GpflError):
    """Every restart of the hyperparameter search failed."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class UndefinedMetricError(GpflError, ValueError):
    """A metric is undefined for the given data (e.g. zero target variance)."""


class ControllerFaultError(GpflError):
    """A controller returned a non-finite torque."""

    def __init__(self, message, step=None, log=None):
        super().__init__(message)
        self.step = step
        self.log = log


class DivergenceError(GpflError):
    """The simulated state left the admissible region; ``log`` holds the partial run."""

    def __init__(self, message, step=None, log=None):
        super().__init__(message)
        self.step = step
        self.log = log
