"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    """A log density or its gradient was non-finite where a finite value is required."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class InitializationError(RuntimeError):
    pass


class DegenerateFamilyError(ValueError):
    pass


class EstimationError(ArithmeticError):
    pass


class AdviDivergenceError(ArithmeticError):
    """Raised when the ELBO (or its gradient) turns NaN mid-optimization.

    ``state`` is the last variational state whose ELBO was finite and
    ``trace`` the ELBO trace up to that point.
    """

    def __init__(self, message, state, trace, iteration):
        super().__init__(message)
        self.state = state
        self.trace = trace
        self.iteration = iteration


class InsufficientSampleError(ValueError):
    pass
