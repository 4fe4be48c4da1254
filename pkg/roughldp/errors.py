class ConvergenceError(ArithmeticError):
    """Raised when a series or an iterative solver hits its iteration cap."""


class FactorizationError(ArithmeticError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class VolatilityOverflowError(OverflowError):
    def __init__(self, message, replica=None):
        super().__init__(message)
        self.replica = replica


class InfeasibleProblemError(ConvergenceError):
    """
    Every start of a rate-function solve failed to reach the constraint tolerance.
    `best_residual` is the smallest residual any start achieved; for path
    problems `residual_profile` holds the per-node violation of that start.
    """

    def __init__(self, message, best_residual, residual_profile=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.residual_profile = residual_profile


class InsufficientHitsError(ValueError):
    def __init__(self, message, rungs):
        super().__init__(message)
        self.rungs = list(rungs)


class DegenerateInputError(ValueError):
    pass
