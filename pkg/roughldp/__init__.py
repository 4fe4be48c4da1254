from .errors import (
    ConvergenceError,
    DegenerateInputError,
    FactorizationError,
    InfeasibleProblemError,
    InsufficientHitsError,
    VolatilityOverflowError,
)
from .params import Grid, ModelParams

VERSION = (1, 0, 0)
__version__ = ".".join(str(part) for part in VERSION)

__all__ = [
    "ConvergenceError",
    "DegenerateInputError",
    "FactorizationError",
    "Grid",
    "InfeasibleProblemError",
    "InsufficientHitsError",
    "ModelParams",
    "VERSION",
    "VolatilityOverflowError",
    "__version__",
]
