import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    """
    Parameters (alpha, eta, rho, v0) of the rough Bergomi model.
    `beta` and `varrho` are derived and never passed in.
    """

    alpha: float
    eta: float
    rho: float
    v0: float

    def __post_init__(self):
        for name in ("alpha", "eta", "rho", "v0"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if not -0.5 < self.alpha < 0.0:
            raise ValueError(f"alpha must lie in (-1/2, 0), got {self.alpha}")
        if self.eta <= 0.0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.v0 <= 0.0:
            raise ValueError(f"v0 must be > 0, got {self.v0}")

    @property
    def beta(self):
        return 2.0 * self.alpha + 1.0

    @property
    def varrho(self):
        return self.rho * self.eta * math.sqrt(self.beta) / (self.alpha + 1.0)

    @property
    def kernel_scale(self):
        """η√(2α+1), the constant in front of (t-s)^α."""
        return self.eta * math.sqrt(self.beta)

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "eta": self.eta,
            "rho": self.rho,
            "v0": self.v0,
        }


@dataclass(frozen=True)
class Grid:
    """
    Uniform grid t_k = k * horizon / n, k = 0..n.
    The model lives on [0, 1]; `horizon` < 1 is only used to simulate the
    unrescaled model on a short interval [0, t].
    """

    n: int
    horizon: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid size n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        horizon = float(self.horizon)
        if not 0.0 < horizon <= 1.0:
            raise ValueError(f"grid horizon must lie in (0, 1], got {horizon}")
        object.__setattr__(self, "horizon", horizon)

    @property
    def dt(self):
        return self.horizon / self.n

    @property
    def times(self):
        times = np.arange(self.n + 1, dtype=float) * self.dt
        times[-1] = self.horizon
        return times

    def restricted(self, horizon):
        return Grid(self.n, horizon)
