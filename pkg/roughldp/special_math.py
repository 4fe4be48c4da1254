"""
Gamma and Gauss hypergeometric functions, and the power-law kernel K_α.

₂F₁ is only ever needed for real parameters and z in [0, 1]:
- z <= 0.5: power series
- 0.5 < z < 1: the linear transformation z -> 1 - z (series in 1 - z)
- z == 1: Gauss summation
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import ConvergenceError

logger = logging.getLogger(__name__)

MAX_SERIES_TERMS = 10_000
SERIES_RTOL = 1e-16
UNDERFLOW_FLOOR = 1e-300
# |c - a - b - round(c - a - b)| below this counts as an integer gap
INTEGER_GAP_TOL = 1e-8


def _is_nonpositive_integer(x):
    return x <= 0.0 and float(x).is_integer()


@dataclass(frozen=True)
class HypArgs:
    a: float
    b: float
    c: float
    z: float

    def __post_init__(self):
        for name in ("a", "b", "c", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if _is_nonpositive_integer(self.c):
            raise ValueError(f"c must not be a non-positive integer, got {self.c}")
        if not 0.0 <= self.z <= 1.0:
            raise ValueError(f"z must lie in [0, 1], got {self.z}")
        if self.z == 1.0 and self.c - self.a - self.b <= 0.0:
            raise ValueError(
                "z = 1 requires c - a - b > 0 for convergence, "
                f"got c - a - b = {self.c - self.a - self.b}"
            )


def gamma(x):
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"gamma is only defined here for x > 0, got {x}")
    return float(special.gamma(x))


def _series(a, b, c, z):
    """Vectorised power series of ₂F₁ for 0 <= z <= 0.5 (elementwise)."""
    z = np.asarray(z, dtype=float)
    total = np.ones_like(z)
    term = np.ones_like(z)
    active = np.ones(z.shape, dtype=bool)
    for k in range(MAX_SERIES_TERMS):
        if not active.any():
            return total
        term = np.where(active, term * (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z, 0.0)
        total = total + term
        small = np.abs(term) <= np.maximum(SERIES_RTOL * np.abs(total), UNDERFLOW_FLOOR)
        active &= ~small
    raise ConvergenceError(
        f"hypergeometric series for ({a}, {b}; {c}) did not converge "
        f"within {MAX_SERIES_TERMS} terms"
    )


def _gauss_sum(a, b, c):
    return float(
        special.gamma(c)
        * special.gamma(c - a - b)
        * special.rgamma(c - a)
        * special.rgamma(c - b)
    )


def _euler_integral(a, b, c, z):
    """Euler's integral, only valid for c > b > 0."""

    def integrand(t):
        return t ** (b - 1.0) * (1.0 - t) ** (c - b - 1.0) * (1.0 - z * t) ** (-a)

    value, _err = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)
    return value * special.gamma(c) * special.rgamma(b) * special.rgamma(c - b)


def _transformed(a, b, c, z):
    """₂F₁ for 0.5 < z < 1 via the series in w = 1 - z."""
    w = 1.0 - np.asarray(z, dtype=float)
    gap = c - a - b
    if abs(gap - round(gap)) < INTEGER_GAP_TOL:
        # the connection formula degenerates for integer c - a - b
        if c > b > 0.0:
            return np.array([_euler_integral(a, b, c, float(zi)) for zi in np.ravel(z)]).reshape(w.shape)
        return _series(a, b, c, z)
    first = _gauss_sum(a, b, c) * _series(a, b, 1.0 - gap, w)
    second = (
        special.gamma(c)
        * special.gamma(-gap)
        * special.rgamma(a)
        * special.rgamma(b)
        * w**gap
        * _series(c - a, c - b, gap + 1.0, w)
    )
    return first + second


def hyp2f1_vec(a, b, c, z):
    """
    ₂F₁(a, b; c; z) for an array of z in [0, 1] with scalar parameters.
    Parameter checks are those of `HypArgs`.
    """
    z = np.asarray(z, dtype=float)
    HypArgs(a, b, c, float(z.max()) if z.size else 0.0)
    if z.size and z.min() < 0.0:
        raise ValueError(f"z must lie in [0, 1], got {z.min()}")
    out = np.empty_like(z)
    low = z <= 0.5
    one = z == 1.0
    mid = ~low & ~one
    if low.any():
        out[low] = _series(a, b, c, z[low])
    if mid.any():
        out[mid] = _transformed(a, b, c, z[mid])
    if one.any():
        out[one] = _gauss_sum(a, b, c)
    return out


def hyp2f1(args):
    return float(hyp2f1_vec(args.a, args.b, args.c, np.array([args.z]))[0])


def kernel(s, t, params):
    """K_α(s, t) = η√(2α+1)(t-s)^α for 0 <= s < t <= 1."""
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("kernel arguments must lie in [0, 1]")
    if np.any(s_arr >= t_arr):
        raise ValueError("kernel requires s < t")
    value = params.kernel_scale * (t_arr - s_arr) ** params.alpha
    if value.ndim == 0:
        return float(value)
    return value


def kernel_cell_integral(lo, hi, t, params):
    """
    ∫_lo^hi K_α(u, t) du for lo <= hi <= t, integrated exactly.
    Broadcasts over arrays.
    """
    a1 = params.alpha + 1.0
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    t = np.asarray(t, dtype=float)
    return params.kernel_scale * (
        np.clip(t - lo, 0.0, None) ** a1 - np.clip(t - hi, 0.0, None) ** a1
    ) / a1
