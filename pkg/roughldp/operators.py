"""
Deterministic operators on piecewise-constant controls: the Volterra map I^{K_α},
the constant-kernel map I^ρ, the exponential map 𝔪, the pathwise integral 𝕀
and the Cameron-Martin (RKHS) costs.
"""

import functools
from dataclasses import dataclass

import numpy as np

from .rbergomi import guard_exponent
from .special_math import kernel_cell_integral


@dataclass(frozen=True)
class Control:
    """
    Piecewise-constant f on the cells [t_k, t_{k+1}) of the uniform grid of [0, 1]
    with n = len(values) steps.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size == 0:
            raise ValueError("a control needs at least one cell")
        if not np.all(np.isfinite(values)):
            raise ValueError("control entries must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self):
        return self.values.size

    @property
    def dt(self):
        return 1.0 / self.values.size

    def l2_norm_sq(self):
        return float(np.sum(self.values**2) * self.dt)


@dataclass(frozen=True)
class PathPair:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape:
            raise ValueError(f"path pair components differ in shape: {x.shape} vs {y.shape}")
        if x[0] != 0.0 or y[0] != 0.0:
            raise ValueError("path pair components must start at 0")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


def _check_control(f, grid):
    if f.n != grid.n:
        raise ValueError(f"control has {f.n} cells but the grid has n={grid.n}")
    if grid.horizon != 1.0:
        raise ValueError("controls live on the unit interval")


@functools.lru_cache(maxsize=16)
def volterra_matrix(grid, params):
    """
    (n+1) x n matrix A with (A f)(t_k) = Σ_{j<k} f_j ∫_{t_j}^{t_{j+1}} K_α(u, t_k) du,
    cell integrals taken exactly.
    """
    times = grid.times
    k = np.arange(grid.n + 1)[:, None]
    j = np.arange(grid.n)[None, :]
    cells = kernel_cell_integral(times[j], times[j + 1], times[k], params)
    matrix = np.where(j < k, cells, 0.0)
    matrix.setflags(write=False)
    return matrix


def apply_volterra(f, grid, params):
    _check_control(f, grid)
    return volterra_matrix(grid, params) @ f.values


def apply_rho(f, grid, rho):
    """h(t_k) = ρ Σ_{j<k} f_j Δ."""
    _check_control(f, grid)
    h = np.zeros(grid.n + 1)
    np.cumsum(rho * f.values * grid.dt, out=h[1:])
    return h


def m_baseline(grid, params, eps=1.0):
    """𝔪(0)(t_k, ε) = v0 ε^{1+β} exp(-η²/2 (ε t_k)^β)."""
    eps = float(eps)
    if not eps > 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    beta = params.beta
    return params.v0 * eps ** (1.0 + beta) * np.exp(-0.5 * params.eta**2 * (eps * grid.times) ** beta)


def apply_m(x, grid, params, eps=1.0):
    """(𝔪x)(t_k, ε) = v0 ε^{1+β} exp(x(t_k) - η²/2 (ε t_k)^β)."""
    x = np.asarray(x, dtype=float)
    eps = float(eps)
    if not eps > 0.0:
        raise ValueError(f"eps must be > 0, got {eps}")
    exponent = x - 0.5 * params.eta**2 * (eps * grid.times) ** params.beta
    guard_exponent(exponent)
    return params.v0 * eps ** (1.0 + params.beta) * np.exp(exponent)


def integral_I(x, y, grid):
    """𝕀(z^x_y)(1) = Σ_k √x_k (y_{k+1} - y_k), left-point sums over [0, 1]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("𝕀 needs a non-negative integrand path x")
    if x.shape != y.shape or x.shape[-1] != grid.n + 1:
        raise ValueError("𝕀 needs paths of length n+1 on the same grid")
    return float(np.sum(np.sqrt(x[:-1]) * np.diff(y)))


def lift_control(f, grid, params, rho=None):
    """
    The path pair z^x_y = (I^{K_α} f, I^ρ f) of a control; `rho` defaults to the
    model correlation. For a control pair pass f = (f1, f2) and rho = 1.
    """
    if isinstance(f, tuple):
        f1, f2 = f
    else:
        f1 = f2 = f
    weight = params.rho if rho is None else rho
    return PathPair(apply_volterra(f1, grid, params), apply_rho(f2, grid, weight))


def integrate_pair(pair, grid, params, eps=1.0):
    """𝕀 of (𝔪x, y) at t = 1 for a path pair (x, y)."""
    if not isinstance(pair, PathPair):
        raise TypeError(f"expected a PathPair, got {type(pair).__name__}")
    return integral_I(apply_m(pair.x, grid, params, eps), pair.y, grid)


def rkhs_cost(f):
    """½‖f‖²_{L²}, the Cameron-Martin cost of I^{K_α}_ρ f."""
    return 0.5 * f.l2_norm_sq()


def rkhs_cost2(f1, f2):
    """½‖f1‖² + ½‖f2‖², the cost of the uncorrelated pair (I^{K_α} f1, I^1 f2)."""
    return 0.5 * f1.l2_norm_sq() + 0.5 * f2.l2_norm_sq()


def kernel_norm_sq(grid, params, m):
    """‖K_α(·, t_m)‖²_{L²(0, t_m)} summed cell by cell with exact cell integrals."""
    t = grid.times[m]
    lo = grid.times[:m]
    hi = grid.times[1 : m + 1]
    power = params.beta
    cells = params.kernel_scale**2 * ((t - lo) ** power - (t - hi) ** power) / power
    return float(np.sum(cells))
