"""
Volatility and log-price paths of the rough Bergomi model and their
small-noise rescalings, plus a variogram estimate of pathwise roughness.
"""

import dataclasses
import logging
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateInputError, VolatilityOverflowError
from .path_sim import PathBundle, RescaleParams, rescale_b, rescale_z, sample_bundle
from .utilities import write_csv

logger = logging.getLogger(__name__)

EXPONENT_LIMIT = 700.0
HOLDER_LAGS = (1, 2, 3, 4, 5)
MIN_HOLDER_STEPS = 256
SUMMARY_QUANTILES = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


@dataclass(frozen=True)
class ModelPaths:
    bundle: PathBundle
    v: np.ndarray
    x: Optional[np.ndarray] = None
    eps: float = 1.0

    @property
    def grid(self):
        return self.bundle.grid

    @property
    def log_v(self):
        return np.log(self.v)


def guard_exponent(exponent, first_replica=0):
    """Raise if any entry of a (replicas x times) exponent array exceeds EXPONENT_LIMIT."""
    exponent = np.atleast_2d(exponent)
    too_big = exponent > EXPONENT_LIMIT
    if too_big.any():
        row = int(np.argmax(too_big.any(axis=1)))
        replica = first_replica + row
        raise VolatilityOverflowError(
            f"variance exponent {exponent[row].max():.1f} exceeds {EXPONENT_LIMIT:.0f} "
            f"on replica {replica}",
            replica=replica,
        )


def vol_path(bundle, params, eps=1.0):
    """
    v^ε_k = ε^{1+β} v0 exp(Z^ε_{t_k} - η²/2 (ε t_k)^β); eps=1 gives v itself.
    """
    eps = RescaleParams(eps).epsilon
    beta = params.beta
    z_eps = rescale_z(bundle.z, params, eps)
    exponent = z_eps - 0.5 * params.eta**2 * (eps * bundle.times) ** beta
    guard_exponent(exponent, bundle.first_replica)
    return eps ** (1.0 + beta) * params.v0 * np.exp(exponent)


def logprice_path(modelpaths, params):
    """
    Left-point Euler scheme X_{k+1} = X_k - v_k Δ/2 + √v_k (B^ε_{k+1} - B^ε_k), X_0 = 0.
    """
    v = np.atleast_2d(modelpaths.v)
    b_eps = np.atleast_2d(rescale_b(modelpaths.bundle.b, params, modelpaths.eps))
    dt = modelpaths.grid.dt
    increments = -0.5 * v[:, :-1] * dt + np.sqrt(v[:, :-1]) * np.diff(b_eps, axis=1)
    x = np.zeros_like(v)
    np.cumsum(increments, axis=1, out=x[:, 1:])
    return x


def model_paths(bundle, params, eps=1.0):
    v = vol_path(bundle, params, eps)
    partial = ModelPaths(bundle=bundle, v=v, eps=float(eps))
    return dataclasses.replace(partial, x=logprice_path(partial, params))


def simulate_model(grid, params, n_paths, seed, eps=1.0, threads=1):
    bundle = sample_bundle(grid, params, n_paths, seed, threads=threads)
    logger.info("Simulating %d model paths on n=%d (eps=%g, seed=%d)", n_paths, grid.n, eps, seed)
    return model_paths(bundle, params, eps)


def running_integral(v, b, grid):
    """Running left-point sum of √v dB, i.e. the path 𝕀(v, B)(t_k)."""
    v = np.atleast_2d(v)
    b = np.atleast_2d(b)
    out = np.zeros_like(v)
    np.cumsum(np.sqrt(v[:, :-1]) * np.diff(b, axis=1), axis=1, out=out[:, 1:])
    return out


def running_drift(v, grid):
    """Running ½∫v ds by left-point sums."""
    v = np.atleast_2d(v)
    out = np.zeros_like(v)
    np.cumsum(0.5 * v[:, :-1] * grid.dt, axis=1, out=out[:, 1:])
    return out


def holder_estimate(logv, grid):
    """
    Variogram estimate of the roughness index of a path (or of each row of a
    replicas x times array): half the least-squares slope of log m(ℓΔ) against
    log(ℓΔ), with m the mean squared increment at lags ℓ = 1..5.
    """
    if grid.n < MIN_HOLDER_STEPS:
        raise ValueError(
            f"Hölder estimation needs n >= {MIN_HOLDER_STEPS} steps, got n={grid.n}"
        )
    paths = np.asarray(logv, dtype=float)
    single = paths.ndim == 1
    paths = np.atleast_2d(paths)
    if paths.shape[1] != grid.n + 1:
        raise ValueError(f"path length {paths.shape[1]} does not match grid n+1={grid.n + 1}")

    lags = np.asarray(HOLDER_LAGS)
    m = np.column_stack(
        [np.mean((paths[:, lag:] - paths[:, :-lag]) ** 2, axis=1) for lag in lags]
    )
    if np.any(m <= 0.0):
        raise DegenerateInputError("constant path: variogram slope is undefined")

    log_lag = np.log(lags * grid.dt)
    centred = log_lag - log_lag.mean()
    log_m = np.log(m)
    slope = (log_m - log_m.mean(axis=1, keepdims=True)) @ centred / (centred @ centred)
    gamma_hat = 0.5 * slope
    return float(gamma_hat[0]) if single else gamma_hat


def mc_summary(values):
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2:
        raise ValueError("Monte Carlo summary needs at least two samples")
    quantiles = np.quantile(values, SUMMARY_QUANTILES)
    return {
        "n": int(values.size),
        "mean": float(values.mean()),
        "std_err": float(values.std(ddof=1) / math.sqrt(values.size)),
        "quantiles": {f"{q:g}": float(v) for q, v in zip(SUMMARY_QUANTILES, quantiles)},
    }


def write_model_csv(paths, directory, prefix="model"):
    files = []
    times = paths.bundle.times
    v = np.atleast_2d(paths.v)
    x = np.atleast_2d(paths.x)
    for i in range(v.shape[0]):
        index = paths.bundle.first_replica + i
        path = os.path.join(directory, f"{prefix}_{index:05d}.csv")
        write_csv(path, ["t", "v", "X"], [times, v[i], x[i]])
        files.append(path)
    return files
