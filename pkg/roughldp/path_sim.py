"""
Exact joint sampling of (Z, W) on a grid, plus W⊥, B and the small-noise
rescaling maps.

Replicas are drawn in blocks of BLOCK_SIZE. Block b uses a Philox stream keyed
by SeedSequence(seed, spawn_key=(b,)), and replica r is row r % BLOCK_SIZE of
block r // BLOCK_SIZE, so every replica depends only on (seed, r).
"""

import functools
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .covariance import joint_covariance
from .errors import FactorizationError
from .params import Grid  # noqa: F401  (re-exported)
from .utilities import ordered_map, write_csv

logger = logging.getLogger(__name__)

BLOCK_SIZE = 1024
JITTER_LADDER = (0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10)


@dataclass(frozen=True)
class CholeskyFactor:
    grid: Grid
    params: object
    lower: np.ndarray
    jitter: float
    reconstruction_error: float


@dataclass(frozen=True)
class RescaleParams:
    epsilon: float

    def __post_init__(self):
        epsilon = float(self.epsilon)
        if not epsilon > 0.0 or not math.isfinite(epsilon):
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        object.__setattr__(self, "epsilon", epsilon)


@dataclass(frozen=True)
class PathBundle:
    """
    Sampled trajectories on `grid`, one row per replica, one column per time.
    Rows are replicas first_replica .. first_replica + len(self) - 1 of `seed`.
    """

    grid: Grid
    rho: float
    w: np.ndarray
    wperp: np.ndarray
    z: np.ndarray
    b: np.ndarray
    seed: int
    first_replica: int = 0

    def __len__(self):
        return self.z.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self.replica(i)

    @property
    def times(self):
        return self.grid.times

    def replica(self, i):
        rows = slice(i, i + 1)
        return PathBundle(
            grid=self.grid,
            rho=self.rho,
            w=self.w[rows],
            wperp=self.wperp[rows],
            z=self.z[rows],
            b=self.b[rows],
            seed=self.seed,
            first_replica=self.first_replica + i,
        )


def _factor_diagnostics(cov):
    eigenvalues = np.linalg.eigvalsh(cov)
    return {
        "min_eigenvalue": float(eigenvalues[0]),
        "max_eigenvalue": float(eigenvalues[-1]),
        "condition": float(np.linalg.cond(cov)),
    }


@functools.lru_cache(maxsize=8)
def build_joint_cholesky(grid, params):
    """
    Lower Cholesky factor of the covariance of (Z_{t_1..t_n}, W_{t_1..t_n}).
    Jitter δ·I is added only when the plain factorisation fails, escalating
    through JITTER_LADDER.
    """
    times = grid.times[1:]
    cov = joint_covariance(times, params)
    identity = np.eye(cov.shape[0])

    for attempt, jitter in enumerate(JITTER_LADDER):
        try:
            lower = linalg.cholesky(cov + jitter * identity, lower=True, check_finite=True)
        except linalg.LinAlgError as e:
            logger.debug(
                "Cholesky attempt %d/%d with jitter %.0e failed: %s",
                attempt + 1,
                len(JITTER_LADDER),
                jitter,
                e,
            )
            continue

        error = float(np.max(np.abs(lower @ lower.T - cov)))
        if jitter > 0.0:
            logger.warning("Joint covariance needed jitter %.0e (n=%d)", jitter, grid.n)
        logger.info(
            "Built joint Cholesky factor: n=%d, jitter=%.0e, max reconstruction error=%.2e",
            grid.n,
            jitter,
            error,
        )
        lower.setflags(write=False)
        return CholeskyFactor(grid, params, lower, jitter, error)

    diagnostics = _factor_diagnostics(cov)
    diagnostics["last_jitter"] = JITTER_LADDER[-1]
    raise FactorizationError(
        f"Joint covariance on n={grid.n} is not positive definite after jitter "
        f"{JITTER_LADDER[-1]:.0e} (min eigenvalue {diagnostics['min_eigenvalue']:.3e}, "
        f"condition {diagnostics['condition']:.3e})",
        diagnostics,
    )


def _block_generator(seed, block):
    sequence = np.random.SeedSequence(seed, spawn_key=(block,))
    return np.random.Generator(np.random.Philox(sequence))


def _sample_block(factor, seed, block, size):
    n = factor.grid.n
    rho = factor.params.rho
    rng = _block_generator(seed, block)
    normals = rng.standard_normal((size, 3 * n))

    zw = normals[:, : 2 * n] @ factor.lower.T
    dwperp = normals[:, 2 * n :] * math.sqrt(factor.grid.dt)

    zeros = np.zeros((size, 1))
    z = np.hstack([zeros, zw[:, :n]])
    w = np.hstack([zeros, zw[:, n:]])
    wperp = np.hstack([zeros, np.cumsum(dwperp, axis=1)])
    b = rho * w + math.sqrt(1.0 - rho * rho) * wperp
    return PathBundle(
        grid=factor.grid,
        rho=rho,
        w=w,
        wperp=wperp,
        z=z,
        b=b,
        seed=seed,
        first_replica=block * BLOCK_SIZE,
    )


def _check_sampling_args(n_paths, seed):
    if int(n_paths) != n_paths or n_paths < 1:
        raise ValueError(f"n_paths must be a positive integer, got {n_paths}")
    if int(seed) != seed or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed}")
    return int(n_paths), int(seed)


def map_blocks(factor, n_paths, seed, func, threads=1):
    """
    Sample `n_paths` replicas block by block and yield `func(block)` in block order.
    `func` runs on the worker threads; the output is independent of `threads`.
    """
    n_paths, seed = _check_sampling_args(n_paths, seed)
    blocks = []
    for block, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        blocks.append((block, min(BLOCK_SIZE, n_paths - start)))

    def _run(item):
        block, size = item
        return func(_sample_block(factor, seed, block, size))

    yield from ordered_map(_run, blocks, threads=threads)


def iter_blocks(factor, n_paths, seed, threads=1):
    yield from map_blocks(factor, n_paths, seed, lambda block: block, threads=threads)


def sample_bundle(grid, params, n_paths, seed, threads=1):
    factor = build_joint_cholesky(grid, params)
    parts = list(iter_blocks(factor, n_paths, seed, threads=threads))
    if len(parts) == 1:
        return parts[0]
    return PathBundle(
        grid=grid,
        rho=params.rho,
        w=np.vstack([p.w for p in parts]),
        wperp=np.vstack([p.wperp for p in parts]),
        z=np.vstack([p.z for p in parts]),
        b=np.vstack([p.b for p in parts]),
        seed=int(seed),
        first_replica=0,
    )


def _rescale(path, params, eps):
    eps = RescaleParams(eps).epsilon
    return np.asarray(path, dtype=float) * eps ** (params.beta / 2.0)


def rescale_z(z, params, eps):
    """Z^ε = ε^{β/2} Z."""
    return _rescale(z, params, eps)


def rescale_b(b, params, eps):
    """B^ε = ε^{β/2} B."""
    return _rescale(b, params, eps)


def write_bundle_csv(bundle, directory, prefix="bundle"):
    paths = []
    times = bundle.times
    for i in range(len(bundle)):
        index = bundle.first_replica + i
        path = os.path.join(directory, f"{prefix}_{index:05d}.csv")
        write_csv(
            path,
            ["t", "W", "Wperp", "Z", "B"],
            [times, bundle.w[i], bundle.wperp[i], bundle.z[i], bundle.b[i]],
        )
        paths.append(path)
    return paths
