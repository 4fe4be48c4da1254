"""
Monte Carlo checks of the small-time large deviations behaviour of the log
price, the exponential equivalence of X^ε and 𝕀(v^ε, B^ε), the Borell-TIS
bound on sup Z, and the sample-path properties of Z and log v.

Every estimate carries a standard error; every pass/fail uses a stated
multiple of it.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .covariance import holder_constant, increment_variance
from .errors import InsufficientHitsError
from .params import Grid
from .path_sim import build_joint_cholesky, map_blocks, rescale_b
from .rate_solver import (
    CORRELATED,
    UNCORRELATED,
    RateProblem,
    solve_endpoint,
    solve_endpoint_uncorrelated_reduced,
)
from .rbergomi import HOLDER_LAGS, holder_estimate, model_paths, running_integral, vol_path
from .utilities import write_csv

logger = logging.getLogger(__name__)

MIN_TAIL_PATHS = 10_000
MIN_HITS = 50
MIN_EQUIV_PATHS = 100_000
SE_MULTIPLE = 3.0
ZERO_SLOPE_SIGMAS = 2.0
KS_LEVEL = 0.01
# one-sided 95% bound on p when no hit is observed: -log(0.05)/n ("rule of three")
ZERO_HIT_LOG_LEVEL = -math.log(0.05)
# solver grid of the default slope reference; the reference is also reported at 2 * RATE_N
RATE_N = 32


@dataclass(frozen=True)
class TailEstimate:
    p_hat: float
    std_err: float
    n_paths: int
    u: float
    t: float
    hits: int
    upper_bound: Optional[float] = None

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SlopeReport:
    u: float
    ladder: np.ndarray
    p_hat: np.ndarray
    std_err: np.ndarray
    log_p: np.ndarray
    fitted_slope: float
    slope_std_err: float
    intercept: float
    r_squared: float
    rate_reference: float
    relative_gap: float
    passed: bool
    rate_n: Optional[int] = None
    rate_reference_fine: Optional[float] = None

    def as_dict(self):
        return asdict(self)

    def write_csv(self, path):
        return write_csv(
            path, ["t", "p_hat", "std_err", "log_p"], [self.ladder, self.p_hat, self.std_err, self.log_p]
        )


@dataclass(frozen=True)
class ExpEquivReport:
    delta: float
    eps: np.ndarray
    q_hat: np.ndarray
    std_err: np.ndarray
    scaled_log_q: np.ndarray
    n_paths: int
    nonincreasing: bool
    passed: bool

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BorellTisReport:
    m_hat: float
    m_std_err: float
    sigma_sq: float
    x: np.ndarray
    p_hat: np.ndarray
    std_err: np.ndarray
    bound: np.ndarray
    n_paths: int
    passed: bool

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class StatReport:
    """Pass/fail report of a distributional check (KS tests, Hölder regression)."""

    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def _std_err(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _endpoints(bundle, params, eps):
    return model_paths(bundle, params, eps).x[:, -1]


def mc_tail(u, t, params, n_paths, seed, n=256, threads=1):
    """
    Frequency of {t^β X_t >= u}, simulating the unrescaled model on [0, t].
    """
    t = float(t)
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    if n_paths < MIN_TAIL_PATHS:
        raise ValueError(f"tail estimates need n_paths >= {MIN_TAIL_PATHS}, got {n_paths}")

    grid = Grid(n).restricted(t)
    factor = build_joint_cholesky(grid, params)
    scale = t**params.beta

    def _count(bundle):
        return int(np.count_nonzero(scale * _endpoints(bundle, params, 1.0) >= u))

    hits = sum(map_blocks(factor, n_paths, seed, _count, threads=threads))
    p_hat = hits / n_paths
    upper = None
    if hits == 0:
        upper = ZERO_HIT_LOG_LEVEL / n_paths
        logger.warning(
            "no hits for u=%g at t=%g over %d paths; 95%% upper bound %.3e",
            u,
            t,
            n_paths,
            upper,
        )
    return TailEstimate(p_hat, _std_err(p_hat, n_paths), int(n_paths), float(u), t, hits, upper)


def endpoint_rate_hook(params, n=RATE_N, n_starts=8, seed=0):
    """
    Λ^X_1(u) at a given ε from the rate solver: the correlated endpoint problem,
    or the reduced uncorrelated one when ρ = 0.
    """

    def hook(u, eps):
        if params.rho == 0.0:
            problem = RateProblem(u, params, Grid(n), eps, UNCORRELATED, seed, n_starts)
            return solve_endpoint_uncorrelated_reduced(problem).value
        problem = RateProblem(u, params, Grid(n), eps, CORRELATED, seed, n_starts)
        return solve_endpoint(problem).value

    return hook


def slope_check(
    u,
    ladder,
    params,
    n_paths,
    seed,
    rate_fn_hook=None,
    eps=None,
    n=256,
    threads=1,
    min_r_squared=0.95,
    max_relative_gap=0.3,
    rate_n=RATE_N,
):
    """
    Regress log p̂(t) against -t^{-β} over a decreasing ladder of t; the slope
    estimates the rate Λ^X_1(u). All rungs share `seed`.

    Without `rate_fn_hook` the reference comes from the endpoint solver on a
    grid of `rate_n` steps and is repeated on 2 * rate_n steps. The discrete
    rate moves with the solver grid, so both values are reported and the
    pass/fail uses the first.
    """
    ladder = np.asarray(ladder, dtype=float)
    if ladder.size < 2 or np.any(np.diff(ladder) >= 0.0):
        raise ValueError("the t ladder must hold at least two strictly decreasing values")
    if rate_fn_hook is None and int(rate_n) < 1:
        raise ValueError(f"rate_n must be >= 1, got {rate_n}")

    estimates = [mc_tail(u, t, params, n_paths, seed, n=n, threads=threads) for t in ladder]
    short = [(e.t, e.hits) for e in estimates if e.hits < MIN_HITS]
    if short:
        listing = ", ".join(f"t={t:g} ({hits} hits)" for t, hits in short)
        raise InsufficientHitsError(
            f"rungs with fewer than {MIN_HITS} hits: {listing}; "
            "increase n_paths or shorten the ladder",
            [t for t, _ in short],
        )

    p_hat = np.array([e.p_hat for e in estimates])
    std_err = np.array([e.std_err for e in estimates])
    log_p = np.log(p_hat)
    fit = stats.linregress(-(ladder ** (-params.beta)), log_p)

    def _reference(hook):
        if eps is not None:
            return float(hook(u, float(eps)))
        return float(np.mean([hook(u, float(t)) for t in ladder]))

    fine = None
    if rate_fn_hook is None:
        rate_n = int(rate_n)
        reference = _reference(endpoint_rate_hook(params, n=rate_n))
        fine = _reference(endpoint_rate_hook(params, n=2 * rate_n))
        if reference > 0.0 and abs(fine - reference) > 0.02 * reference:
            logger.warning(
                "slope reference moves from %.4g (n=%d) to %.4g (n=%d)",
                reference,
                rate_n,
                fine,
                2 * rate_n,
            )
    else:
        rate_n = None
        reference = _reference(rate_fn_hook)
    if reference > 0.0:
        gap = abs(fit.slope - reference) / reference
        passed = bool(
            fit.rvalue**2 >= min_r_squared and fit.slope > 0.0 and gap <= max_relative_gap
        )
    else:
        # Λ(0) = 0: only ask for a slope indistinguishable from zero
        gap = math.nan
        passed = bool(abs(fit.slope) <= ZERO_SLOPE_SIGMAS * fit.stderr)
    logger.info(
        "slope check u=%g: slope=%.4g±%.2g reference=%.4g R²=%.3f",
        u,
        fit.slope,
        fit.stderr,
        reference,
        fit.rvalue**2,
    )
    return SlopeReport(
        u=float(u),
        ladder=ladder,
        p_hat=p_hat,
        std_err=std_err,
        log_p=log_p,
        fitted_slope=float(fit.slope),
        slope_std_err=float(fit.stderr),
        intercept=float(fit.intercept),
        r_squared=float(fit.rvalue**2),
        rate_reference=reference,
        relative_gap=gap,
        passed=passed,
        rate_n=rate_n,
        rate_reference_fine=fine,
    )


def exp_equiv_check(delta, eps_ladder, params, n_paths, seed, n=256, threads=1):
    """
    q̂(ε) = frequency of {sup_k |X^ε_k - 𝕀(v^ε, B^ε)(t_k)| > δ} along a decreasing ε ladder.
    The sup is the full drift ½∫v^ε, so q̂ should vanish superexponentially.
    """
    delta = float(delta)
    if delta < 0.0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    eps_ladder = np.asarray(eps_ladder, dtype=float)
    if eps_ladder.size < 1 or np.any(eps_ladder <= 0.0) or np.any(np.diff(eps_ladder) >= 0.0):
        raise ValueError("the eps ladder must be positive and strictly decreasing")

    grid = Grid(n)
    factor = build_joint_cholesky(grid, params)
    q_hat = []
    for eps in eps_ladder:

        def _count(bundle, eps=eps):
            paths = model_paths(bundle, params, eps)
            b_eps = rescale_b(bundle.b, params, eps)
            gap = np.abs(paths.x - running_integral(paths.v, b_eps, grid))
            return int(np.count_nonzero(gap.max(axis=1) > delta))

        hits = sum(map_blocks(factor, n_paths, seed, _count, threads=threads))
        q_hat.append(hits / n_paths)

    q_hat = np.array(q_hat)
    std_err = np.array([_std_err(q, n_paths) for q in q_hat])
    with np.errstate(divide="ignore"):
        scaled = np.where(q_hat > 0.0, eps_ladder ** params.beta * np.log(q_hat), -np.inf)
    nonincreasing = bool(np.all(np.diff(q_hat) <= 0.0))
    if n_paths < MIN_EQUIV_PATHS:
        logger.warning(
            "exponential equivalence check at n_paths=%d < %d cannot pass", n_paths, MIN_EQUIV_PATHS
        )
    return ExpEquivReport(
        delta=delta,
        eps=eps_ladder,
        q_hat=q_hat,
        std_err=std_err,
        scaled_log_q=scaled,
        n_paths=int(n_paths),
        nonincreasing=nonincreasing,
        passed=nonincreasing and q_hat[-1] == 0.0 and n_paths >= MIN_EQUIV_PATHS,
    )


def _sup_z(params, n, n_paths, seed, threads):
    factor = build_joint_cholesky(Grid(n), params)
    return np.concatenate(list(map_blocks(factor, n_paths, seed, lambda b: b.z.max(axis=1), threads=threads)))


def borell_tis_check(
    x_grid, params, n_paths, seed, n=512, threads=1, relative=False, se_multiple=SE_MULTIPLE
):
    """
    P(sup Z > x) <= exp(-(x - E sup Z)² / (2σ²)) for x above E sup Z, with
    σ² = sup_t Var(Z_t) = η² on [0, 1]. `relative=True` reads `x_grid` as offsets above m̂.
    """
    sups = _sup_z(params, n, n_paths, seed, threads)
    m_hat = float(sups.mean())
    m_std_err = float(sups.std(ddof=1) / math.sqrt(sups.size))
    sigma_sq = params.eta**2
    x = np.asarray(x_grid, dtype=float) + (m_hat if relative else 0.0)

    p_hat = np.array([np.mean(sups > level) for level in x])
    std_err = np.array([_std_err(p, n_paths) for p in p_hat])
    bound = np.where(x > m_hat, np.exp(-((x - m_hat) ** 2) / (2.0 * sigma_sq)), 1.0)
    passed = bool(np.all(p_hat <= bound + se_multiple * std_err))
    return BorellTisReport(
        m_hat=m_hat,
        m_std_err=m_std_err,
        sigma_sq=sigma_sq,
        x=x,
        p_hat=p_hat,
        std_err=std_err,
        bound=bound,
        n_paths=int(n_paths),
        passed=passed,
    )


def selfsim_check(a_values, params, n, n_paths, seed, threads=1, level=KS_LEVEL):
    """KS test of Z_a against N(0, a^{2α+1} η²) for each a with a·n on the grid."""
    grid = Grid(n)
    factor = build_joint_cholesky(grid, params)
    nodes = []
    for a in a_values:
        k = round(float(a) * n)
        if not 0.0 < a <= 1.0 or abs(k - a * n) > 1e-9:
            raise ValueError(f"a={a} must lie in (0, 1] with a*n a grid index (n={n})")
        nodes.append(k)

    z = np.vstack(list(map_blocks(factor, n_paths, seed, lambda b: b.z[:, nodes], threads=threads)))
    rows = []
    for col, a in enumerate(a_values):
        scale = float(a) ** (params.alpha + 0.5) * params.eta
        test = stats.kstest(z[:, col], "norm", args=(0.0, scale))
        rows.append(
            {"a": float(a), "std": scale, "statistic": float(test.statistic), "p_value": float(test.pvalue)}
        )
    passed = all(r["p_value"] >= level for r in rows)
    return StatReport("selfsim", passed, {"level": level, "n_paths": int(n_paths), "tests": rows})


def holder_check(params, n, n_paths, seed, threads=1, tolerance=0.05):
    """Mean variogram roughness of log v against α + ½."""
    grid = Grid(n)
    factor = build_joint_cholesky(grid, params)

    def _estimate(bundle):
        return holder_estimate(np.log(vol_path(bundle, params, 1.0)), grid)

    estimates = np.concatenate(list(map_blocks(factor, n_paths, seed, _estimate, threads=threads)))
    mean = float(estimates.mean())
    target = params.alpha + 0.5

    # exact variogram of Z at the estimator lags, from the middle of the grid
    lags = np.asarray(HOLDER_LAGS) * grid.dt
    middle = grid.times[grid.n // 2]
    variogram = increment_variance(middle, middle + lags, params)
    constant = holder_constant(params)
    model_roughness = 0.5 * float(np.polyfit(np.log(lags), np.log(variogram), 1)[0])
    return StatReport(
        "holder",
        abs(mean - target) <= tolerance,
        {
            "mean": mean,
            "std_err": float(estimates.std(ddof=1) / math.sqrt(estimates.size)) if estimates.size > 1 else None,
            "target": target,
            "tolerance": tolerance,
            "n_paths": int(n_paths),
            "holder_constant": constant,
            "variogram_bound_ratio": float(np.max(variogram / (constant * lags**params.beta))),
            "model_roughness": model_roughness,
        },
    )


def scaling_check(eps, params, n, n_paths, seed, threads=1, level=KS_LEVEL):
    """
    Two-sample KS test of X^ε_1 built from (v^ε, B^ε) against ε^β X_ε simulated
    on [0, ε]; the two samples use independent seeds.
    """
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    unit = build_joint_cholesky(Grid(n), params)
    short = build_joint_cholesky(Grid(n).restricted(eps), params)
    rescaled = np.concatenate(
        list(map_blocks(unit, n_paths, seed, lambda b: _endpoints(b, params, eps), threads=threads))
    )
    direct = eps**params.beta * np.concatenate(
        list(map_blocks(short, n_paths, seed + 1, lambda b: _endpoints(b, params, 1.0), threads=threads))
    )
    test = stats.ks_2samp(rescaled, direct)
    return StatReport(
        "scaling",
        bool(test.pvalue >= level),
        {
            "eps": eps,
            "statistic": float(test.statistic),
            "p_value": float(test.pvalue),
            "level": level,
            "n_paths": int(n_paths),
        },
    )
