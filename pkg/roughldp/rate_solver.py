"""
Discretised rate functions of the small-noise log price.

The decision variable is a piecewise-constant control (correlated mode) or a
pair of controls (uncorrelated mode). The constraint maps a control to the
path φ(t_k) = Σ_{i<k} √𝔪_i · dy_i, with 𝔪 = 𝔪(I^{K_α} f) and dy = ρ f Δ
(correlated) or f₂ Δ (uncorrelated). The cost is the Cameron-Martin energy
½‖f‖² (resp. ½‖f₁‖² + ½‖f₂‖²).
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import InfeasibleProblemError
from .operators import Control, integrate_pair, lift_control, volterra_matrix
from .params import Grid, ModelParams
from .rbergomi import guard_exponent
from .utilities import ordered_map

logger = logging.getLogger(__name__)

CORRELATED = "correlated"
UNCORRELATED = "uncorrelated"
MODES = (CORRELATED, UNCORRELATED)

N_STARTS = 8
MAX_OUTER = 8
PENALTY_GROWTH = 10.0
INNER_GTOL = 1e-10
INNER_MAXITER = 2000
POLISH_STEPS = 20
CONSTRAINT_RTOL = 1e-8
# relative cost gap under which two optima count as tied
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class RateProblem:
    """
    `target` is an endpoint u (float) or a path φ of length n+1 with φ(0) = 0.
    """

    target: object
    params: ModelParams
    grid: Grid
    eps: float = 1.0
    mode: str = CORRELATED
    seed: int = 0
    n_starts: int = N_STARTS
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == CORRELATED and self.params.rho == 0.0:
            raise ValueError(
                "correlated rate function is degenerate for rho = 0; "
                "use mode='uncorrelated'"
            )
        eps = float(self.eps)
        if not eps > 0.0 or not math.isfinite(eps):
            raise ValueError(f"eps must be > 0, got {eps}")
        object.__setattr__(self, "eps", eps)
        if self.grid.horizon != 1.0:
            raise ValueError("rate problems live on the unit interval")
        if int(self.n_starts) < 1:
            raise ValueError(f"n_starts must be >= 1, got {self.n_starts}")

        target = np.asarray(self.target, dtype=float)
        if target.ndim == 0:
            if not math.isfinite(float(target)):
                raise ValueError("endpoint target must be finite")
            object.__setattr__(self, "target", float(target))
        else:
            if target.shape != (self.grid.n + 1,):
                raise ValueError(
                    f"path target must have length n+1={self.grid.n + 1}, got {target.shape}"
                )
            if target[0] != 0.0 or not np.all(np.isfinite(target)):
                raise ValueError("path target must be finite and start at 0")
            target = target.copy()
            target.setflags(write=False)
            object.__setattr__(self, "target", target)

    @property
    def is_path(self):
        return isinstance(self.target, np.ndarray)

    @property
    def tolerance(self):
        scale = np.max(np.abs(self.target)) if self.is_path else abs(self.target)
        return CONSTRAINT_RTOL * max(1.0, float(scale))


@dataclass(frozen=True)
class RateResult:
    value: float
    control: object
    residual: float
    iterations: int
    multistart_best_of: int
    converged: bool
    residual_profile: Optional[np.ndarray] = None
    settings: dict = field(default_factory=dict)

    def as_dict(self):
        if isinstance(self.control, tuple):
            control = {"f1": self.control[0].values, "f2": self.control[1].values}
        else:
            control = self.control.values
        document = {
            "value": self.value,
            "residual": self.residual,
            "iterations": self.iterations,
            "multistart_best_of": self.multistart_best_of,
            "converged": self.converged,
            "control": control,
            "settings": self.settings,
        }
        if self.residual_profile is not None:
            document["residual_profile"] = self.residual_profile
        return document


class _Forward:
    """
    Constraint map of a problem on the packed decision vector
    (f for correlated mode, concatenated (f1, f2) for uncorrelated mode).
    """

    def __init__(self, problem):
        self.problem = problem
        self.params = problem.params
        self.grid = problem.grid
        self.n = problem.grid.n
        self.dt = problem.grid.dt
        self.correlated = problem.mode == CORRELATED
        self.dim = self.n if self.correlated else 2 * self.n
        self.matrix = volterra_matrix(problem.grid, problem.params)[: self.n]
        self.log_scale = math.log(self.params.v0) + (1.0 + self.params.beta) * math.log(problem.eps)
        times = problem.grid.times[: self.n]
        self.drift = -0.5 * self.params.eta**2 * (problem.eps * times) ** self.params.beta

    def split(self, v):
        if self.correlated:
            return v, v
        return v[: self.n], v[self.n :]

    def sqrt_m(self, driver):
        """√𝔪 at the left nodes t_0..t_{n-1} for the Volterra driver control."""
        exponent = self.matrix @ driver + self.drift
        guard_exponent(exponent)
        return np.exp(0.5 * (exponent + self.log_scale))

    def increments(self, v):
        driver, dy_control = self.split(v)
        s = self.sqrt_m(driver)
        weight = self.params.rho if self.correlated else 1.0
        return s * weight * dy_control * self.dt, s

    def endpoint(self, v):
        return float(np.sum(self.increments(v)[0]))

    def path(self, v):
        out = np.zeros(self.n + 1)
        np.cumsum(self.increments(v)[0], out=out[1:])
        return out

    def endpoint_gradient(self, v):
        driver, dy_control = self.split(v)
        s = self.sqrt_m(driver)
        if self.correlated:
            rho = self.params.rho
            return rho * self.dt * (s + 0.5 * self.matrix.T @ (driver * s))
        grad_f1 = 0.5 * self.dt * self.matrix.T @ (dy_control * s)
        grad_f2 = self.dt * s
        return np.concatenate([grad_f1, grad_f2])

    def increment_jacobian(self, v):
        driver, dy_control = self.split(v)
        s = self.sqrt_m(driver)
        if self.correlated:
            rho = self.params.rho
            return rho * self.dt * (np.diag(s) + 0.5 * (driver * s)[:, None] * self.matrix)
        return np.hstack(
            [0.5 * self.dt * (dy_control * s)[:, None] * self.matrix, self.dt * np.diag(s)]
        )

    def constraint(self, v):
        if self.problem.is_path:
            return self.path(v)[1:] - self.problem.target[1:]
        return np.array([self.endpoint(v) - self.problem.target])

    def constraint_jacobian(self, v):
        if self.problem.is_path:
            return np.cumsum(self.increment_jacobian(v), axis=0)
        return self.endpoint_gradient(v)[None, :]

    def cost(self, v):
        return 0.5 * float(v @ v) * self.dt

    def to_controls(self, v):
        if self.correlated:
            return Control(v)
        return (Control(v[: self.n]), Control(v[self.n :]))

    def smoothness(self, v):
        parts = [v] if self.correlated else [v[: self.n], v[self.n :]]
        return float(sum(np.sum(np.diff(p) ** 2) / self.dt for p in parts))

    def feasible_start(self):
        """
        A control meeting the constraint to first order (endpoint) or exactly
        (path, by forward substitution on the triangular increment map).
        """
        s0 = np.exp(0.5 * (self.drift + self.log_scale))
        if not self.problem.is_path:
            u = self.problem.target
            if self.correlated:
                return np.full(self.n, u / (self.params.rho * np.sum(s0) * self.dt))
            return np.concatenate([np.zeros(self.n), np.full(self.n, u / (np.sum(s0) * self.dt))])

        d_phi = np.diff(self.problem.target)
        if not self.correlated:
            return np.concatenate([np.zeros(self.n), d_phi / (s0 * self.dt)])
        f = np.zeros(self.n)
        for k in range(self.n):
            s_k = self.sqrt_m(f)[k]
            f[k] = d_phi[k] / (self.params.rho * s_k * self.dt)
        return f


def _augmented_lagrangian(forward, start, tol):
    """
    Minimise the cost subject to constraint(v) = 0 by quadratic-penalty
    continuation with first-order multiplier updates; inner solves by BFGS on
    the scaled variable w = v √Δ.
    """
    root_dt = math.sqrt(forward.dt)
    v = np.array(start, dtype=float)
    c = forward.constraint(v)
    jac = forward.constraint_jacobian(v)
    multipliers = np.zeros_like(c)
    row_norm = float(np.mean(np.sum((jac / root_dt) ** 2, axis=1)))
    penalty = 1.0 / max(row_norm, 1e-8)
    iterations = 0

    for outer in range(MAX_OUTER):
        lam = multipliers.copy()
        mu = penalty

        def objective(w):
            x = w / root_dt
            c = forward.constraint(x)
            jac = forward.constraint_jacobian(x)
            value = 0.5 * float(w @ w) - float(lam @ c) + 0.5 * mu * float(c @ c)
            grad = w + (jac.T @ (mu * c - lam)) / root_dt
            return value, grad

        result = optimize.minimize(
            objective,
            v * root_dt,
            jac=True,
            method="BFGS",
            options={"gtol": INNER_GTOL, "maxiter": INNER_MAXITER},
        )
        v = result.x / root_dt
        iterations += int(result.nit)
        c = forward.constraint(v)
        residual = float(np.max(np.abs(c)))
        logger.debug(
            "augmented Lagrangian outer %d/%d: penalty=%.1e residual=%.3e cost=%.6g",
            outer + 1,
            MAX_OUTER,
            mu,
            residual,
            forward.cost(v),
        )
        multipliers = lam - mu * c
        if residual <= tol:
            break
        penalty *= PENALTY_GROWTH

    return v, iterations


def _polish(forward, v, tol):
    """Newton / Gauss-Newton restoration of feasibility with minimum-norm steps."""
    for _ in range(POLISH_STEPS):
        c = forward.constraint(v)
        if np.max(np.abs(c)) <= 0.01 * tol:
            break
        jac = forward.constraint_jacobian(v)
        step, *_ = np.linalg.lstsq(jac, c, rcond=None)
        v = v - step
    return v


@dataclass(frozen=True)
class _StartOutcome:
    index: int
    v: Optional[np.ndarray]
    value: float
    residual: float
    iterations: int
    converged: bool
    smoothness: float


def _start_points(forward, problem):
    base = forward.feasible_start()
    starts = [np.zeros(forward.dim), base, -base]
    scale = 0.5 * max(float(np.max(np.abs(base))), 0.1)
    for i in range(max(0, problem.n_starts - len(starts))):
        sequence = np.random.SeedSequence(problem.seed, spawn_key=(i,))
        rng = np.random.Generator(np.random.Philox(sequence))
        starts.append(base + scale * rng.standard_normal(forward.dim))
    return starts[: problem.n_starts]


def _run_start(forward, problem, index, start):
    tol = problem.tolerance
    try:
        v, iterations = _augmented_lagrangian(forward, start, tol)
        v = _polish(forward, v, tol)
        c = forward.constraint(v)
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        logger.warning("rate solve start %d failed: %s", index, e)
        return _StartOutcome(index, None, math.inf, math.inf, 0, False, math.inf)
    residual = float(np.max(np.abs(c)))
    converged = residual <= tol
    if not converged:
        logger.warning("rate solve start %d stopped at residual %.3e", index, residual)
    return _StartOutcome(
        index, v, forward.cost(v), residual, iterations, converged, forward.smoothness(v)
    )


def _pick_best(outcomes):
    finished = [o for o in outcomes if o.converged]
    best_value = min(o.value for o in finished)
    tied = [o for o in finished if o.value - best_value <= TIE_RTOL * max(1.0, best_value)]
    return min(tied, key=lambda o: (o.smoothness, o.index))


def _settings(problem):
    settings = {
        "mode": problem.mode,
        "eps": problem.eps,
        "n": problem.grid.n,
        "params": problem.params.as_dict(),
        "n_starts": problem.n_starts,
        "seed": problem.seed,
    }
    if problem.is_path:
        settings["target_path"] = problem.target
    else:
        settings["u"] = problem.target
    return settings


def _zero_result(forward, problem):
    v = np.zeros(forward.dim)
    return RateResult(
        value=0.0,
        control=forward.to_controls(v),
        residual=0.0,
        iterations=0,
        multistart_best_of=problem.n_starts,
        converged=True,
        residual_profile=np.zeros(problem.grid.n) if problem.is_path else None,
        settings=_settings(problem),
    )


def _solve(problem):
    forward = _Forward(problem)
    if np.all(np.asarray(problem.target) == 0.0):
        return _zero_result(forward, problem)

    starts = _start_points(forward, problem)
    outcomes = list(
        ordered_map(
            lambda item: _run_start(forward, problem, *item),
            list(enumerate(starts)),
            threads=problem.threads,
        )
    )
    if not any(o.converged for o in outcomes):
        closest = min(outcomes, key=lambda o: (o.residual, o.index))
        profile = None
        if problem.is_path and closest.v is not None:
            profile = forward.constraint(closest.v)
        raise InfeasibleProblemError(
            f"no start reached the constraint tolerance {problem.tolerance:.1e}; "
            f"best residual {closest.residual:.3e}",
            best_residual=closest.residual,
            residual_profile=profile,
        )

    best = _pick_best(outcomes)
    c = forward.constraint(best.v)
    logger.info(
        "%s rate solve (n=%d, eps=%g): value=%.10g residual=%.2e, %d/%d starts converged",
        problem.mode,
        problem.grid.n,
        problem.eps,
        best.value,
        best.residual,
        sum(o.converged for o in outcomes),
        len(outcomes),
    )
    return RateResult(
        value=best.value,
        control=forward.to_controls(best.v),
        residual=best.residual,
        iterations=sum(o.iterations for o in outcomes),
        multistart_best_of=len(outcomes),
        converged=True,
        residual_profile=np.abs(c) if problem.is_path else None,
        settings=_settings(problem),
    )


def _flip_f2(result, problem):
    f1, f2 = result.control
    return dataclasses.replace(
        result, control=(f1, Control(-f2.values)), settings=_settings(problem)
    )


def solve_endpoint(problem):
    """Λ^X_1(u) at the problem's ε: min cost subject to φ(1) = u."""
    if problem.is_path:
        raise ValueError("solve_endpoint needs a scalar target u; use solve_path")
    if problem.mode == UNCORRELATED and problem.target < 0.0:
        # odd in f2, even cost: solve at |u| and flip f2
        mirrored = dataclasses.replace(problem, target=-problem.target)
        return _flip_f2(_solve(mirrored), problem)
    return _solve(problem)


def solve_path(problem):
    """Λ^X(φ) at the problem's ε: min cost subject to the running constraint at every node."""
    if not problem.is_path:
        raise ValueError("solve_path needs a path target φ; use solve_endpoint")
    return _solve(problem)


def endpoint_map_correlated(f, problem):
    """G(f) = Σ_k √𝔪(I^{K_α} f)(t_k, ε) · ρ f_k Δ."""
    if problem.mode != CORRELATED:
        raise ValueError("endpoint_map_correlated needs a correlated problem")
    return integrate_pair(lift_control(f, problem.grid, problem.params), problem.grid, problem.params, problem.eps)


def endpoint_map_uncorrelated(f1, f2, problem):
    """Σ_k √𝔪(I^{K_α} f1)(t_k, ε) · f2_k Δ."""
    if problem.mode != UNCORRELATED:
        raise ValueError("endpoint_map_uncorrelated needs an uncorrelated problem")
    pair = lift_control((f1, f2), problem.grid, problem.params, rho=1.0)
    return integrate_pair(pair, problem.grid, problem.params, problem.eps)


def forward_path(control, problem):
    """The running constraint map φ(t_k) for a control (or control pair)."""
    forward = _Forward(problem)
    if isinstance(control, tuple):
        return forward.path(np.concatenate([control[0].values, control[1].values]))
    return forward.path(np.asarray(control.values))


def gradient_endpoint(f, problem):
    """
    Adjoint gradient of the endpoint map. For a correlated problem the entries are
    ∂G/∂f_j = ρ√𝔪_j Δ + Σ_{k>j} ρ f_k Δ · ½√𝔪_k · A_{kj}; for an uncorrelated
    problem `f` is a pair and a pair of gradients is returned.
    """
    forward = _Forward(problem)
    if isinstance(f, tuple):
        grad = forward.endpoint_gradient(np.concatenate([f[0].values, f[1].values]))
        return grad[: forward.n], grad[forward.n :]
    return forward.endpoint_gradient(np.asarray(f.values))


def solve_endpoint_uncorrelated_reduced(problem):
    """
    inf over f1 of ½‖f1‖² + u²/(2 V(f1)), V(f1) = Σ_k 𝔪(I^{K_α} f1)(t_k, ε) Δ.
    The inner minimisation over f2 is solved in closed form (f2 ∝ √𝔪).
    """
    if problem.mode != UNCORRELATED or problem.is_path:
        raise ValueError("the reduced solver needs an uncorrelated endpoint problem")
    forward = _Forward(problem)
    n = forward.n
    dt = forward.dt
    u = problem.target
    root_dt = math.sqrt(dt)

    def reduced(w):
        f1 = w / root_dt
        m = forward.sqrt_m(f1) ** 2
        big_v = float(np.sum(m) * dt)
        value = 0.5 * float(w @ w) + u * u / (2.0 * big_v)
        grad_f1 = -u * u / (2.0 * big_v**2) * dt * (forward.matrix.T @ m)
        return value, w + grad_f1 / root_dt

    if u == 0.0:
        return _zero_result(forward, problem)

    starts = [np.zeros(n), np.ones(n), -np.ones(n)]
    for i in range(max(0, problem.n_starts - len(starts))):
        sequence = np.random.SeedSequence(problem.seed, spawn_key=(i,))
        starts.append(np.random.Generator(np.random.Philox(sequence)).standard_normal(n))
    starts = starts[: problem.n_starts]

    def _run(item):
        index, start = item
        try:
            result = optimize.minimize(
                reduced,
                start * root_dt,
                jac=True,
                method="BFGS",
                options={"gtol": INNER_GTOL, "maxiter": INNER_MAXITER},
            )
        except ArithmeticError as e:
            logger.warning("reduced solve start %d failed: %s", index, e)
            return index, None, math.inf, 0
        return index, result.x / root_dt, float(result.fun), int(result.nit)

    outcomes = list(ordered_map(_run, list(enumerate(starts)), threads=problem.threads))
    finished = [o for o in outcomes if o[1] is not None]
    if not finished:
        raise InfeasibleProblemError("every reduced start overflowed", best_residual=math.inf)
    best_value = min(o[2] for o in finished)
    tied = [o for o in finished if o[2] - best_value <= TIE_RTOL * max(1.0, best_value)]
    index, f1, _, _ = min(tied, key=lambda o: (forward.smoothness(o[1]), o[0]))

    s = forward.sqrt_m(f1)
    big_v = float(np.sum(s**2) * dt)
    f2 = u * s / big_v
    v = np.concatenate([f1, f2])
    residual = abs(forward.endpoint(v) - u)
    logger.info("reduced uncorrelated solve: value=%.10g (start %d)", forward.cost(v), index)
    return RateResult(
        value=forward.cost(v),
        control=forward.to_controls(v),
        residual=residual,
        iterations=sum(o[3] for o in outcomes),
        multistart_best_of=len(outcomes),
        converged=residual <= problem.tolerance,
        settings=_settings(problem),
    )


def rate_table(us, problem, reduced=False):
    """u -> Λ^X_1(u) for each u in `us` on an otherwise fixed problem."""
    solver = solve_endpoint_uncorrelated_reduced if reduced else solve_endpoint
    return [solver(dataclasses.replace(problem, target=float(u))) for u in us]
