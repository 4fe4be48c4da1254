import dataclasses
import math

import numpy as np
import pytest

from roughldp import rate_solver
from roughldp.errors import InfeasibleProblemError
from roughldp.operators import Control, m_baseline, rkhs_cost, rkhs_cost2, volterra_matrix
from roughldp.params import Grid, ModelParams
from roughldp.rate_solver import (
    CORRELATED,
    UNCORRELATED,
    RateProblem,
    endpoint_map_correlated,
    endpoint_map_uncorrelated,
    forward_path,
    gradient_endpoint,
    rate_table,
    solve_endpoint,
    solve_endpoint_uncorrelated_reduced,
    solve_path,
)


def make_params(alpha=-0.25, eta=1.0, rho=-0.7, v0=0.04):
    return ModelParams(alpha=alpha, eta=eta, rho=rho, v0=v0)


def correlated(target, n=8, eps=1.0, **kwargs):
    return RateProblem(target, make_params(**kwargs), Grid(n), eps, CORRELATED)


def uncorrelated(target, n=8, eps=1.0, **kwargs):
    kwargs.setdefault("rho", 0.0)
    return RateProblem(target, make_params(**kwargs), Grid(n), eps, UNCORRELATED)


def central_differences(func, f, step=1e-6):
    grad = np.zeros_like(f)
    for j in range(f.size):
        up = f.copy()
        down = f.copy()
        up[j] += step
        down[j] -= step
        grad[j] = (func(up) - func(down)) / (2.0 * step)
    return grad


def test_problem_validation():
    with pytest.raises(ValueError, match="uncorrelated"):
        correlated(0.1, rho=0.0)
    with pytest.raises(ValueError):
        correlated(0.1, eps=0.0)
    with pytest.raises(ValueError):
        RateProblem(0.1, make_params(), Grid(4), 1.0, "sideways")
    with pytest.raises(ValueError):
        RateProblem(0.1, make_params(), Grid(4, 0.5), 1.0, CORRELATED)
    with pytest.raises(ValueError):
        correlated(np.zeros(3), n=4)
    with pytest.raises(ValueError):
        correlated(np.array([0.1, 0.2, 0.3]), n=2)
    with pytest.raises(ValueError):
        solve_path(correlated(0.1))
    with pytest.raises(ValueError):
        solve_endpoint(correlated(np.zeros(9)))


def test_endpoint_map_basics():
    problem = correlated(0.0, n=16)
    assert endpoint_map_correlated(Control(np.zeros(16)), problem) == 0.0

    eps = 0.5
    params = make_params()
    single = RateProblem(0.0, params, Grid(1), eps, CORRELATED)
    expected = math.sqrt(params.v0 * eps ** (1.0 + params.beta)) * params.rho * 1.7
    assert endpoint_map_correlated(Control([1.7]), single) == pytest.approx(expected, rel=1e-14)

    pair = uncorrelated(0.0, n=4)
    baseline = np.sqrt(m_baseline(Grid(4), pair.params)[:-1])
    f2 = np.array([1.0, -2.0, 0.5, 3.0])
    value = endpoint_map_uncorrelated(Control(np.zeros(4)), Control(f2), pair)
    assert value == pytest.approx(float(np.sum(baseline * f2) * 0.25), rel=1e-14)


def test_endpoint_map_even_part_is_second_order():
    problem = correlated(0.0, n=16)

    def asymmetry(scale):
        f = scale * np.ones(16)
        plus = endpoint_map_correlated(Control(f), problem)
        minus = endpoint_map_correlated(Control(-f), problem)
        return abs(plus + minus) / abs(plus)

    ratio = asymmetry(1e-2) / asymmetry(1e-3)
    assert 8.0 <= ratio <= 12.0


def test_gradient_at_zero():
    params = make_params(eta=1.2)
    problem = RateProblem(0.0, params, Grid(16), 0.5, CORRELATED)
    grad = gradient_endpoint(Control(np.zeros(16)), problem)
    left = Grid(16).times[:-1]
    expected = params.rho * np.sqrt(
        params.v0 * 0.5 ** (1.0 + params.beta) * np.exp(-0.5 * params.eta**2 * (0.5 * left) ** params.beta)
    ) / 16
    np.testing.assert_allclose(grad, expected, rtol=1e-13)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_central_differences(seed):
    problem = correlated(0.0, n=16)
    f = np.random.default_rng(seed).standard_normal(16)
    grad = gradient_endpoint(Control(f), problem)
    numeric = central_differences(lambda x: endpoint_map_correlated(Control(x), problem), f)
    assert np.max(np.abs(grad - numeric)) <= 1e-5 * np.max(np.abs(grad))


def test_uncorrelated_gradient_matches_central_differences():
    problem = uncorrelated(0.0, n=16)
    rng = np.random.default_rng(5)
    f1, f2 = rng.standard_normal(16), rng.standard_normal(16)
    g1, g2 = gradient_endpoint((Control(f1), Control(f2)), problem)
    n1 = central_differences(lambda x: endpoint_map_uncorrelated(Control(x), Control(f2), problem), f1)
    n2 = central_differences(lambda x: endpoint_map_uncorrelated(Control(f1), Control(x), problem), f2)
    assert np.max(np.abs(g1 - n1)) <= 1e-5 * np.max(np.abs(g1))
    assert np.max(np.abs(g2 - n2)) <= 1e-5 * np.max(np.abs(g2))


@pytest.mark.parametrize("mode", [CORRELATED, UNCORRELATED])
def test_zero_target_costs_nothing(mode):
    problem = correlated(0.0) if mode == CORRELATED else uncorrelated(0.0)
    result = solve_endpoint(problem)
    assert result.value == 0.0
    assert result.converged
    controls = result.control if isinstance(result.control, tuple) else (result.control,)
    for control in controls:
        np.testing.assert_array_equal(control.values, 0.0)
    assert solve_endpoint_uncorrelated_reduced(uncorrelated(0.0)).value == 0.0


@pytest.mark.parametrize("u, eps", [(0.1, 1.0), (-0.25, 0.3), (2.0, 1.0)])
def test_single_step_closed_form(u, eps):
    params = make_params()
    problem = RateProblem(u, params, Grid(1), eps, CORRELATED)
    result = solve_endpoint(problem)
    expected = u**2 / (2.0 * params.v0 * eps ** (1.0 + params.beta) * params.rho**2 * 1.0)
    assert result.value == pytest.approx(expected, rel=1e-8)
    assert result.converged
    assert result.residual <= problem.tolerance


@pytest.mark.parametrize("u", [0.1, -0.25])
def test_single_step_matches_brute_force(u):
    problem = correlated(u, n=1)
    result = solve_endpoint(problem)

    # scan the bracketing box and keep the control that best meets the constraint
    box = np.arange(-5.0, 5.0, 1e-2)
    reached = np.array([endpoint_map_correlated(Control([x]), problem) for x in box])
    coarse = box[np.argmin(np.abs(reached - u))]
    window = np.arange(coarse - 0.02, coarse + 0.02, 1e-5)
    reached = np.array([endpoint_map_correlated(Control([x]), problem) for x in window])
    best = window[np.argmin(np.abs(reached - u))]
    assert result.value == pytest.approx(0.5 * best**2, abs=1e-4)


def test_two_step_matches_brute_force():
    params = make_params()
    grid = Grid(2)
    u = 0.1
    dt = grid.dt
    result = solve_endpoint(RateProblem(u, params, grid, 1.0, CORRELATED))

    # G(f0, f1) is linear in f1 given f0, so scan f0 and solve for f1
    f0 = np.arange(-20.0, 20.0, 1e-3)
    baseline = m_baseline(grid, params)
    a10 = volterra_matrix(grid, params)[1, 0]
    s0 = math.sqrt(baseline[0])
    s1 = np.sqrt(baseline[1] * np.exp(a10 * f0))
    f1 = (u / (params.rho * dt) - s0 * f0) / s1
    brute = float(np.min(0.5 * (f0**2 + f1**2) * dt))
    assert result.value == pytest.approx(brute, abs=1e-4)


@pytest.mark.parametrize(
    "u, alpha, eta, v0, eps",
    [
        (0.3, -0.25, 1.0, 0.04, 1.0),
        (0.1, -0.25, 1.0, 0.04, 1.0),
        (0.3, -0.4, 1.0, 0.04, 1.0),
        (0.2, -0.1, 1.5, 0.04, 0.5),
        (-0.4, -0.25, 0.5, 0.09, 1.0),
    ],
)
def test_uncorrelated_reduced_agrees_with_full(u, alpha, eta, v0, eps):
    problem = uncorrelated(u, n=8, eps=eps, alpha=alpha, eta=eta, v0=v0)
    full = solve_endpoint(problem)
    reduced = solve_endpoint_uncorrelated_reduced(problem)
    assert full.converged and reduced.converged
    assert full.value == pytest.approx(reduced.value, abs=1e-6)


def test_uncorrelated_value_below_frozen_driver_bound():
    problem = uncorrelated(0.3, n=8)
    baseline = m_baseline(problem.grid, problem.params)[:-1]
    bound = 0.3**2 / (2.0 * np.sum(baseline) * problem.grid.dt)
    assert solve_endpoint(problem).value <= bound + 1e-10


def test_uncorrelated_sign_symmetry():
    plus = solve_endpoint(uncorrelated(0.3, n=8))
    minus = solve_endpoint(uncorrelated(-0.3, n=8))
    assert abs(plus.value - minus.value) <= 1e-10
    np.testing.assert_array_equal(minus.control[0].values, plus.control[0].values)
    np.testing.assert_array_equal(minus.control[1].values, -plus.control[1].values)
    assert minus.settings["u"] == -0.3

    reduced_plus = solve_endpoint_uncorrelated_reduced(uncorrelated(0.3, n=8))
    reduced_minus = solve_endpoint_uncorrelated_reduced(uncorrelated(-0.3, n=8))
    assert abs(reduced_plus.value - reduced_minus.value) <= 1e-10


def test_value_grows_with_distance_from_zero():
    problem = correlated(0.0, n=8)
    for us in ([0.05, 0.1, 0.2, 0.3], [-0.05, -0.1, -0.2]):
        values = [r.value for r in rate_table(us, problem)]
        assert all(v >= 0.0 for v in values)
        assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))


def test_rate_table_reduced():
    results = rate_table([0.1, 0.2], uncorrelated(0.0, n=4), reduced=True)
    assert [r.settings["u"] for r in results] == [0.1, 0.2]
    assert results[0].value < results[1].value


def test_threads_do_not_change_the_answer():
    single = solve_endpoint(correlated(0.2, n=8))
    multi = solve_endpoint(dataclasses.replace(correlated(0.2, n=8), threads=4))
    assert single.value == multi.value
    np.testing.assert_array_equal(single.control.values, multi.control.values)


def test_zero_path_costs_nothing():
    result = solve_path(correlated(np.zeros(9), n=8))
    assert result.value == 0.0
    np.testing.assert_array_equal(result.residual_profile, 0.0)


def test_single_step_path_is_endpoint_problem():
    params = make_params()
    path = solve_path(RateProblem(np.array([0.0, 0.1]), params, Grid(1), 1.0, CORRELATED))
    endpoint = solve_endpoint(RateProblem(0.1, params, Grid(1), 1.0, CORRELATED))
    assert path.value == pytest.approx(endpoint.value, rel=1e-8)


def test_correlated_path_recovers_synthetic_target():
    problem = correlated(0.0, n=8)
    f_star = Control(np.full(8, 0.5))
    target = forward_path(f_star, problem)
    assert target[0] == 0.0
    result = solve_path(dataclasses.replace(problem, target=target))
    assert result.converged
    assert result.value <= rkhs_cost(f_star) + 1e-6
    assert np.max(result.residual_profile) <= dataclasses.replace(problem, target=target).tolerance


def test_uncorrelated_path_recovers_synthetic_target():
    problem = uncorrelated(0.0, n=6)
    f1, f2 = Control(np.full(6, 0.3)), Control(np.full(6, 0.5))
    target = forward_path((f1, f2), problem)
    result = solve_path(dataclasses.replace(problem, target=target))
    assert result.converged
    assert result.value <= rkhs_cost2(f1, f2) + 1e-6
    assert result.residual_profile.shape == (6,)
    assert np.max(result.residual_profile) <= dataclasses.replace(problem, target=target).tolerance


def test_all_starts_failing_raises(monkeypatch):
    def stuck(forward, problem, index, start):
        return rate_solver._StartOutcome(index, start, 1.0, 0.5 + index, 3, False, 0.0)

    monkeypatch.setattr(rate_solver, "_run_start", stuck)
    with pytest.raises(InfeasibleProblemError) as info:
        solve_endpoint(correlated(0.2, n=4))
    assert info.value.best_residual == 0.5


def test_result_document():
    result = solve_endpoint(correlated(0.2, n=4))
    document = result.as_dict()
    assert set(document) >= {"value", "residual", "iterations", "control", "settings", "converged"}
    assert document["settings"]["u"] == 0.2
    assert document["multistart_best_of"] == 8
    assert len(document["control"]) == 4


@pytest.mark.slow
def test_refinement_stability():
    coarse = solve_endpoint(correlated(0.1, n=64))
    fine = solve_endpoint(correlated(0.1, n=128))
    assert abs(coarse.value - fine.value) <= 0.02 * fine.value


@pytest.mark.slow
def test_small_target_settles_from_below_under_refinement():
    values = [solve_endpoint(correlated(0.1, n=n)).value for n in (8, 16, 32, 64, 128)]
    steps = np.diff(values)
    assert np.all(steps > 0.0)
    assert np.all(steps[1:] <= 0.75 * steps[:-1])


@pytest.mark.slow
def test_large_target_keeps_growing_under_refinement():
    # the left-point constraint lets a cell's own control skip its 𝔪 factor;
    # at u = 0.3 the optimum is a spike pair in the first cells that sharpens with n
    results = [solve_endpoint(correlated(0.3, n=n)) for n in (32, 64, 128)]
    values = np.array([r.value for r in results])
    assert np.all(values[1:] >= 1.25 * values[:-1])
    f = results[-1].control.values
    assert np.sum(f[:4] ** 2) >= 0.5 * np.sum(f**2)
