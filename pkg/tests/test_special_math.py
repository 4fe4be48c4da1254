import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from roughldp.params import ModelParams
from roughldp.special_math import (
    HypArgs,
    _euler_integral,
    gamma,
    hyp2f1,
    hyp2f1_vec,
    kernel,
    kernel_cell_integral,
)

alphas = st.floats(min_value=-0.49, max_value=-0.01)


def test_gamma_known_values():
    assert gamma(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-12)
    assert gamma(5.0) == pytest.approx(24.0, rel=1e-12)
    assert gamma(1.75) == pytest.approx(math.gamma(1.75), rel=1e-12)


@pytest.mark.parametrize("x", [0.0, -1.0, -0.5])
def test_gamma_rejects_nonpositive(x):
    with pytest.raises(ValueError):
        gamma(x)


@pytest.mark.parametrize(
    "a, b, c",
    [(1.0, 0.25, 1.75), (0.5, 0.3, 1.7), (1.0, 0.4, 1.6), (1.0, 0.1, 1.9)],
)
@pytest.mark.parametrize("z", [0.0, 0.25, 0.5, 0.75, 0.9, 0.99])
def test_hyp2f1_matches_scipy(a, b, c, z):
    assert hyp2f1(HypArgs(a, b, c, z)) == pytest.approx(special.hyp2f1(a, b, c, z), rel=1e-10)


def test_hyp2f1_integer_gap_falls_back_to_quadrature():
    # c - a - b = 1
    for z in (0.6, 0.9):
        assert hyp2f1(HypArgs(1.0, 0.5, 2.5, z)) == pytest.approx(special.hyp2f1(1.0, 0.5, 2.5, z), rel=1e-9)


def test_hyp2f1_vectorised_matches_scalar():
    z = np.array([0.0, 0.3, 0.5, 0.7, 1.0])
    values = hyp2f1_vec(1.0, 0.25, 1.75, z)
    expected = [hyp2f1(HypArgs(1.0, 0.25, 1.75, zi)) for zi in z]
    np.testing.assert_allclose(values, expected, rtol=1e-14)


@given(alphas)
def test_gauss_identity(alpha):
    value = hyp2f1(HypArgs(1.0, -alpha, 2.0 + alpha, 1.0))
    assert abs(value - (1.0 + alpha) / (1.0 + 2.0 * alpha)) <= 1e-10 * max(1.0, value)


@pytest.mark.parametrize("a, b, c", [(0.3, 1.0, 2.2), (1.5, 2.0, 3.7)])
@pytest.mark.parametrize("z", [0.0, 0.25, 0.5, 0.9])
def test_series_agrees_with_euler_integral(a, b, c, z):
    assert hyp2f1(HypArgs(a, b, c, z)) == pytest.approx(_euler_integral(a, b, c, z), abs=1e-9)


@pytest.mark.parametrize(
    "a, b, c, z",
    [
        (1.0, 0.25, -1.0, 0.5),
        (1.0, 0.25, 0.0, 0.5),
        (1.0, 0.25, 1.75, 1.2),
        (1.0, 0.25, 1.75, -0.1),
        (1.0, 1.0, 1.5, 1.0),
    ],
)
def test_hyp_args_validation(a, b, c, z):
    with pytest.raises(ValueError):
        HypArgs(a, b, c, z)


def test_kernel_value_and_domain():
    params = ModelParams(alpha=-0.25, eta=1.0, rho=0.0, v0=0.04)
    assert kernel(0.0, 1.0, params) == pytest.approx(math.sqrt(0.5))
    assert kernel(0.5, 0.75, params) == pytest.approx(math.sqrt(0.5) * 0.25**-0.25)
    with pytest.raises(ValueError):
        kernel(0.5, 0.5, params)
    with pytest.raises(ValueError):
        kernel(0.6, 0.5, params)


@pytest.mark.parametrize("alpha, eta, t", [(-0.25, 1.0, 1.0), (-0.1, 1.5, 0.7), (-0.3, 0.5, 0.3)])
def test_kernel_square_integral(alpha, eta, t):
    params = ModelParams(alpha=alpha, eta=eta, rho=0.0, v0=0.04)
    value, _ = integrate.quad(lambda s: kernel(s, t, params) ** 2, 0.0, t, limit=200)
    assert value == pytest.approx(eta**2 * t ** (2.0 * alpha + 1.0), rel=1e-8)


@settings(max_examples=50)
@given(alphas, st.floats(0.0, 0.4), st.floats(0.01, 0.3))
def test_kernel_cell_integral_matches_quadrature(alpha, lo, width):
    params = ModelParams(alpha=alpha, eta=1.2, rho=0.0, v0=0.04)
    hi = lo + width
    t = hi + 0.2
    value, _ = integrate.quad(lambda u: kernel(u, t, params), lo, hi)
    assert kernel_cell_integral(lo, hi, t, params) == pytest.approx(value, rel=1e-9)
