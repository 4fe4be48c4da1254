"""
Closed-form covariances of the Gaussian triple (Z, B, W).

All functions broadcast over numpy arrays of times in [0, 1].
"""

import numpy as np
from scipy import integrate

from .params import ModelParams  # noqa: F401  (re-exported)
from .special_math import hyp2f1_vec


def _as_times(*values):
    arrays = [np.asarray(v, dtype=float) for v in values]
    for arr in arrays:
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("covariance times must lie in [0, 1]")
    return arrays


def _scalar_or_array(value):
    if np.ndim(value) == 0:
        return float(value)
    return value


def cov_zz(s, t, params):
    """
    E(Z_s Z_t) = η²(2α+1)/(α+1) (s∧t)^{1+α} (s∨t)^α ₂F₁(1, -α; 2+α; (s∧t)/(s∨t)).
    """
    s, t = _as_times(s, t)
    lo, hi = np.broadcast_arrays(np.minimum(s, t), np.maximum(s, t))
    alpha = params.alpha
    out = np.zeros(lo.shape, dtype=float)
    nonzero = lo > 0.0
    if nonzero.any():
        lo_nz = lo[nonzero]
        hi_nz = hi[nonzero]
        ratio = np.minimum(lo_nz / hi_nz, 1.0)
        out[nonzero] = (
            params.eta**2
            * params.beta
            / (alpha + 1.0)
            * lo_nz ** (1.0 + alpha)
            * hi_nz**alpha
            * hyp2f1_vec(1.0, -alpha, 2.0 + alpha, ratio)
        )
    return _scalar_or_array(out)


def cov_zb(t, params):
    """E(Z_t B_t) = ϱ t^{α+1}."""
    (t,) = _as_times(t)
    return _scalar_or_array(params.varrho * t ** (params.alpha + 1.0))


def cov_zw(s, t, params):
    """E(Z_s W_t) = ∫_0^{s∧t} K_α(u, s) du."""
    s, t = _as_times(s, t)
    a1 = params.alpha + 1.0
    overlap = np.minimum(s, t)
    value = params.kernel_scale / a1 * (s**a1 - (s - overlap) ** a1)
    return _scalar_or_array(value)


def self_similar_scale(a, params):
    """a^{α+1/2}: Z_{a·} has the law of a^{α+1/2} Z."""
    a = float(a)
    if a <= 0.0:
        raise ValueError(f"self-similarity factor must be > 0, got {a}")
    return a ** (params.alpha + 0.5)


def joint_covariance(times, params):
    """
    Covariance of the stacked vector (Z_{t_1..t_m}, W_{t_1..t_m}).
    """
    times = np.asarray(times, dtype=float)
    s, t = np.meshgrid(times, times, indexing="ij")
    zz = cov_zz(s, t, params)
    zw = cov_zw(s, t, params)
    ww = np.minimum(s, t)
    zz = 0.5 * (zz + zz.T)
    return np.block([[zz, zw], [zw.T, ww]])


def increment_variance(s, t, params):
    """E|Z_t - Z_s|²."""
    return _scalar_or_array(
        np.asarray(cov_zz(s, s, params))
        + np.asarray(cov_zz(t, t, params))
        - 2.0 * np.asarray(cov_zz(s, t, params))
    )


def holder_constant(params):
    """
    K with E|Z_t - Z_s|² <= K |t - s|^{2α+1} for all s, t.
    """
    alpha = params.alpha

    def integrand(y):
        return ((y + 1.0) ** alpha - y**alpha) ** 2

    head, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
    tail, _ = integrate.quad(integrand, 1.0, np.inf, limit=200)
    return params.eta**2 * (1.0 + params.beta * (head + tail))
