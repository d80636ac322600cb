"""
High-Dimensional Synthetic Problem
f^HF = exp(s(z)) and f^LF = 1 + s + s^2/2 with s(z) = 2 - sum_k sin(k) z_k / k,
on p = U[-1, 1]^D (D = 1000 by default).

Both limit states depend on z only through y = sum_k sin(k) z_k / k, a sum of
independent scaled uniforms, so the failure probabilities are exact CDF
values of y.
"""

import logging

import numpy as np
from scipy import integrate

from core.density import CoordinateFactor, ReferenceDensity
from core.problem import ProblemSpec

logger = logging.getLogger(__name__)

CF_T_MAX = 100.0
CF_PIECE = 0.5


def synthetic_weights(dim: int) -> np.ndarray:
    k = np.arange(1, dim + 1, dtype=float)
    return np.sin(k) / k


def uniform_sum_cdf(weights: np.ndarray, c: float, t_max: float = CF_T_MAX) -> float:
    """
    P[sum_k w_k u_k <= c] for independent u_k ~ U[-1, 1]

    Inverts the characteristic function prod_k sin(w_k t)/(w_k t):
    F(c) = 1/2 + (1/pi) int_0^inf sin(c t) phi(t) / t dt. The integral is
    cut at t_max, which needs phi to have decayed there (many weights, or a
    few of equal size).
    """
    weights = np.asarray(weights, dtype=float)
    bound = float(np.sum(np.abs(weights)))
    if c <= -bound:
        return 0.0
    if c >= bound:
        return 1.0

    def integrand(t):
        return np.sin(c * t) * np.prod(np.sinc(weights * t / np.pi)) / t

    edges = np.arange(0.0, t_max + CF_PIECE, CF_PIECE)
    total = sum(integrate.quad(integrand, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
                for a, b in zip(edges[:-1], edges[1:]))
    return float(min(1.0, max(0.0, 0.5 + total / np.pi)))


def synthetic_failure_probability(hf_threshold: float = 20.0, dim: int = 1000) -> float:
    """P[exp(s) > threshold] = P[y < 2 - log(threshold)]"""
    return uniform_sum_cdf(synthetic_weights(dim), 2.0 - np.log(hf_threshold))


def synthetic_lf_failure_probability(lf_threshold: float = 8.0, dim: int = 1000) -> float:
    """P[1 + s + s^2/2 > threshold], both roots of the quadratic"""
    w = synthetic_weights(dim)
    if lf_threshold <= 0.5:
        return 1.0
    root = np.sqrt(2.0 * lf_threshold - 1.0)
    # s > -1 + root  <=>  y < 3 - root;  s < -1 - root  <=>  y > 3 + root
    return uniform_sum_cdf(w, 3.0 - root) + (1.0 - uniform_sum_cdf(w, 3.0 + root))


def make_synthetic1000(hf_threshold: float = 20.0, lf_threshold: float = 8.0,
                       dim: int = 1000, penalty_coeff: float = 100.0) -> ProblemSpec:
    w = synthetic_weights(dim)

    def s(Z):
        return 2.0 - Z @ w

    def lf(Z):
        sz = s(Z)
        return lf_threshold - (1.0 + sz + 0.5 * sz ** 2)

    def lf_grad(Z):
        # grad f^LF = -(1 + s) w, so grad h^LF = (1 + s) w
        return (1.0 + s(Z))[:, None] * w[None, :]

    def lf_value_grad(Z):
        sz = s(Z)
        return lf_threshold - (1.0 + sz + 0.5 * sz ** 2), (1.0 + sz)[:, None] * w[None, :]

    def hf(Z):
        return hf_threshold - np.exp(s(Z))

    return ProblemSpec(
        name='synthetic1000',
        reference=ReferenceDensity.iid(CoordinateFactor.uniform(-1.0, 1.0), dim),
        lf=lf,
        lf_grad=lf_grad,
        hf=hf,
        lower=-np.ones(dim),
        upper=np.ones(dim),
        penalty_coeff=penalty_coeff,
        lf_value_grad=lf_value_grad,
        exact_pf=lambda: synthetic_failure_probability(hf_threshold, dim),
        metadata={'hf_threshold': hf_threshold, 'lf_threshold': lf_threshold},
    )
