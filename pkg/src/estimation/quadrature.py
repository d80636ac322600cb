"""
One-Dimensional Quadrature Oracles
Exact-to-quadrature values of P_f, Z(l), the estimator factor moments and
KL(q*||q) for D = 1 problems. Integrals are split at the roots of h so every
piece has a constant failure indicator.
"""

import logging
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy import integrate, optimize

from core.problem import ProblemSpec
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

GAUSSIAN_HALF_WIDTH = 12.0
QUAD_OPTS = {'epsabs': 1e-13, 'epsrel': 1e-12, 'limit': 200}


def _scalar(fn: Callable[[np.ndarray], np.ndarray]) -> Callable[[float], float]:
    return lambda x: float(np.asarray(fn(np.array([[x]])))[0])


def integration_interval(problem: ProblemSpec) -> Tuple[float, float]:
    """Support of p intersected with the domain box; Gaussian tails cut at 12 std"""
    if problem.dim != 1:
        raise ConfigError(f"quadrature oracles need D = 1, '{problem.name}' has D = {problem.dim}")
    factor = problem.reference.factors[0]
    lo, hi = problem.reference.support_lower[0], problem.reference.support_upper[0]
    if not np.isfinite(lo):
        lo = factor.a - GAUSSIAN_HALF_WIDTH * factor.b
    if not np.isfinite(hi):
        hi = factor.a + GAUSSIAN_HALF_WIDTH * factor.b
    return float(max(lo, problem.lower[0])), float(min(hi, problem.upper[0]))


def failure_breakpoints(fn: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                        n_scan: int = 4001) -> List[float]:
    """Roots of h on [lo, hi] from a dense sign scan refined with brentq"""
    xs = np.linspace(lo, hi, n_scan)
    vals = np.asarray(fn(xs[:, None]), dtype=float)
    h = _scalar(fn)
    roots = []
    for i in np.flatnonzero((vals[:-1] < 0) != (vals[1:] < 0)):
        if vals[i] * vals[i + 1] < 0:
            roots.append(optimize.brentq(h, xs[i], xs[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
        else:
            roots.append(float(xs[i + 1] if vals[i] != 0 else xs[i]))
    return roots


class OneDimQuadrature:
    """Piecewise integration of functions of (z, h^LF(z), h^HF(z)) against p"""

    def __init__(self, problem: ProblemSpec):
        self.problem = problem
        self.lo, self.hi = integration_interval(problem)
        self.lf = _scalar(problem.lf)
        self.hf = _scalar(problem.hf)
        cuts = failure_breakpoints(problem.lf, self.lo, self.hi) + failure_breakpoints(problem.hf, self.lo, self.hi)
        edges = np.unique(np.concatenate([[self.lo, self.hi], np.clip(cuts, self.lo, self.hi)]))
        self.pieces = [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        self._log_p = problem.reference.log_density

    def pdf(self, x: float) -> float:
        return float(np.exp(self._log_p(np.array([x]))))

    def integrate(self, fn: Callable[[float], float], hf_fail: bool = None) -> float:
        """
        Integral of fn(x) p(x) over pieces, optionally restricted to the
        pieces where the HF indicator equals hf_fail
        """
        total = 0.0
        for a, b in self.pieces:
            if hf_fail is not None and (self.hf(0.5 * (a + b)) < 0) != hf_fail:
                continue
            value, _ = integrate.quad(lambda x: fn(x) * self.pdf(x), a, b, **QUAD_OPTS)
            total += value
        return total

    def failure_probability(self) -> float:
        return self.integrate(lambda x: 1.0, hf_fail=True)

    def lf_failure_probability(self) -> float:
        total = 0.0
        for a, b in self.pieces:
            if self.lf(0.5 * (a + b)) < 0:
                total += integrate.quad(self.pdf, a, b, **QUAD_OPTS)[0]
        return total


def quadrature_failure_probability(problem: ProblemSpec) -> float:
    return OneDimQuadrature(problem).failure_probability()


def quadrature_factors(problem: ProblemSpec, ell: float) -> Dict[str, float]:
    """
    Quadrature values of every factor of the estimator at lengthscale ell

    Keys: Z, pf, p_AL, ep_weighted (E_p[1_{h^HF<0} exp(l tanh h^LF)]),
    var_p_normalizer (Var_p of the normalizer terms), mean_q_y and var_q_y
    (moments of y = 1_{h^HF<0} exp(l tanh h^LF) under q), q_integral,
    var_direct (Z^2 Var_q[y] with q-density integrands), var_p_form
    (Z E_p[1 exp(l tanh h)] - P_f^2) and kl (KL(q*||q)).
    """
    quad = OneDimQuadrature(problem)
    t = lambda x: np.tanh(quad.lf(x))

    z = quad.integrate(lambda x: np.exp(-ell * t(x)))
    pf = quad.failure_probability()
    ep_weighted = quad.integrate(lambda x: np.exp(ell * t(x)), hf_fail=True)
    second = quad.integrate(lambda x: np.exp(-2.0 * ell * t(x)))

    # q(x) = exp(-l tanh h^LF(x)) p(x) / Z
    q_integral = quad.integrate(lambda x: np.exp(-ell * t(x)) / z)
    mean_q_y = quad.integrate(lambda x: np.exp(ell * t(x)) * np.exp(-ell * t(x)) / z, hf_fail=True)
    mean_q_y2 = quad.integrate(lambda x: np.exp(2.0 * ell * t(x)) * np.exp(-ell * t(x)) / z, hf_fail=True)
    var_q_y = mean_q_y2 - mean_q_y ** 2

    kl = np.nan
    if pf > 0:
        tanh_on_fail = quad.integrate(t, hf_fail=True)
        kl = float(np.log(z / pf) + ell * tanh_on_fail / pf)

    return {
        'ell': float(ell),
        'Z': z,
        'pf': pf,
        'p_AL': quad.lf_failure_probability(),
        'ep_weighted': ep_weighted,
        'var_p_normalizer': second - z ** 2,
        'mean_q_y': mean_q_y,
        'var_q_y': var_q_y,
        'q_integral': q_integral,
        'var_direct': z ** 2 * var_q_y,
        'var_p_form': z * ep_weighted - pf ** 2,
        'kl': kl,
    }
