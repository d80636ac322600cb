"""
Borehole Problem
8D water-flow model with a cheaper LF variant; inputs follow the borehole
input table (two Gaussian and six uniform coordinates).

Both fidelities share the form
    f(z) = c z3 (z4 - z5) / (L (a + 2 z7 z3 / (L z1^2 z8) + z3 / z5)),
    L = z2 - log z1,
with (c, a) = (2 pi, 1) for HF and (5, 1.5) for LF. Multiplying through by L
gives the denominator used below:
    den = a L + 2 z7 z3 / (z1^2 z8) + L z3 / z5.
"""

import logging
from typing import Tuple

import numpy as np

from core.density import CoordinateFactor, ReferenceDensity
from core.problem import ProblemSpec
from utils.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

# (lower, upper) domain box per coordinate
BOX = np.array([
    [0.05, 0.15],        # radius of borehole (m)
    [4.605, 10.820],     # log radius of influence
    [63070.0, 115600.0], # transmissivity of upper aquifer (m^2/yr)
    [990.0, 1110.0],     # potentiometric head of upper aquifer (m)
    [63.1, 116.0],       # transmissivity of lower aquifer (m^2/yr)
    [700.0, 820.0],      # potentiometric head of lower aquifer (m)
    [1120.0, 1680.0],    # length of borehole (m)
    [9855.0, 12045.0],   # hydraulic conductivity of borehole (m/yr)
])

HF_COEFFS = (2.0 * np.pi, 1.0)
LF_COEFFS = (5.0, 1.5)


def borehole_density() -> ReferenceDensity:
    factors = [
        CoordinateFactor.gaussian(0.10, 0.016),
        CoordinateFactor.gaussian(7.71, 1.0056),
    ]
    factors += [CoordinateFactor.uniform(lo, hi) for lo, hi in BOX[2:]]
    return ReferenceDensity(factors)


def _parts(Z: np.ndarray, a: float):
    z1, z2, z3, z4, z5, z6, z7, z8 = Z.T
    if np.any(z1 <= 0):
        raise NumericalError("borehole radius must be positive", z=Z[np.argmax(z1 <= 0)])
    L = z2 - np.log(z1)
    den = a * L + 2.0 * z7 * z3 / (z1 ** 2 * z8) + L * z3 / z5
    return z1, z2, z3, z4, z5, z7, z8, L, den


def borehole_flow(Z: np.ndarray, coeffs: Tuple[float, float]) -> np.ndarray:
    c, a = coeffs
    z1, z2, z3, z4, z5, z7, z8, L, den = _parts(Z, a)
    return c * z3 * (z4 - z5) / den


def borehole_flow_grad(Z: np.ndarray, coeffs: Tuple[float, float]) -> np.ndarray:
    """Analytic gradient of the flow by the quotient rule"""
    c, a = coeffs
    z1, z2, z3, z4, z5, z7, z8, L, den = _parts(Z, a)
    num = c * z3 * (z4 - z5)

    d_num = np.zeros_like(Z)
    d_num[:, 2] = c * (z4 - z5)
    d_num[:, 3] = c * z3
    d_num[:, 4] = -c * z3

    d_den = np.zeros_like(Z)
    d_den[:, 0] = -a / z1 - 4.0 * z7 * z3 / (z1 ** 3 * z8) - z3 / (z5 * z1)
    d_den[:, 1] = a + z3 / z5
    d_den[:, 2] = 2.0 * z7 / (z1 ** 2 * z8) + L / z5
    d_den[:, 4] = -L * z3 / z5 ** 2
    d_den[:, 6] = 2.0 * z3 / (z1 ** 2 * z8)
    d_den[:, 7] = -2.0 * z7 * z3 / (z1 ** 2 * z8 ** 2)

    return (d_num * den[:, None] - num[:, None] * d_den) / (den ** 2)[:, None]


def make_borehole(hf_threshold: float = 800.0, lf_threshold: float = 1000.0,
                  penalty_coeff: float = 100.0, name: str = 'borehole') -> ProblemSpec:
    """h^HF = hf_threshold - f^HF and h^LF = lf_threshold - f^LF inside the box"""
    if hf_threshold <= 0 or lf_threshold <= 0:
        raise ConfigError("borehole thresholds must be positive")

    return ProblemSpec(
        name=name,
        reference=borehole_density(),
        lf=lambda Z: lf_threshold - borehole_flow(Z, LF_COEFFS),
        lf_grad=lambda Z: -borehole_flow_grad(Z, LF_COEFFS),
        hf=lambda Z: hf_threshold - borehole_flow(Z, HF_COEFFS),
        lower=BOX[:, 0],
        upper=BOX[:, 1],
        penalty_coeff=penalty_coeff,
        metadata={'hf_threshold': hf_threshold, 'lf_threshold': lf_threshold},
    )


def make_borehole_low(hf_threshold: float = 900.0, lf_threshold: float = 1100.0,
                      penalty_coeff: float = 100.0) -> ProblemSpec:
    """Smaller failure probability and a less accurate LF model"""
    return make_borehole(hf_threshold, lf_threshold, penalty_coeff=penalty_coeff, name='borehole-low')
