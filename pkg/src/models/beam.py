"""
Composite Cantilever Beam
Euler-Bernoulli tip deflection under a distributed load z1, with Young's
moduli z2, z3 (flanges) and z4 (web) on a three-rectangle cross-section.

The section is transformed to the web modulus E = z4: the top flange
(height h1) gets width w1 = (z2/z4) w and the bottom flange (height h2) gets
w2 = (z3/z4) w, the web is w x h3 and the holes are ignored. The moment of
inertia follows from the parallel-axis theorem about the section centroid,
    I = sum_i (b_i t_i^3 / 12 + A_i (y_i - ybar)^2),
and the tip deflection is u(H) = -z1 H^4 / (8 E I).

The HF model is a stand-in: the same closed form with the HF threshold. It
does not reproduce a finite-element beam.
"""

import logging
from typing import Dict

import numpy as np

from core.density import CoordinateFactor, ReferenceDensity
from core.problem import ProblemSpec
from utils.errors import NumericalError

logger = logging.getLogger(__name__)

GEOMETRY = {'H': 50.0, 'h1': 0.1, 'h2': 0.1, 'h3': 5.0, 'w': 1.0}

RANGES = np.array([
    [9.0, 11.0],     # load intensity
    [0.9e6, 1.1e6],  # top flange modulus
    [0.9e6, 1.1e6],  # bottom flange modulus
    [0.9e4, 1.1e4],  # web modulus
])


def section_inertia(w1: np.ndarray, w2: np.ndarray, geometry: Dict = GEOMETRY):
    """
    Moment of inertia of the transformed section and its width sensitivities

    Returns (I, dI/dw1, dI/dw2); dI/dw_j = t_j^3/12 + t_j (y_j - ybar)^2.
    """
    h1, h2, h3, w = geometry['h1'], geometry['h2'], geometry['h3'], geometry['w']
    y_bot = 0.5 * h2
    y_web = h2 + 0.5 * h3
    y_top = h2 + h3 + 0.5 * h1
    a_top, a_bot, a_web = w1 * h1, w2 * h2, w * h3
    area = a_top + a_bot + a_web
    ybar = (a_top * y_top + a_bot * y_bot + a_web * y_web) / area
    inertia = (w1 * h1 ** 3 / 12.0 + a_top * (y_top - ybar) ** 2
               + w2 * h2 ** 3 / 12.0 + a_bot * (y_bot - ybar) ** 2
               + w * h3 ** 3 / 12.0 + a_web * (y_web - ybar) ** 2)
    d_w1 = h1 ** 3 / 12.0 + h1 * (y_top - ybar) ** 2
    d_w2 = h2 ** 3 / 12.0 + h2 * (y_bot - ybar) ** 2
    return inertia, d_w1, d_w2


def tip_deflection(Z: np.ndarray, geometry: Dict = GEOMETRY, with_grad: bool = False):
    """u(H) = -z1 H^4 / (8 E I) with E = z4, optionally with its gradient"""
    z1, z2, z3, z4 = Z.T
    w = geometry['w']
    w1, w2 = z2 / z4 * w, z3 / z4 * w
    inertia, d_w1, d_w2 = section_inertia(w1, w2, geometry)
    if np.any(inertia <= 0):
        raise NumericalError("non-positive moment of inertia", z=Z[np.argmax(inertia <= 0)])

    ei = z4 * inertia
    u = -z1 * geometry['H'] ** 4 / (8.0 * ei)
    if not with_grad:
        return u

    d_ei = np.empty_like(Z)
    d_ei[:, 0] = 0.0
    d_ei[:, 1] = w * d_w1
    d_ei[:, 2] = w * d_w2
    d_ei[:, 3] = inertia - (d_w1 * w1 + d_w2 * w2)
    grad = -(u / ei)[:, None] * d_ei
    grad[:, 0] = u / z1
    return u, grad


def make_beam(hf_threshold: float = 4.04, lf_threshold: float = 3.18,
              penalty_coeff: float = 100.0) -> ProblemSpec:
    """h = threshold + u(H); negative when the tip deflects below -threshold"""

    def lf_value_grad(Z):
        u, g = tip_deflection(Z, with_grad=True)
        return lf_threshold + u, g

    return ProblemSpec(
        name='beam',
        reference=ReferenceDensity([CoordinateFactor.uniform(lo, hi) for lo, hi in RANGES]),
        lf=lambda Z: lf_threshold + tip_deflection(Z),
        lf_grad=lambda Z: tip_deflection(Z, with_grad=True)[1],
        hf=lambda Z: hf_threshold + tip_deflection(Z),
        lower=RANGES[:, 0],
        upper=RANGES[:, 1],
        penalty_coeff=penalty_coeff,
        lf_value_grad=lf_value_grad,
        metadata={
            'hf_threshold': hf_threshold,
            'lf_threshold': lf_threshold,
            'hf_model': 'threshold-shifted closed form (stand-in for a finite-element model)',
            'geometry': dict(GEOMETRY),
        },
    )
