"""
Toy Bimodal Problem
h(z) = -(sin(pi z) + 0.95)(sin(pi z) - 0.95) on p = U[-1, 1]; LF and HF coincide
"""

import logging

import numpy as np

from core.density import CoordinateFactor, ReferenceDensity
from core.problem import ProblemSpec

logger = logging.getLogger(__name__)

LEVEL = 0.95


def toy_h(Z: np.ndarray) -> np.ndarray:
    """0.9025 - sin^2(pi z), negative where |sin(pi z)| > 0.95"""
    s = np.sin(np.pi * Z[:, 0])
    return -(s + LEVEL) * (s - LEVEL)


def toy_h_grad(Z: np.ndarray) -> np.ndarray:
    return (-np.pi * np.sin(2.0 * np.pi * Z[:, 0]))[:, None]


def toy_failure_probability() -> float:
    """Closed form P[|sin(pi z)| > 0.95] under U[-1, 1]"""
    return float(1.0 - (2.0 / np.pi) * np.arcsin(LEVEL))


def make_toy_bimodal(penalty_coeff: float = 100.0) -> ProblemSpec:
    """Build the 1D bimodal benchmark (D=1, domain [-1, 1])"""
    reference = ReferenceDensity([CoordinateFactor.uniform(-1.0, 1.0)])
    return ProblemSpec(
        name='toy',
        reference=reference,
        lf=toy_h,
        lf_grad=toy_h_grad,
        hf=toy_h,
        lower=np.array([-1.0]),
        upper=np.array([1.0]),
        penalty_coeff=penalty_coeff,
        metadata={'level': LEVEL, 'pf_closed_form': toy_failure_probability()},
    )
