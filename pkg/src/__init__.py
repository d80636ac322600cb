"""
L-BF-IS - Langevin Bi-Fidelity Importance Sampling
Failure-probability estimation with a low-fidelity-informed biasing density
sampled by MALA and a small number of high-fidelity evaluations
"""

__version__ = "1.0.0"
__author__ = "L-BF-IS Team"
