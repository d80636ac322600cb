"""
Biasing Model
q(z) = exp(-l * tanh(h^LF(z))) p(z) / Z(l): potential, score, normalizer
estimate and importance weight.
"""

import logging
import threading
from typing import Dict, Optional, Tuple

import numpy as np

from core.problem import ProblemSpec
from utils.errors import ConfigError, NormalizerNotEstimatedError
from utils.rng import SeedKey, Stream, as_key

logger = logging.getLogger(__name__)

_bank_lock = threading.Lock()
_bank_cache: Dict[Tuple, np.ndarray] = {}


def normalizer_key(seed: SeedKey) -> Tuple[int, ...]:
    """Seed key of the p-draws behind the normalizer and the tuning proxies"""
    return as_key(seed, Stream.NORMALIZER)


def _lf_values(problem: ProblemSpec, m: int, seed: SeedKey) -> np.ndarray:
    return np.concatenate([
        np.atleast_1d(problem.lf_eval(chunk))
        for chunk in problem.reference.iter_samples(normalizer_key(seed), m)
    ])


def draw_lf_bank(problem: ProblemSpec, m: int, seed: SeedKey, cache: bool = True) -> np.ndarray:
    """
    LF values at M i.i.d. draws from p, memoized per (problem, M, seed)

    The bank is shared by every lengthscale (common random numbers), so a
    whole sweep plus the final normalizer cost M LF evaluations once. The
    first L rows of the same stream are the approach-one pilot points.
    With cache=False the values are drawn without touching the memo.
    """
    if m < 1:
        raise ConfigError(f"normalizer sample size M must be >= 1, got {m}")
    if not cache:
        return _lf_values(problem, m, seed)
    key = (problem, int(m), normalizer_key(seed))
    with _bank_lock:
        cached = _bank_cache.get(key)
        if cached is not None:
            return cached
        values = _lf_values(problem, m, seed)
        _bank_cache[key] = values
    logger.info(f"Drew LF bank for '{problem.name}': M={m}, P[h_LF<0]={np.mean(values < 0):.4g}")
    return values


def clear_bank_cache():
    with _bank_lock:
        _bank_cache.clear()


def normalizer_terms(lf_values: np.ndarray, ell: float) -> np.ndarray:
    """Per-draw terms exp(-l * tanh(h^LF)) of the normalizer estimate"""
    return np.exp(-ell * np.tanh(lf_values))


class BiasingModel:
    """Biasing density of a problem at a fixed lengthscale"""

    def __init__(self, problem: ProblemSpec, ell: float):
        if ell < 0:
            raise ConfigError(f"lengthscale must be >= 0, got {ell}")
        self.problem = problem
        self.ell = float(ell)
        self.zhat: Optional[float] = None
        self.zhat_se: Optional[float] = None
        self.normalizer_m: Optional[int] = None
        self.normalizer_seed: Optional[Tuple[int, ...]] = None

    def with_ell(self, ell: float) -> 'BiasingModel':
        return BiasingModel(self.problem, ell)

    def potential(self, z) -> float:
        """U(z) = l * tanh(h^LF(z)) - log p(z); +inf outside the support of p"""
        logp = self.problem.reference.log_density(z)
        if not np.isfinite(logp):
            return np.inf
        h = self.problem.lf_eval(z)
        return float(self.ell * np.tanh(h) - logp)

    def potential_grad(self, z) -> np.ndarray:
        """grad U(z) = l * (1 - tanh^2 h^LF) grad h^LF - grad log p"""
        _, h, gh = self._potential_parts(np.atleast_2d(np.asarray(z, dtype=float)))
        return self._grad_from_parts(np.atleast_2d(z), h, gh)[0]

    def _potential_parts(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        logp = self.problem.reference.log_density(Z)
        h, gh = self.problem.lf_value_and_grad_eval(Z)
        return logp, np.atleast_1d(h), np.atleast_2d(gh)

    def _grad_from_parts(self, Z: np.ndarray, h: np.ndarray, gh: np.ndarray) -> np.ndarray:
        sech2 = 1.0 - np.tanh(h) ** 2
        score = self.problem.reference.score(Z, strict=False)
        return self.ell * sech2[:, None] * gh - score

    def potential_and_grad(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Batched U, grad U and h^LF at the rows of Z (one LF evaluation per row)

        Rows outside the support of p get U = +inf, a zero gradient and a NaN
        h^LF, and cost no LF evaluation.
        """
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        logp = self.problem.reference.log_density(Z)
        finite = np.isfinite(logp)
        U = np.full(len(Z), np.inf)
        G = np.zeros_like(Z)
        H = np.full(len(Z), np.nan)
        if finite.any():
            h, gh = self.problem.lf_value_and_grad_eval(Z[finite])
            h, gh = np.atleast_1d(h), np.atleast_2d(gh)
            U[finite] = self.ell * np.tanh(h) - logp[finite]
            G[finite] = self._grad_from_parts(Z[finite], h, gh)
            H[finite] = h
        return U, G, H

    def estimate_normalizer(self, m: int, seed: SeedKey, cache: bool = True) -> float:
        """Z_M(l) = mean of exp(-l * tanh(h^LF(z_m))), z_m ~ p"""
        terms = normalizer_terms(draw_lf_bank(self.problem, m, seed, cache=cache), self.ell)
        self.zhat = float(np.mean(terms))
        self.zhat_se = float(np.std(terms, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
        self.normalizer_m = int(m)
        self.normalizer_seed = normalizer_key(seed)
        logger.info(f"Normalizer for l={self.ell:.4g}: Z_M={self.zhat:.6g} (M={m})")
        return self.zhat

    def require_normalizer(self) -> float:
        if self.zhat is None:
            raise NormalizerNotEstimatedError()
        return self.zhat

    def weights_from_lf(self, lf_values: np.ndarray) -> np.ndarray:
        """Importance weights p/q given already-computed LF values"""
        return self.require_normalizer() * np.exp(self.ell * np.tanh(lf_values))

    def weight(self, z):
        """p(z)/q(z) = Z_M(l) * exp(l * tanh(h^LF(z)))"""
        zhat = self.require_normalizer()
        h = self.problem.lf_eval(z)
        return zhat * np.exp(self.ell * np.tanh(h))

    def provenance(self) -> Dict:
        return {
            'problem': self.problem.name,
            'ell': self.ell,
            'zhat': self.zhat,
            'zhat_se': self.zhat_se,
            'normalizer_M': self.normalizer_m,
            'normalizer_seed': list(self.normalizer_seed) if self.normalizer_seed else None,
        }
