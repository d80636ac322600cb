"""
Lengthscale Selection
Grid search of the estimator-variance proxies over l:
    approach one: Z_M(l)/(N L) sum_j 1{h^HF(z_j)<0} exp(l tanh h^LF(z_j))
    approach two: the same with the LF indicator, no HF evaluations.
N is a constant that does not move the argmin and is fixed to 1.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from core.biasing import draw_lf_bank, normalizer_key, normalizer_terms
from core.problem import ProblemSpec
from utils.errors import ConfigError, TuningError
from utils.parallel import ordered_map
from utils.rng import SeedKey, Stream, as_key

logger = logging.getLogger(__name__)

METHOD_ONE = 'one'
METHOD_TWO = 'two'

ZhatFn = Callable[[float], float]


def default_grid(grid_min: float = 0.1, grid_max: float = 10.0, points: int = 40) -> np.ndarray:
    """Log-spaced lengthscale grid"""
    if not 0 < grid_min <= grid_max or points < 1:
        raise ConfigError(f"invalid lengthscale grid [{grid_min}, {grid_max}] x {points}", field='tuning')
    if points == 1:
        return np.array([float(grid_min)])
    return np.logspace(np.log10(grid_min), np.log10(grid_max), points)


def _check_grid(grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ConfigError("lengthscale grid must be a nonempty list", field='tuning.grid')
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ConfigError("lengthscale grid must be positive and strictly increasing", field='tuning.grid')
    return grid


def _proxy_terms(ell: float, fail: np.ndarray, lf_values: np.ndarray) -> np.ndarray:
    return np.where(fail, np.exp(ell * np.tanh(lf_values)), 0.0)


def variance_proxy_hf(ell: float, pilot_hf: np.ndarray, pilot_lf: np.ndarray,
                      zhat_fn: ZhatFn, n: int = 1) -> float:
    """Approach one from L pilot points with known HF and LF values"""
    pilot_hf = np.asarray(pilot_hf, dtype=float)
    if len(pilot_hf) < 1:
        raise ConfigError("approach one needs at least one pilot point", field='tuning.pilot_L')
    terms = _proxy_terms(ell, pilot_hf < 0, np.asarray(pilot_lf, dtype=float))
    return float(zhat_fn(ell) * terms.sum() / (n * len(terms)))


def variance_proxy_lf(ell: float, lf_values: np.ndarray, zhat_fn: ZhatFn, n: int = 1) -> float:
    """Approach two from the M normalizer draws; costs no HF evaluations"""
    lf_values = np.asarray(lf_values, dtype=float)
    if len(lf_values) < 1:
        raise ConfigError("approach two needs at least one LF value", field='estimator.M')
    terms = _proxy_terms(ell, lf_values < 0, lf_values)
    return float(zhat_fn(ell) * terms.sum() / (n * len(terms)))


def bank_zhat_fn(lf_values: np.ndarray) -> ZhatFn:
    """Z_M(l) from a fixed LF bank, the same draws for every l"""
    return lambda ell: float(np.mean(normalizer_terms(lf_values, ell)))


@dataclass
class EllSweep:
    """Proxy values over the lengthscale grid with replicate bands and the chosen l*"""
    grid: np.ndarray
    proxy: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    replicates: np.ndarray
    ell_star: float
    method: str
    high_uncertainty: bool = False
    budgets: Dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'ell': self.grid, 'proxy': self.proxy, 'lo': self.lo, 'hi': self.hi})

    def summary(self) -> Dict:
        i = int(np.searchsorted(self.grid, self.ell_star))
        return {
            'method': self.method,
            'ell_star': self.ell_star,
            'proxy_at_star': float(self.proxy[i]),
            'band_at_star': [float(self.lo[i]), float(self.hi[i])],
            'high_uncertainty': self.high_uncertainty,
            'grid_points': len(self.grid),
            'replicates': int(self.replicates.shape[0]),
            'budgets': self.budgets,
        }


def _replicate_seed(seed: SeedKey, r: int):
    # replicate 0 shares its draws with the estimation pipeline
    return seed if r == 0 else as_key(seed, Stream.TUNING, r)


def _sweep_once(problem: ProblemSpec, method: str, grid: np.ndarray, m: int, pilot_l: int,
                seed: SeedKey, n: int, cache: bool, workers: int):
    bank = draw_lf_bank(problem, m, seed, cache=cache)
    zhat_fn = bank_zhat_fn(bank)
    if method == METHOD_TWO:
        values = ordered_map(lambda ell: variance_proxy_lf(ell, bank, zhat_fn, n), grid, workers)
        return np.array(values), None

    # approach-one pilots are the first L draws of the normalizer stream
    pilot_z = problem.reference.sample(normalizer_key(seed), pilot_l)
    pilot_hf = np.atleast_1d(problem.hf_eval(pilot_z))
    pilot_lf = bank[:pilot_l]
    values = ordered_map(lambda ell: variance_proxy_hf(ell, pilot_hf, pilot_lf, zhat_fn, n), grid, workers)
    fails = pilot_hf < 0
    # per-point spread of the proxy for the single-replicate band
    spreads = np.array([zhat_fn(ell) * np.std(_proxy_terms(ell, fails, pilot_lf), ddof=1) / n
                        / np.sqrt(pilot_l) if pilot_l > 1 else 0.0 for ell in grid])
    return np.array(values), spreads


def select_ell(problem: ProblemSpec, method: str, grid: Optional[Sequence[float]] = None,
               m: int = 1_000_000, pilot_l: int = 100, seed: SeedKey = 0, replicates: int = 1,
               n: int = 1, uncertainty_threshold: float = 0.5, workers: int = 1) -> EllSweep:
    """
    Choose l* = argmin of the variance proxy over the grid

    Ties go to the smaller l. Replicated sweeps (independent draws) give the
    proxy band; a single sweep uses +/- 1.96 standard errors of the pilot
    terms (approach one) or no band (approach two).
    """
    if method not in (METHOD_ONE, METHOD_TWO):
        raise ConfigError(f"tuning method must be '{METHOD_ONE}' or '{METHOD_TWO}', got '{method}'",
                          field='ell.method')
    grid = _check_grid(default_grid() if grid is None else grid)
    if replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {replicates}", field='tuning.replicates')
    if method == METHOD_ONE and not 1 <= pilot_l <= m:
        raise ConfigError(f"pilot size L must be in [1, M={m}], got {pilot_l}", field='estimator.L')

    runs = [_sweep_once(problem, method, grid, m, pilot_l, _replicate_seed(seed, r), n, r == 0, workers)
            for r in range(replicates)]
    values = np.vstack([v for v, _ in runs])
    proxy = values.mean(axis=0)

    if method == METHOD_ONE:
        zero_share = float(np.mean(np.all(values == 0, axis=1)))
        if np.all(proxy == 0):
            raise TuningError(
                f"approach one found no HF failures among {pilot_l} pilot points in any replicate; "
                f"(1 - P_f)^L is large, use approach two")
        if zero_share > 0.5:
            logger.warning(f"Approach-one proxy is identically zero in {zero_share:.0%} of replicates")

    if replicates > 1:
        lo, hi = np.percentile(values, [2.5, 97.5], axis=0)
    elif runs[0][1] is not None:
        lo, hi = proxy - 1.96 * runs[0][1], proxy + 1.96 * runs[0][1]
    else:
        lo, hi = proxy.copy(), proxy.copy()

    i_star = int(np.argmin(proxy))
    ell_star = float(grid[i_star])
    width = (hi[i_star] - lo[i_star]) / proxy[i_star] if proxy[i_star] > 0 else np.inf
    high_uncertainty = bool(width > uncertainty_threshold)
    if high_uncertainty:
        logger.warning(f"Proxy uncertainty at l*={ell_star:.4g} is high (relative band {width:.2f})")
    if i_star in (0, len(grid) - 1):
        logger.warning(f"l*={ell_star:.4g} sits on the edge of the grid")

    logger.info(f"Selected l*={ell_star:.4g} by approach {method} over {len(grid)} grid points")
    return EllSweep(
        grid=grid, proxy=proxy, lo=lo, hi=hi, replicates=values, ell_star=ell_star,
        method=method, high_uncertainty=high_uncertainty,
        budgets={'M': int(m), 'L': int(pilot_l) if method == METHOD_ONE else 0, 'N': int(n)},
    )
