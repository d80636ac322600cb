"""
Diagnostics
Overlap of the LF and HF failure regions, the estimator variance breakdown,
and the normalizer, variance and KL bounds computed from plug-in estimates.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from core.biasing import BiasingModel
from core.problem import ProblemSpec
from utils.errors import ConfigError, NumericalError
from utils.rng import SeedKey, Stream, as_key

logger = logging.getLogger(__name__)

# overlap cases, see classify_overlap
NO_OVERLAP = 'no-overlap'
LF_OVERCOVERS = 'lf-overcovers'
LF_MISSES = 'lf-misses'
FAVOURABLE = 'favourable'


@dataclass
class OverlapReport:
    """Joint MC estimates of P[A_L], P[A_H] and P[A_H ∩ A_L^C]"""
    p_AL: float
    p_AH: float
    p_AH_and_ALc: float
    se_AL: float
    se_AH: float
    se_AH_and_ALc: float
    n_hf_used: int
    n_lf_used: int
    mean_tanh_lf_given_AH: float = float('nan')

    def to_dict(self) -> Dict:
        return asdict(self)


def _bernoulli_se(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n))


def overlap_probs(problem: ProblemSpec, n_joint: int, seed: SeedKey) -> OverlapReport:
    """
    Estimate the overlap probabilities from one joint draw of n_joint points

    Costs n_joint HF and n_joint LF evaluations.
    """
    if n_joint < 1:
        raise ConfigError(f"n_joint must be >= 1, got {n_joint}", field='diagnostics.n_joint')
    logger.info(f"Overlap estimate on '{problem.name}' spends {n_joint} HF evaluations")

    n_al = n_ah = n_ah_alc = 0
    tanh_sum = 0.0
    for chunk in problem.reference.iter_samples(as_key(seed, Stream.OVERLAP), n_joint):
        lf = np.atleast_1d(problem.lf_eval(chunk))
        hf = np.atleast_1d(problem.hf_eval(chunk))
        a_l, a_h = lf < 0, hf < 0
        n_al += int(a_l.sum())
        n_ah += int(a_h.sum())
        n_ah_alc += int((a_h & ~a_l).sum())
        tanh_sum += float(np.tanh(lf[a_h]).sum())

    p_al, p_ah, p_hlc = n_al / n_joint, n_ah / n_joint, n_ah_alc / n_joint
    return OverlapReport(
        p_AL=p_al,
        p_AH=p_ah,
        p_AH_and_ALc=p_hlc,
        se_AL=_bernoulli_se(p_al, n_joint),
        se_AH=_bernoulli_se(p_ah, n_joint),
        se_AH_and_ALc=_bernoulli_se(p_hlc, n_joint),
        n_hf_used=n_joint,
        n_lf_used=n_joint,
        mean_tanh_lf_given_AH=tanh_sum / n_ah if n_ah else float('nan'),
    )


def product_variance(mean_x: float, var_x: float, mean_y: float, var_y: float) -> Tuple[float, float, float]:
    """Var(XY) of independent X, Y as its three terms (VxVy, Vx E[Y]^2, E[X]^2 Vy)"""
    return var_x * var_y, var_x * mean_y ** 2, mean_x ** 2 * var_y


def variance_decomposition(normalizer_terms: np.ndarray, estimator_terms: np.ndarray,
                           n: Optional[int] = None, m: Optional[int] = None) -> Dict[str, float]:
    """
    Plug-in variance of the two-factor estimator Z_M * Y_N

    normalizer_terms are the M draws exp(-l tanh h^LF) under p and
    estimator_terms the draws y = 1_{h^HF<0} exp(l tanh h^LF) under q. The
    three product terms are compared with the large-M approximation
    Z^2 Var_q[y]/N and with its p-form (Z E_p[1 e^{l tanh h}] - P_f^2)/N.
    """
    w = np.asarray(normalizer_terms, dtype=float)
    y = np.asarray(estimator_terms, dtype=float)
    m = len(w) if m is None else m
    n = len(y) if n is None else n
    if len(w) < 2 or len(y) < 2:
        raise ConfigError("variance decomposition needs at least two terms per factor")

    z, var_w = float(np.mean(w)), float(np.var(w, ddof=1))
    e_y, var_y = float(np.mean(y)), float(np.var(y, ddof=1))
    t_cross, t_normalizer, t_estimator = product_variance(z, var_w / m, e_y, var_y / n)

    pf = z * e_y
    ep_weighted = z * float(np.mean(y * y))
    total = t_cross + t_normalizer + t_estimator
    large_m = z ** 2 * var_y / n
    return {
        'term_cross': t_cross,
        'term_normalizer': t_normalizer,
        'term_estimator': t_estimator,
        'total': total,
        'large_m_approx': large_m,
        'p_form': (z * ep_weighted - pf ** 2) / n,
        'relative_gap': (total - large_m) / total if total > 0 else 0.0,
        'std_error': float(np.sqrt(total)),
    }


def normalizer_bound(b: BiasingModel, overlap: OverlapReport, slack_se: float = 3.0) -> Tuple[float, float, bool]:
    """Z_M(l) against 1 + (e^l - 1)(P[A_L] + slack * SE); returns (zhat, bound, satisfied)"""
    zhat = b.require_normalizer()
    p_al = min(1.0, overlap.p_AL + slack_se * overlap.se_AL)
    bound = 1.0 + np.expm1(b.ell) * p_al
    satisfied = zhat < bound if b.ell > 0 else zhat <= bound
    if not satisfied:
        logger.warning(f"Normalizer bound violated: Z_M={zhat:.6g} >= {bound:.6g}")
    return zhat, float(bound), bool(satisfied)


def kl_bound(b: BiasingModel, overlap: OverlapReport, slack_se: float = 0.0,
             measure_consistent: bool = False) -> float:
    """
    Upper bound on KL(q*||q) from the overlap probabilities

    log((1 + (e^l - 1) P[A_L]) / P_f) + l P[A_H ∩ A_L^C]. With
    measure_consistent=True the last term is divided by P_f, which bounds
    l E_{q*}[tanh h^LF] for any overlap. slack_se widens every plug-in by that
    many standard errors in the direction that loosens the bound.
    """
    p_ah = overlap.p_AH - slack_se * overlap.se_AH
    if overlap.p_AH <= 0:
        raise NumericalError("KL bound undefined: no HF failures in the overlap sample")
    if p_ah <= 0:
        logger.warning("KL bound is unbounded once the P_f slack is applied")
        return float('inf')
    p_al = min(1.0, overlap.p_AL + slack_se * overlap.se_AL)
    p_hlc = min(1.0, overlap.p_AH_and_ALc + slack_se * overlap.se_AH_and_ALc)
    miss = p_hlc / p_ah if measure_consistent else p_hlc
    return float(np.log((1.0 + np.expm1(b.ell) * p_al) / p_ah) + b.ell * miss)


def kl_plugin(b: BiasingModel, overlap: OverlapReport) -> float:
    """KL(q*||q) = log(Z/P_f) + l E_{q*}[tanh h^LF], from the overlap draw and Z_M"""
    zhat = b.require_normalizer()
    if overlap.p_AH <= 0:
        raise NumericalError("KL plug-in undefined: no HF failures in the overlap sample")
    return float(np.log(zhat / overlap.p_AH) + b.ell * overlap.mean_tanh_lf_given_AH)


def variance_bound(b: BiasingModel, overlap: OverlapReport, n: int) -> float:
    """(1 + (e^l - 1)P[A_L])(P_f + (e^l - 1)P[A_H ∩ A_L^C])/N - P_f^2/N"""
    if n < 1:
        raise ConfigError(f"N must be >= 1, got {n}")
    g = np.expm1(b.ell)
    pf = overlap.p_AH
    return float(((1.0 + g * overlap.p_AL) * (pf + g * overlap.p_AH_and_ALc) - pf ** 2) / n)


def classify_overlap(overlap: OverlapReport, large_al: float = 0.5, large_miss: float = 0.5) -> str:
    """
    Alignment of the LF and HF failure regions

    no-overlap: the LF region misses every HF failure; lf-overcovers: LF
    covers HF but P[A_L] is large; lf-misses: P[A_L] is small but a large share
    of HF failures lies outside it; favourable otherwise.
    """
    if overlap.p_AH <= 0:
        return FAVOURABLE if overlap.p_AL <= 0 else LF_OVERCOVERS
    miss_share = overlap.p_AH_and_ALc / overlap.p_AH
    if miss_share >= 1.0:
        return NO_OVERLAP
    if miss_share >= large_miss:
        return LF_MISSES
    if overlap.p_AL >= large_al:
        return LF_OVERCOVERS
    return FAVOURABLE
