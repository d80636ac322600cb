"""
Metropolis-Adjusted Langevin Sampler
Samples q(z) ∝ exp(-U(z)) with Euler-Maruyama proposals
    z' = z - tau * grad U(z) + sqrt(2 tau) * eps
and a Metropolis-Hastings correction. Chains advance in lockstep as one
batch; every chain owns keyed proposal and acceptance streams.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from core.biasing import BiasingModel, normalizer_terms
from utils.errors import BudgetError, ConfigError, NumericalError
from utils.parallel import ordered_map
from utils.rng import SeedKey, Stream, as_key, make_rng

logger = logging.getLogger(__name__)

Z0_CENTER = 'center'
Z0_PRIOR = 'prior'
Z0_RESAMPLE = 'resample'
Z0_MODES = (Z0_CENTER, Z0_PRIOR, Z0_RESAMPLE)

LOW_ACCEPTANCE = 0.05
OUTSIDE_WARN_FRACTION = 0.01


@dataclass
class MalaConfig:
    """
    Step size, burn-in, kept iterations, chain count, seed and initial state

    z0 is 'center', 'prior' (one draw from p per chain), 'resample' (starts
    resampled from resample_pool draws of p with weights exp(-l tanh h^LF))
    or an explicit point shared by every chain.
    """
    tau: float
    burn_in: int = 0
    iters: int = 1000
    chains: int = 1
    seed: SeedKey = 0
    z0: Union[str, Sequence[float]] = Z0_CENTER
    keep_trace: bool = False
    chain_batch: int = 128
    block_size: int = 256
    resample_pool: int = 10000

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"step size tau must be > 0, got {self.tau}", field='mala.tau')
        if self.burn_in < 0:
            raise ConfigError(f"burn_in must be >= 0, got {self.burn_in}", field='mala.burn_in')
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}", field='mala.iters')
        if self.chains < 1:
            raise ConfigError(f"chains must be >= 1, got {self.chains}", field='mala.chains')
        if self.chain_batch < 1 or self.block_size < 1:
            raise ConfigError("chain_batch and block_size must be >= 1", field='mala')
        if isinstance(self.z0, str) and self.z0 not in Z0_MODES:
            raise ConfigError(f"z0 must be one of {', '.join(Z0_MODES)} or a point, got '{self.z0}'",
                              field='mala.z0')
        if self.resample_pool < 1:
            raise ConfigError(f"resample_pool must be >= 1, got {self.resample_pool}",
                              field='mala.resample_pool')

    @property
    def init_lf_evals(self) -> int:
        """LF evaluations spent choosing the initial states"""
        return self.resample_pool if self.z0 == Z0_RESAMPLE else 0

    @property
    def steps(self) -> int:
        return self.burn_in + self.iters

    def with_seed(self, seed: SeedKey) -> 'MalaConfig':
        return replace(self, seed=seed)


@dataclass
class ChainOutput:
    """Kept states of all chains, ordered by (chain, step)"""
    samples: np.ndarray
    lf_values: np.ndarray
    acceptance_rate: np.ndarray
    rejected_count: int
    nan_count: int
    outside_fraction: float
    potential_trace: Optional[np.ndarray] = None
    config: Optional[MalaConfig] = field(default=None, repr=False)

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def mean_acceptance(self) -> float:
        return float(np.mean(self.acceptance_rate))

    def summary(self):
        return {
            'n_samples': self.n_samples,
            'chains': len(self.acceptance_rate),
            'mean_acceptance': self.mean_acceptance,
            'min_acceptance': float(np.min(self.acceptance_rate)),
            'max_acceptance': float(np.max(self.acceptance_rate)),
            'rejected_count': self.rejected_count,
            'nan_count': self.nan_count,
            'outside_fraction': self.outside_fraction,
        }


def _langevin_step(z: np.ndarray, grad: np.ndarray, tau: float, eps: np.ndarray) -> np.ndarray:
    return z - tau * grad + np.sqrt(2.0 * tau) * eps


def log_transition(z_to: np.ndarray, z_from: np.ndarray, grad_from: np.ndarray, tau: float) -> np.ndarray:
    """Log density (up to a constant) of proposing z_to from z_from"""
    diff = np.atleast_2d(z_to - z_from + tau * grad_from)
    return -np.sum(diff * diff, axis=1) / (4.0 * tau)


def _log_accept_ratio(u_cur, g_cur, z_cur, u_prop, g_prop, z_prop, tau):
    with np.errstate(invalid='ignore', over='ignore'):
        return (u_cur - u_prop
                + log_transition(z_cur, z_prop, g_prop, tau)
                - log_transition(z_prop, z_cur, g_cur, tau))


def propose(b: BiasingModel, z, tau: float, rng: np.random.Generator) -> np.ndarray:
    """One Euler-Maruyama step of the Langevin dynamics from z"""
    z = np.asarray(z, dtype=float)
    grad = b.potential_grad(z)
    return _langevin_step(z, grad, tau, rng.standard_normal(z.shape))


def accept_prob(b: BiasingModel, z_cur, z_prop, tau: float) -> float:
    """
    Metropolis-Hastings acceptance probability of moving z_cur -> z_prop

    Returns 0 when the log-ratio is NaN.
    """
    if not tau > 0:
        raise ConfigError(f"step size tau must be > 0, got {tau}")
    Z = np.vstack([np.atleast_2d(np.asarray(z_cur, dtype=float)),
                   np.atleast_2d(np.asarray(z_prop, dtype=float))])
    U, G, _ = b.potential_and_grad(Z)
    log_alpha = _log_accept_ratio(U[0], G[0], Z[0], U[1], G[1], Z[1], tau)[0]
    if np.isnan(log_alpha):
        return 0.0
    return float(np.exp(min(0.0, log_alpha)))


def resampled_states(b: BiasingModel, cfg: MalaConfig, chain_ids: Sequence[int]) -> np.ndarray:
    """
    Chain starts drawn from a pool of p-samples with weights exp(-l tanh h^LF)

    The pool is keyed by the run seed and each chain picks its start with its
    own uniform, so a chain's start does not depend on the other chains. The
    pool is streamed twice (LF values, then the picked rows) and never held
    in memory; it costs resample_pool LF evaluations.
    """
    reference, size = b.problem.reference, cfg.resample_pool
    key = as_key(cfg.seed, Stream.MALA_INIT)
    h = np.concatenate([np.atleast_1d(b.problem.lf_eval(chunk)) for chunk in reference.iter_samples(key, size)])
    cdf = np.cumsum(normalizer_terms(h, b.ell))
    # pool rows use key (seed, MALA_INIT, SAMPLE); picks use (seed, MALA_INIT, c, 1)
    picks = np.array([np.searchsorted(cdf, make_rng(cfg.seed, Stream.MALA_INIT, c, 1).random() * cdf[-1],
                                      side='right') for c in chain_ids], dtype=int)
    picks = np.minimum(picks, size - 1)

    starts = np.empty((len(picks), reference.dim))
    offset = 0
    for chunk in reference.iter_samples(key, size):
        hit = (picks >= offset) & (picks < offset + len(chunk))
        starts[hit] = chunk[picks[hit] - offset]
        offset += len(chunk)
    logger.info(f"Resampled {len(picks)} chain starts from {size} draws of p "
                f"({len(np.unique(picks))} distinct)")
    return starts


def initial_states(b: BiasingModel, cfg: MalaConfig, chain_ids: Sequence[int]) -> np.ndarray:
    problem = b.problem
    if isinstance(cfg.z0, str):
        if cfg.z0 == Z0_CENTER:
            return np.tile(problem.center(), (len(chain_ids), 1))
        if cfg.z0 == Z0_RESAMPLE:
            return resampled_states(b, cfg, chain_ids)
        return np.vstack([problem.reference.sample(as_key(cfg.seed, Stream.MALA_INIT, c), 1)
                          for c in chain_ids])
    z0 = np.asarray(cfg.z0, dtype=float)
    if z0.shape != (problem.dim,):
        raise ConfigError(f"z0 must have length {problem.dim}, got shape {z0.shape}", field='mala.z0')
    return np.tile(z0, (len(chain_ids), 1))


class _ChainStreams:
    """Per-chain proposal normals and acceptance uniforms, drawn in blocks"""

    def __init__(self, seed: SeedKey, chain_ids: Sequence[int], dim: int, block: int):
        self.dim = dim
        self.block = block
        self.proposal = [make_rng(seed, Stream.MALA_PROPOSAL, c) for c in chain_ids]
        self.accept = [make_rng(seed, Stream.MALA_ACCEPT, c) for c in chain_ids]
        self._pos = block

    def _refill(self):
        self._eps = np.stack([r.standard_normal((self.block, self.dim)) for r in self.proposal], axis=1)
        self._u = np.stack([r.random(self.block) for r in self.accept], axis=1)
        self._pos = 0

    def next(self):
        if self._pos == self.block:
            self._refill()
        eps, u = self._eps[self._pos], self._u[self._pos]
        self._pos += 1
        return eps, u


def _run_batch(b: BiasingModel, cfg: MalaConfig, chain_ids: List[int], starts: np.ndarray):
    k, dim = len(chain_ids), b.problem.dim
    Z = np.array(starts, dtype=float)
    U, G, H = b.potential_and_grad(Z)
    if not np.all(np.isfinite(U)):
        bad = int(np.flatnonzero(~np.isfinite(U))[0])
        raise NumericalError(f"initial state of chain {chain_ids[bad]} has non-finite potential", z=Z[bad])

    streams = _ChainStreams(cfg.seed, chain_ids, dim, cfg.block_size)
    kept = np.empty((k, cfg.iters, dim))
    kept_lf = np.empty((k, cfg.iters))
    trace = np.empty((k, cfg.steps)) if cfg.keep_trace else None
    accepted = np.zeros(k, dtype=int)
    nan_rejects = np.zeros(k, dtype=int)

    for step in range(cfg.steps):
        eps, u = streams.next()
        Zp = _langevin_step(Z, G, cfg.tau, eps)
        Up = np.full(k, np.inf)
        Gp = np.zeros_like(Zp)
        Hp = np.full(k, np.nan)
        finite = np.all(np.isfinite(Zp), axis=1)
        if finite.any():
            Up[finite], Gp[finite], Hp[finite] = b.potential_and_grad(Zp[finite])

        log_alpha = _log_accept_ratio(U, G, Z, Up, Gp, Zp, cfg.tau)
        is_nan = np.isnan(log_alpha) | ~finite
        nan_rejects += is_nan
        with np.errstate(divide='ignore'):
            accept = ~is_nan & (np.log(u) < log_alpha)

        Z[accept], U[accept], G[accept], H[accept] = Zp[accept], Up[accept], Gp[accept], Hp[accept]
        accepted += accept
        if trace is not None:
            trace[:, step] = U
        if step >= cfg.burn_in:
            kept[:, step - cfg.burn_in] = Z
            kept_lf[:, step - cfg.burn_in] = H

    dead = nan_rejects == cfg.steps
    if dead.any():
        c = chain_ids[int(np.flatnonzero(dead)[0])]
        raise NumericalError(f"chain {c} produced only NaN proposals over {cfg.steps} steps",
                             z=Z[int(np.flatnonzero(dead)[0])])
    return kept, kept_lf, accepted, nan_rejects, trace


def run(b: BiasingModel, cfg: MalaConfig, workers: int = 1) -> ChainOutput:
    """
    Run cfg.chains chains for burn_in + iters steps and keep the last iters

    Rejected steps repeat the current state. U, grad U and h^LF of the
    current state are cached, so each step costs one LF evaluation per chain.
    Chains are grouped in fixed batches of cfg.chain_batch; the grouping does
    not depend on the worker count, so results are identical for any pool.
    """
    chain_ids = list(range(cfg.chains))
    batches = [chain_ids[i:i + cfg.chain_batch] for i in range(0, cfg.chains, cfg.chain_batch)]
    logger.info(f"MALA on '{b.problem.name}': l={b.ell:.4g}, tau={cfg.tau:g}, "
                f"B={cfg.burn_in}, T={cfg.iters}, chains={cfg.chains}")

    starts = initial_states(b, cfg, chain_ids)
    parts = ordered_map(lambda ids: _run_batch(b, cfg, ids, starts[ids[0]:ids[-1] + 1]), batches, workers)
    kept = np.concatenate([p[0] for p in parts])
    kept_lf = np.concatenate([p[1] for p in parts])
    accepted = np.concatenate([p[2] for p in parts])
    nan_rejects = np.concatenate([p[3] for p in parts])
    trace = np.concatenate([p[4] for p in parts]) if cfg.keep_trace else None

    samples = kept.reshape(-1, b.problem.dim)
    acceptance = accepted / cfg.steps
    outside = float(np.mean(~b.problem.in_domain(samples)))
    out = ChainOutput(
        samples=samples,
        lf_values=kept_lf.reshape(-1),
        acceptance_rate=acceptance,
        rejected_count=int(cfg.chains * cfg.steps - accepted.sum()),
        nan_count=int(nan_rejects.sum()),
        outside_fraction=outside,
        potential_trace=trace,
        config=cfg,
    )

    logger.info(f"MALA finished: {out.n_samples} samples, mean acceptance {out.mean_acceptance:.3f}")
    if out.mean_acceptance < LOW_ACCEPTANCE:
        logger.warning(f"Low MALA acceptance ({out.mean_acceptance:.3f}); consider a smaller tau")
    if outside > OUTSIDE_WARN_FRACTION:
        logger.warning(f"{outside:.2%} of kept samples lie outside the domain")
    if out.nan_count:
        logger.warning(f"{out.nan_count} proposals rejected for NaN acceptance ratios")
    return out


def subselect_indices(total: int, n: int, rng: Union[np.random.Generator, SeedKey]) -> np.ndarray:
    """n distinct indices drawn uniformly from range(total)"""
    if n < 0:
        raise ConfigError(f"subset size must be >= 0, got {n}")
    if n > total:
        raise BudgetError(f"cannot select {n} samples from {total} available")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng, Stream.SUBSELECT)
    return rng.choice(total, size=n, replace=False)


def subselect(out: Union[ChainOutput, np.ndarray], n: int,
              rng: Union[np.random.Generator, SeedKey]) -> np.ndarray:
    """Uniform without-replacement subset of n kept samples"""
    samples = out.samples if isinstance(out, ChainOutput) else np.asarray(out)
    return samples[subselect_indices(len(samples), n, rng)]
