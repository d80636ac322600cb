"""
Failure-Probability Estimators
Monte Carlo, LF-only and L-BF-IS estimators, the rRMSE metric, reference
P_f values and the convergence-study harness.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from core.biasing import BiasingModel
from core.problem import ProblemSpec
from data.results_writer import make_serializable
from estimation.quadrature import quadrature_failure_probability
from sampling import mala
from sampling.mala import ChainOutput, MalaConfig
from utils.errors import BudgetError, ConfigError
from utils.parallel import ordered_map
from utils.rng import SeedKey, Stream, as_key, make_rng

logger = logging.getLogger(__name__)

METHOD_MC = 'mc'
METHOD_LF_ONLY = 'lf-only'
METHOD_LBFIS = 'lbfis'
ALL_METHODS = (METHOD_MC, METHOD_LF_ONLY, METHOD_LBFIS)

MODE_POOLED = 'pooled'
MODE_FRESH = 'fresh'
MODE_AUTO = 'auto'

DEFAULT_N_GRID = (10, 21, 46, 100, 215, 464, 1000, 2154, 4641, 10000)


@dataclass
class EstimateReport:
    """Estimated P_f with its cost, inputs and provenance"""
    value: float
    n_hf: int
    n_lf: int
    method: str = METHOD_LBFIS
    ell: Optional[float] = None
    zhat: Optional[float] = None
    seed: Optional[List[int]] = None
    std_error: Optional[float] = None
    replicates: Optional[List[float]] = None
    pf_ref: Optional[float] = None
    relative_error: Optional[float] = None
    provenance: Dict = field(default_factory=dict)
    terms: Optional[np.ndarray] = field(default=None, repr=False)

    def with_reference(self, pf_ref: float) -> 'EstimateReport':
        self.pf_ref = float(pf_ref)
        self.relative_error = abs(self.value - pf_ref) / pf_ref if pf_ref > 0 else None
        return self

    def to_dict(self) -> Dict:
        return {
            'method': self.method,
            'value': self.value,
            'std_error': self.std_error,
            'n_hf': self.n_hf,
            'n_lf': self.n_lf,
            'ell': self.ell,
            'zhat': self.zhat,
            'seed': self.seed,
            'replicates': self.replicates,
            'pf_ref': self.pf_ref,
            'relative_error': self.relative_error,
            'provenance': self.provenance,
        }


def _require_positive(n: int, what: str):
    if n < 1:
        raise ConfigError(f"{what} must be >= 1, got {n}")


def _indicator_mean(problem: ProblemSpec, n: int, seed: SeedKey, evaluate) -> float:
    fails = sum(int(np.sum(np.atleast_1d(evaluate(chunk)) < 0))
                for chunk in problem.reference.iter_samples(seed, n))
    return fails / n


def mc_estimate(problem: ProblemSpec, n: int, seed: SeedKey) -> EstimateReport:
    """(1/N) sum 1{h^HF(z_i) < 0}, z_i ~ p; exactly N HF evaluations"""
    _require_positive(n, 'N')
    key = as_key(seed, Stream.MONTE_CARLO)
    value = _indicator_mean(problem, n, key, problem.hf_eval)
    return EstimateReport(value=value, n_hf=n, n_lf=0, method=METHOD_MC, seed=list(key),
                          std_error=float(np.sqrt(value * (1.0 - value) / n)))


def lf_only_estimate(problem: ProblemSpec, m: int, seed: SeedKey) -> float:
    """Monte Carlo failure probability of the LF model; no HF cost"""
    _require_positive(m, 'M')
    return _indicator_mean(problem, m, as_key(seed, Stream.LF_ONLY), problem.lf_eval)


def lbfis_estimate(b: BiasingModel, samples: Union[ChainOutput, np.ndarray], n: int,
                   seed: SeedKey, indices: Optional[np.ndarray] = None) -> EstimateReport:
    """
    Z_M(l) (1/N) sum 1{h^HF(z_i) < 0} exp(l tanh h^LF(z_i)) over N samples of q

    The N points are a uniform subset of the samples (or the given indices).
    LF values come from the chain cache when samples is a ChainOutput; HF
    costs exactly N evaluations.
    """
    zhat = b.require_normalizer()
    _require_positive(n, 'N')
    points = samples.samples if isinstance(samples, ChainOutput) else np.asarray(samples, dtype=float)
    key = as_key(seed, Stream.SUBSELECT)
    if indices is None:
        indices = mala.subselect_indices(len(points), n, make_rng(key))
    elif len(indices) != n:
        raise ConfigError(f"expected {n} indices, got {len(indices)}")

    chosen = points[indices]
    hf = np.atleast_1d(b.problem.hf_eval(chosen))
    if isinstance(samples, ChainOutput):
        lf = samples.lf_values[indices]
        n_lf = 0
    else:
        lf = np.atleast_1d(b.problem.lf_eval(chosen))
        n_lf = n

    terms = np.where(hf < 0, np.exp(b.ell * np.tanh(lf)), 0.0)
    value = float(zhat * terms.mean())
    std_error = float(zhat * np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else None
    return EstimateReport(value=value, n_hf=n, n_lf=n_lf, method=METHOD_LBFIS, ell=b.ell, zhat=zhat,
                          seed=list(key), std_error=std_error, provenance=b.provenance(), terms=terms)


def rrmse(estimates: Sequence[float], pf_ref: float) -> float:
    """sqrt(mean((P_hat - P_f)^2)) / P_f"""
    if not pf_ref > 0:
        raise ConfigError(f"reference P_f must be > 0, got {pf_ref}")
    estimates = np.asarray(estimates, dtype=float)
    if estimates.size == 0:
        raise ConfigError("rRMSE needs at least one estimate")
    return float(np.sqrt(np.mean((estimates - pf_ref) ** 2)) / pf_ref)


def reference_path(problem: ProblemSpec, reference_dir: str) -> str:
    return os.path.join(reference_dir, f"{problem.name}.json")


def reference_pf(problem: ProblemSpec, reference_dir: str = './reference') -> float:
    """Quadrature P_f for D = 1, the problem's exact P_f if it has one, otherwise the frozen oracle file"""
    if problem.dim == 1:
        return quadrature_failure_probability(problem)
    if problem.exact_pf is not None:
        return float(problem.exact_pf())
    path = reference_path(problem, reference_dir)
    if not os.path.exists(path):
        raise ConfigError(f"no reference P_f for '{problem.name}' at {path}; "
                          f"run 'python main.py oracle --problem {problem.name}' first")
    with open(path) as f:
        record = json.load(f)
    pf = float(record['pf'])
    if pf == 0:
        logger.warning(f"Frozen reference for '{problem.name}' has no HF failures in {record.get('n')} "
                       f"samples; relative errors against it are undefined")
    return pf


def run_reference_oracle(problem: ProblemSpec, n: int, seed: SeedKey,
                         reference_dir: Optional[str] = './reference') -> Dict:
    """Brute-force HF Monte Carlo reference, written to reference_dir/<name>.json"""
    _require_positive(n, 'oracle sample size')
    key = as_key(seed, Stream.ORACLE)
    logger.info(f"Running the {n}-sample HF oracle for '{problem.name}'")
    pf = _indicator_mean(problem, n, key, problem.hf_eval)
    record = {
        'problem': problem.name,
        'pf': pf,
        'std_error': float(np.sqrt(pf * (1.0 - pf) / n)),
        'n': int(n),
        'seed': list(key),
        'metadata': problem.metadata,
    }
    if problem.exact_pf is not None:
        record['pf_exact'] = float(problem.exact_pf())
    if pf == 0:
        logger.warning(f"Oracle found no HF failures for '{problem.name}' in {n} samples")
    if reference_dir is not None:
        os.makedirs(reference_dir, exist_ok=True)
        with open(reference_path(problem, reference_dir), 'w') as f:
            json.dump(make_serializable(record), f, indent=2)
    return record


@dataclass
class ConvergenceStudy:
    """Replicate estimates per method and N, with mean, rRMSE and 95% bands"""
    n_grid: List[int]
    trials: int
    pf_ref: float
    rows: pd.DataFrame
    summary: pd.DataFrame
    modes: Dict[int, str] = field(default_factory=dict)
    seed: Optional[List[int]] = None

    def __post_init__(self):
        _check_n_grid(self.n_grid)


def _check_n_grid(n_grid: Sequence[int]):
    if len(n_grid) == 0 or any(n < 1 for n in n_grid) or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigError(f"n_grid must be positive and strictly increasing, got {list(n_grid)}",
                          field='estimator.n_grid')


def summarize(rows: pd.DataFrame, pf_ref: float) -> pd.DataFrame:
    """mean, rRMSE and empirical 2.5/97.5 percentiles per (method, n)"""
    groups = rows.groupby(['method', 'n'], sort=True)['estimate']
    summary = pd.DataFrame({
        'mean': groups.mean(),
        'rrmse': groups.apply(lambda s: rrmse(s.to_numpy(), pf_ref)),
        'lo95': groups.quantile(0.025),
        'hi95': groups.quantile(0.975),
    }).reset_index()
    return summary.sort_values(['method', 'n'], kind='mergesort').reset_index(drop=True)


class _LbfisReplicates:
    """Pooled or fresh MALA samples behind the L-BF-IS replicates"""

    def __init__(self, b: BiasingModel, mala_cfg: MalaConfig, trials: int, mode: str,
                 max_fresh_runs: int, fresh_normalizer: bool, normalizer_m: int, seed: SeedKey,
                 workers: int):
        self.b = b
        self.cfg = mala_cfg
        self.trials = trials
        self.mode = mode
        self.max_fresh_runs = max_fresh_runs
        self.fresh_normalizer = fresh_normalizer
        self.normalizer_m = normalizer_m
        self.seed = seed
        self.workers = workers
        self.fresh_runs = 0
        self._pooled: Optional[ChainOutput] = None

    @property
    def per_run(self) -> int:
        return self.cfg.chains * self.cfg.iters

    def mode_for(self, n: int) -> str:
        if self.mode != MODE_AUTO:
            return self.mode
        return MODE_POOLED if self.per_run >= self.trials * n else MODE_FRESH

    def pooled(self) -> ChainOutput:
        if self._pooled is None:
            self._pooled = mala.run(self.b, self.cfg, self.workers)
        return self._pooled

    def _model(self, n_index: int, trial: int) -> BiasingModel:
        if not self.fresh_normalizer:
            return self.b
        model = self.b.with_ell(self.b.ell)
        model.estimate_normalizer(self.normalizer_m, as_key(self.seed, Stream.REPLICATE, n_index, trial),
                                  cache=False)
        return model

    def estimates(self, n_index: int, n: int) -> List[float]:
        mode = self.mode_for(n)
        if mode == MODE_POOLED:
            out = self.pooled()
            if out.n_samples < self.trials * n:
                raise BudgetError(f"pooled chains hold {out.n_samples} samples, "
                                  f"{self.trials} disjoint subsets of N={n} need {self.trials * n}")
            order = make_rng(self.seed, Stream.SUBSELECT, n_index).permutation(out.n_samples)

            def one(trial):
                idx = order[trial * n:(trial + 1) * n]
                return lbfis_estimate(self._model(n_index, trial), out, n,
                                      as_key(self.seed, n_index, trial), indices=idx).value
            return ordered_map(one, range(self.trials), self.workers)

        if self.per_run < n:
            raise BudgetError(f"one MALA run keeps {self.per_run} samples, fewer than N={n}")
        self.fresh_runs += self.trials
        if self.fresh_runs > self.max_fresh_runs:
            raise BudgetError(f"fresh-chain budget exceeded: {self.fresh_runs} runs > {self.max_fresh_runs}",
                              field='estimator.max_fresh_runs')

        def fresh(trial):
            key = as_key(self.cfg.seed, Stream.REPLICATE, n_index, trial)
            out = mala.run(self.b, self.cfg.with_seed(key), workers=1)
            return lbfis_estimate(self._model(n_index, trial), out, n, key).value
        return ordered_map(fresh, range(self.trials), self.workers)


def convergence_study(problem: ProblemSpec, n_grid: Sequence[int] = DEFAULT_N_GRID, trials: int = 1000,
                      seed: SeedKey = 0, pf_ref: Optional[float] = None,
                      methods: Sequence[str] = ALL_METHODS, biasing: Optional[BiasingModel] = None,
                      mala_cfg: Optional[MalaConfig] = None, lf_m: int = 1_000_000,
                      normalizer_m: int = 1_000_000, mode: str = MODE_AUTO, max_fresh_runs: int = 10_000,
                      fresh_normalizer: bool = False, reference_dir: str = './reference',
                      workers: int = 1) -> ConvergenceStudy:
    """
    Replicate every method `trials` times at each N of the grid

    L-BF-IS replicates take disjoint subsets of one pooled MALA run when the
    run holds trials * N samples, otherwise fresh chains per replicate
    (mode 'auto'); the biasing model's normalizer is shared unless
    fresh_normalizer is set. LF-only estimates do not depend on N, so one set
    of `trials` replicates is repeated across the grid.
    """
    n_grid = [int(n) for n in n_grid]
    _check_n_grid(n_grid)
    _require_positive(trials, 'trials')
    unknown = set(methods) - set(ALL_METHODS)
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}", field='estimator.methods')
    if mode not in (MODE_AUTO, MODE_POOLED, MODE_FRESH):
        raise ConfigError(f"unknown replicate mode '{mode}'", field='estimator.mode')
    if pf_ref is None:
        pf_ref = reference_pf(problem, reference_dir)
    if not pf_ref > 0:
        raise ConfigError(f"reference P_f for '{problem.name}' is {pf_ref}; rRMSE is undefined")

    records = []
    modes = {}
    if METHOD_MC in methods:
        for i, n in enumerate(n_grid):
            values = ordered_map(lambda t: mc_estimate(problem, n, as_key(seed, i, t)).value,
                                 range(trials), workers)
            records += [(METHOD_MC, n, t, v) for t, v in enumerate(values)]
            logger.info(f"MC cell N={n} done")

    if METHOD_LF_ONLY in methods:
        values = ordered_map(lambda t: lf_only_estimate(problem, lf_m, as_key(seed, t)), range(trials), workers)
        for n in n_grid:
            records += [(METHOD_LF_ONLY, n, t, v) for t, v in enumerate(values)]
        logger.info(f"LF-only replicates done (M={lf_m})")

    if METHOD_LBFIS in methods:
        if biasing is None or mala_cfg is None:
            raise ConfigError("L-BF-IS rows need a biasing model and a MALA configuration")
        biasing.require_normalizer()
        reps = _LbfisReplicates(biasing, mala_cfg, trials, mode, max_fresh_runs, fresh_normalizer,
                                normalizer_m, seed, workers)
        for i, n in enumerate(n_grid):
            modes[n] = reps.mode_for(n)
            values = reps.estimates(i, n)
            records += [(METHOD_LBFIS, n, t, v) for t, v in enumerate(values)]
            logger.info(f"L-BF-IS cell N={n} done ({modes[n]} chains)")

    rows = pd.DataFrame.from_records(records, columns=['method', 'n', 'trial', 'estimate'])
    rows = rows.sort_values(['method', 'n', 'trial'], kind='mergesort').reset_index(drop=True)
    return ConvergenceStudy(n_grid=n_grid, trials=trials, pf_ref=float(pf_ref), rows=rows,
                            summary=summarize(rows, pf_ref), modes=modes, seed=list(as_key(seed)))
