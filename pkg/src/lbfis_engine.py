"""
Main L-BF-IS Orchestrator
Runs the estimate, convergence, tune-ell, diagnose, sample and oracle
pipelines for one validated run configuration
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

import config as defaults
from core.biasing import BiasingModel, draw_lf_bank, normalizer_terms
from core.problem import ProblemSpec
from data.results_writer import ResultsWriter
from data.run_config import RunConfig
from estimation import diagnostics
from estimation.estimators import (EstimateReport, convergence_study, lbfis_estimate, reference_pf,
                                   run_reference_oracle)
from estimation.quadrature import quadrature_factors
from estimation.tuning import METHOD_ONE, EllSweep, select_ell
from models import make_problem
from sampling import mala
from utils.errors import ConfigError
from utils.rng import Stream, as_key, make_rng

logger = logging.getLogger(__name__)

_logging_ready = False


def setup_logging(log_config: Optional[Dict] = None):
    """Install the rotating file handler and the console handler once per process"""
    global _logging_ready
    if _logging_ready:
        return
    log_config = log_config or defaults.LOGGING_CONFIG
    log_dir = os.path.dirname(log_config['file'])
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)

    formatter = logging.Formatter(log_config['format'])
    file_handler = RotatingFileHandler(log_config['file'], maxBytes=log_config['max_file_size'],
                                       backupCount=log_config['backup_count'], encoding='utf-8')
    stream_handler = logging.StreamHandler()
    root = logging.getLogger()
    root.setLevel(log_config['level'])
    for handler in (file_handler, stream_handler):
        handler.setFormatter(formatter)
        root.addHandler(handler)
    _logging_ready = True


class LBFISEngine:
    """Failure-probability estimation engine driven by a RunConfig"""

    def __init__(self, config: RunConfig, reference_dir: str = defaults.DATA_CONFIG['reference_dir']):
        """Initialize the engine, its output directory and its writer"""
        setup_logging()
        self.config = config
        self.reference_dir = reference_dir
        self.workers = config.workers
        self.writer = ResultsWriter(config.output_dir, defaults.DATA_CONFIG['float_format'])
        self._problem: Optional[ProblemSpec] = None

        logger.info(f"L-BF-IS engine ready for '{config.problem_name}' (seed {config.seed}, "
                    f"{self.workers} worker(s), output in {config.output_dir})")

    # ------------------------------------------------------------------
    # building blocks
    # ------------------------------------------------------------------

    def build_problem(self) -> ProblemSpec:
        """Benchmark defaults from config.py, overridden by the run config's params"""
        if self._problem is None:
            name = self.config.problem_name
            params = {'penalty_coeff': defaults.PROBLEM_CONFIG['penalty_coeff']}
            if name == 'heat':
                params.update(defaults.HEAT_CONFIG)
            else:
                params.update(defaults.BENCHMARK_CONFIG.get(name, {}))
            params.update(self.config.problem_params)
            self._problem = make_problem(name, params)
        return self._problem

    def _tune(self, problem: ProblemSpec, replicates: int) -> EllSweep:
        est, tuning = self.config.estimator, self.config.tuning
        return select_ell(problem, self.config.ell['method'], grid=self.config.ell_grid(), m=est['M'],
                          pilot_l=est['L'], seed=self.config.seed, replicates=replicates, n=1,
                          uncertainty_threshold=tuning['uncertainty_threshold'], workers=self.workers)

    def _resolve_ell(self, problem: ProblemSpec) -> Tuple[float, Optional[EllSweep]]:
        """The fixed lengthscale, or l* of a pipeline sweep sharing the normalizer draws"""
        ell = self.config.fixed_ell
        if ell is not None:
            logger.info(f"Using fixed lengthscale l={ell:.4g}")
            return ell, None
        sweep = self._tune(problem, self.config.tuning['pipeline_replicates'])
        return sweep.ell_star, sweep

    def _biasing(self, problem: ProblemSpec, ell: float) -> BiasingModel:
        b = BiasingModel(problem, ell)
        b.estimate_normalizer(self.config.estimator['M'], self.config.seed)
        return b

    def _reference(self, problem: ProblemSpec) -> Optional[float]:
        try:
            pf = reference_pf(problem, self.reference_dir)
        except ConfigError as e:
            logger.info(f"No reference P_f available: {e}")
            return None
        if not pf > 0:
            logger.warning(f"Reference P_f for '{problem.name}' is {pf}; the estimate is reported without "
                           f"a relative error")
            return None
        return pf

    def _budget(self, spent: Dict[str, int], sweep: Optional[EllSweep]) -> Dict:
        """Evaluation counts against hf = N + L and lf <= M + C(B+T) + C (+ resample pool)"""
        est, m = self.config.estimator, self.config.mala
        sweeps = self.config.tuning['pipeline_replicates'] if sweep is not None else 1
        pilot = est['L'] * sweeps if sweep is not None and sweep.method == METHOD_ONE else 0
        hf_expected = est['N'] + pilot
        lf_bound = (est['M'] * sweeps + m['chains'] * (m['burn_in'] + m['iters']) + m['chains']
                    + self.config.mala_config().init_lf_evals)
        within = spent['hf_count'] == hf_expected and spent['lf_count'] <= lf_bound
        if not within:
            logger.warning(f"Evaluation ledger {spent} outside the cost model "
                           f"(hf = {hf_expected}, lf <= {lf_bound})")
        return {**spent, 'hf_expected': hf_expected, 'lf_bound': lf_bound, 'within_budget': within}

    def _selected_frame(self, out: mala.ChainOutput, indices: np.ndarray) -> pd.DataFrame:
        iters = self.config.mala['iters']
        frame = pd.DataFrame(out.samples[indices], columns=[f"z{i + 1}" for i in range(out.samples.shape[1])])
        frame.insert(0, 'step', indices % iters)
        frame.insert(0, 'chain', indices // iters)
        frame['h_lf'] = out.lf_values[indices]
        return frame

    # ------------------------------------------------------------------
    # pipelines
    # ------------------------------------------------------------------

    def run_estimate(self) -> Dict:
        """
        tune (if requested) -> Z_M -> MALA -> subselect -> estimator

        Writes estimate.json and samples.csv (the N subselected chain states).
        """
        cfg = self.config
        n, m = cfg.estimator['N'], cfg.estimator['M']
        problem = self.build_problem()
        before = problem.ledger.snapshot()

        ell, sweep = self._resolve_ell(problem)
        b = self._biasing(problem, ell)
        out = mala.run(b, cfg.mala_config(), self.workers)
        indices = mala.subselect_indices(out.n_samples, n, make_rng(as_key(cfg.seed, Stream.SUBSELECT)))
        report: EstimateReport = lbfis_estimate(b, out, n, cfg.seed, indices=indices)
        spent = problem.ledger.since(before)

        decomposition = None
        if n >= 2 and m >= 2:
            bank = draw_lf_bank(problem, m, cfg.seed)
            decomposition = diagnostics.variance_decomposition(normalizer_terms(bank, ell), report.terms, n=n, m=m)
        budget = self._budget(spent, sweep)
        report.n_hf, report.n_lf = spent['hf_count'], spent['lf_count']

        pf_ref = self._reference(problem)
        if pf_ref is not None:
            report.with_reference(pf_ref)

        result = {
            'command': 'estimate',
            'problem': problem.describe(),
            'estimate': report.to_dict(),
            'chains': out.summary(),
            'budget': budget,
            'variance': decomposition,
            'tuning': sweep.summary() if sweep is not None else None,
            'config': cfg.to_dict(),
        }
        result['files'] = {
            'report': self.writer.write_json('estimate.json', result),
            'samples': self.writer.write_csv('samples.csv', self._selected_frame(out, indices)),
        }
        logger.info(f"L-BF-IS estimate for '{problem.name}': P_f={report.value:.6g} "
                    f"(N={n}, l={ell:.4g}, Z_M={report.zhat:.6g})")
        return result

    def run_convergence(self) -> Dict:
        """MC, LF-only and L-BF-IS replicates over the N grid"""
        cfg, est = self.config, self.config.estimator
        problem = self.build_problem()
        methods = est['methods']

        ell = b = None
        if 'lbfis' in methods:
            ell, _ = self._resolve_ell(problem)
            b = self._biasing(problem, ell)

        study = convergence_study(
            problem, n_grid=est['n_grid'], trials=est['trials'], seed=cfg.seed,
            pf_ref=reference_pf(problem, self.reference_dir), methods=methods, biasing=b,
            mala_cfg=cfg.mala_config(), lf_m=est['lf_M'], normalizer_m=est['M'], mode=est['mode'],
            max_fresh_runs=est['max_fresh_runs'], fresh_normalizer=est['fresh_normalizer'],
            reference_dir=self.reference_dir, workers=self.workers,
        )

        result = {
            'command': 'convergence',
            'problem': problem.describe(),
            'pf_ref': study.pf_ref,
            'ell': ell,
            'zhat': b.zhat if b is not None else None,
            'trials': study.trials,
            'n_grid': study.n_grid,
            'modes': {str(k): v for k, v in study.modes.items()},
            'summary': study.summary.to_dict(orient='records'),
            'config': cfg.to_dict(),
        }
        result['files'] = {
            'rows': self.writer.write_csv('convergence_rows.csv', study.rows),
            'summary': self.writer.write_csv('convergence_summary.csv', study.summary),
        }
        result['files']['report'] = self.writer.write_json('convergence.json', result)
        return result

    def run_tune(self) -> Dict:
        """Replicated lengthscale sweep; writes ell_sweep.csv and tune.json"""
        problem = self.build_problem()
        before = problem.ledger.snapshot()
        sweep = self._tune(problem, self.config.tuning['replicates'])
        result = {
            'command': 'tune-ell',
            'problem': problem.describe(),
            'sweep': sweep.summary(),
            'budget': problem.ledger.since(before),
            'config': self.config.to_dict(),
        }
        result['files'] = {'sweep': self.writer.write_csv('ell_sweep.csv', sweep.to_frame())}
        result['files']['report'] = self.writer.write_json('tune.json', result)
        return result

    def run_diagnose(self) -> Dict:
        """Overlap probabilities, normalizer/KL/variance bounds and the overlap case"""
        cfg, diag = self.config, self.config.diagnostics
        problem = self.build_problem()
        ell, sweep = self._resolve_ell(problem)
        b = self._biasing(problem, ell)
        overlap = diagnostics.overlap_probs(problem, diag['n_joint'], cfg.seed)

        zhat, z_bound, z_ok = diagnostics.normalizer_bound(b, overlap, diag['slack_se'])
        kl = {'bound': None, 'bound_measure_consistent': None, 'bound_with_slack': None, 'plugin': None}
        if overlap.p_AH > 0:
            kl = {
                'bound': diagnostics.kl_bound(b, overlap),
                'bound_measure_consistent': diagnostics.kl_bound(b, overlap, measure_consistent=True),
                'bound_with_slack': diagnostics.kl_bound(b, overlap, diag['slack_se'], measure_consistent=True),
                'plugin': diagnostics.kl_plugin(b, overlap),
            }
        else:
            logger.warning(f"No HF failures among {overlap.n_hf_used} joint draws; KL values are undefined")

        result = {
            'command': 'diagnose',
            'problem': problem.describe(),
            'ell': ell,
            'overlap': overlap.to_dict(),
            'overlap_case': diagnostics.classify_overlap(overlap, diag['large_al'], diag['large_miss']),
            'normalizer': {'zhat': zhat, 'zhat_se': b.zhat_se, 'bound': z_bound, 'satisfied': z_ok},
            'kl': kl,
            'variance_bound': diagnostics.variance_bound(b, overlap, cfg.estimator['N']),
            'tuning': sweep.summary() if sweep is not None else None,
            'config': cfg.to_dict(),
        }
        if problem.dim == 1:
            exact = quadrature_factors(problem, ell)
            exact['normalizer_bound'] = float(1.0 + np.expm1(ell) * exact['p_AL'])
            result['quadrature'] = exact
        result['files'] = {'report': self.writer.write_json('diagnose.json', result)}
        return result

    def run_sample(self) -> Dict:
        """Chains from the biasing density; writes samples.csv and sample.json"""
        cfg = self.config
        problem = self.build_problem()
        before = problem.ledger.snapshot()
        ell, sweep = self._resolve_ell(problem)
        mala_cfg = cfg.mala_config()
        out = mala.run(BiasingModel(problem, ell), mala_cfg, self.workers)

        result = {
            'command': 'sample',
            'problem': problem.describe(),
            'ell': ell,
            'chains': out.summary(),
            'acceptance_rate': out.acceptance_rate,
            'budget': problem.ledger.since(before),
            'config': cfg.to_dict(),
        }
        if problem.dim == 1:
            lo, hi = problem.reference.support_lower[0], problem.reference.support_upper[0]
            if np.isfinite(lo) and np.isfinite(hi):
                counts, edges = np.histogram(out.samples[:, 0], bins=50, range=(lo, hi))
                result['histogram'] = {'edges': edges, 'counts': counts}
        if out.potential_trace is not None:
            result['potential_trace'] = out.potential_trace
        result['files'] = {
            'samples': self.writer.write_samples('samples.csv', out.samples, out.lf_values, chains=mala_cfg.chains),
        }
        result['files']['report'] = self.writer.write_json('sample.json', result)
        return result

    def run_oracle(self, n: Optional[int] = None) -> Dict:
        """Brute-force HF Monte Carlo reference P_f frozen under the reference directory"""
        problem = self.build_problem()
        n = int(n or self.config.estimator['oracle_n'])
        record = run_reference_oracle(problem, n, self.config.seed, self.reference_dir)
        record['files'] = {'reference': os.path.join(self.reference_dir, f"{problem.name}.json")}
        return record
