"""
Testing module for L-BF-IS
Unit tests for densities, benchmarks, the sampler, the estimators, tuning,
diagnostics, configuration and the engine pipelines.

Long statistical acceptance runs only execute with LBFIS_SLOW_TESTS=1.
"""

import glob
import json
import os
import sys
import tempfile
import unittest

import numpy as np
import pandas as pd
from scipy import stats

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from core.biasing import BiasingModel, draw_lf_bank, normalizer_terms
from core.density import CoordinateFactor, ReferenceDensity
from core.problem import ProblemSpec
from data.results_writer import ResultsWriter, make_serializable
from data.run_config import config_from_dict, load_run_config, parse_run_config
from estimation import diagnostics
from estimation.diagnostics import OverlapReport
from estimation.estimators import (convergence_study, lbfis_estimate, lf_only_estimate, mc_estimate,
                                   reference_pf, rrmse, run_reference_oracle)
from estimation.quadrature import OneDimQuadrature, quadrature_factors
from estimation.tuning import default_grid, select_ell, variance_proxy_hf, variance_proxy_lf
from lbfis_engine import LBFISEngine
from models import make_problem
from models.beam import make_beam
from models.borehole import BOX, make_borehole
from models.heat import ConductivityParams, GridSpec, HeatEquationModel, make_heat
from models.synthetic import (make_synthetic1000, synthetic_failure_probability, synthetic_lf_failure_probability,
                              uniform_sum_cdf)
from models.toy import make_toy_bimodal, toy_failure_probability, toy_h
from sampling import mala
from sampling.mala import MalaConfig
from utils.errors import (BudgetError, ConfigError, DomainError, NormalizerNotEstimatedError,
                          NumericalError, TuningError)
from utils.parallel import ordered_map
from utils.rng import Stream, as_key, make_rng

import main as cli

SLOW = os.environ.get('LBFIS_SLOW_TESTS') == '1'
TOY_PF = 1.0 - (2.0 / np.pi) * np.arcsin(0.95)


def gaussian_problem(dim, hf_value=1.0, lf_value=1.0):
    """Standard Gaussian reference with constant limit states"""
    return ProblemSpec(
        name=f'gaussian{dim}',
        reference=ReferenceDensity.iid(CoordinateFactor.gaussian(0.0, 1.0), dim),
        lf=lambda Z: np.full(len(Z), lf_value),
        lf_grad=lambda Z: np.zeros_like(Z),
        hf=lambda Z: np.full(len(Z), hf_value),
        lower=-np.inf,
        upper=np.inf,
    )


def boxed_gaussian_problem(threshold=1.5, bound=3.0):
    """1D standard Gaussian cut to an open box, failing for z > threshold"""
    return ProblemSpec(
        name='boxed-gaussian',
        reference=ReferenceDensity([CoordinateFactor.gaussian(0.0, 1.0)]),
        lf=lambda Z: threshold - Z[:, 0],
        lf_grad=lambda Z: -np.ones_like(Z),
        hf=lambda Z: threshold - Z[:, 0],
        lower=np.array([-bound]),
        upper=np.array([bound]),
    )


def interior_points(lower, upper, n, seed):
    """Uniform points kept away from the faces of a box"""
    rng = make_rng(seed)
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    return lower + (upper - lower) * rng.uniform(0.01, 0.99, size=(n, len(lower)))


def central_differences(fn, Z, steps):
    """Central finite-difference gradients of a batched scalar function"""
    grads = np.empty_like(Z)
    for i in range(Z.shape[1]):
        dz = np.zeros(Z.shape[1])
        dz[i] = 1.0
        plus = fn(Z + steps[:, i:i + 1] * dz)
        minus = fn(Z - steps[:, i:i + 1] * dz)
        grads[:, i] = (plus - minus) / (2.0 * steps[:, i])
    return grads


def overlap(p_al, p_ah, p_hlc, n=10000):
    se = lambda p: float(np.sqrt(p * (1 - p) / n))
    return OverlapReport(p_AL=p_al, p_AH=p_ah, p_AH_and_ALc=p_hlc, se_AL=se(p_al), se_AH=se(p_ah),
                         se_AH_and_ALc=se(p_hlc), n_hf_used=n, n_lf_used=n)


def toy_run_config(output_dir, **sections):
    data = {
        'seed': 7,
        'problem': {'name': 'toy'},
        'output_dir': output_dir,
        'mala': {'tau': 0.05, 'burn_in': 20, 'iters': 10, 'chains': 20, 'z0': 'prior'},
        'estimator': {'M': 2000, 'N': 50, 'L': 50, 'lf_M': 500, 'trials': 4, 'n_grid': [10, 20]},
        'ell': {'value': 5.0, 'tune': False},
        'tuning': {'grid_points': 8, 'replicates': 2},
        'diagnostics': {'n_joint': 2000},
    }
    for name, values in sections.items():
        data[name].update(values)
    return config_from_dict(data)


class TestRandomStreams(unittest.TestCase):
    """Test keyed random streams and the ordered worker pool"""

    def test_same_key_same_stream(self):
        """Test that equal keys give identical draws"""
        np.testing.assert_array_equal(make_rng(3, 1).random(5), make_rng((3, 1)).random(5))

    def test_trailing_zero_keys_differ(self):
        """Test that keys differing only by a trailing zero are distinct streams"""
        a = make_rng(11, Stream.SUBSELECT).random(4)
        b = make_rng(11, Stream.SUBSELECT, 0).random(4)
        self.assertFalse(np.allclose(a, b))

    def test_negative_key_rejected(self):
        """Test that negative key entries are refused"""
        with self.assertRaises(ValueError):
            as_key(1, -2)

    def test_ordered_map_keeps_order(self):
        """Test that pool results come back in item order"""
        self.assertEqual(ordered_map(lambda x: x * x, range(20), workers=4), [x * x for x in range(20)])


class TestErrors(unittest.TestCase):
    """Test error context"""

    def test_config_error_names_field_and_line(self):
        """Test that ConfigError carries the field path and line"""
        err = ConfigError("unknown key", field='mala.taux', line=4)
        self.assertEqual(err.field, 'mala.taux')
        self.assertIn("mala.taux", str(err))
        self.assertIn("line 4", str(err))

    def test_budget_error_is_config_error(self):
        """Test that budget violations map to the config exit code"""
        self.assertTrue(issubclass(BudgetError, ConfigError))
        self.assertTrue(issubclass(TuningError, NumericalError))
        self.assertTrue(issubclass(DomainError, NumericalError))


class TestReferenceDensity(unittest.TestCase):
    """Test product reference densities"""

    def setUp(self):
        """Set up test fixtures"""
        self.density = ReferenceDensity([CoordinateFactor.gaussian(1.0, 2.0), CoordinateFactor.uniform(-1.0, 3.0)])

    def test_log_density_value(self):
        """Test the log-density at the Gaussian mean inside the uniform support"""
        expected = -np.log(2.0) - 0.5 * np.log(2 * np.pi) - np.log(4.0)
        self.assertAlmostEqual(self.density.log_density([1.0, 0.0]), expected, places=12)

    def test_log_density_outside_support(self):
        """Test that a uniform coordinate outside its interval gives -inf"""
        self.assertEqual(self.density.log_density([0.0, 3.5]), -np.inf)
        self.assertTrue(np.isfinite(self.density.log_density([0.0, 3.0])))

    def test_batch_matches_single(self):
        """Test that batched evaluation returns one value per row"""
        Z = np.array([[0.0, 0.0], [2.0, 1.0], [-1.0, 2.5]])
        batch = self.density.log_density(Z)
        for i, z in enumerate(Z):
            self.assertAlmostEqual(batch[i], self.density.log_density(z), places=12)

    def test_score(self):
        """Test the score: Gaussian -(z - mean)/std^2, uniform 0"""
        np.testing.assert_allclose(self.density.score([3.0, 1.0]), [-0.5, 0.0])

    def test_score_on_boundary_raises(self):
        """Test that the strict score refuses a uniform boundary point"""
        with self.assertRaises(DomainError):
            self.density.score([0.0, 3.0])
        np.testing.assert_allclose(self.density.score([1.0, 3.0], strict=False), [0.0, 0.0])

    def test_sample_is_reproducible(self):
        """Test that samples depend only on the seed"""
        np.testing.assert_array_equal(self.density.sample(5, 10), self.density.sample(5, 10))
        self.assertFalse(np.allclose(self.density.sample(5, 10), self.density.sample(6, 10)))

    def test_chunked_samples_match(self):
        """Test that chunked draws concatenate to the one-shot draw"""
        chunks = list(self.density.iter_samples(9, 50, chunk_rows=7))
        np.testing.assert_array_equal(np.vstack(chunks), self.density.sample(9, 50))

    def test_sample_moments(self):
        """Test sample mean and spread of both factors"""
        Z = self.density.sample(1, 40000)
        self.assertAlmostEqual(Z[:, 0].mean(), 1.0, delta=0.05)
        self.assertAlmostEqual(Z[:, 0].std(), 2.0, delta=0.05)
        self.assertGreaterEqual(Z[:, 1].min(), -1.0)
        self.assertLessEqual(Z[:, 1].max(), 3.0)
        self.assertAlmostEqual(Z[:, 1].mean(), 1.0, delta=0.05)

    def test_factor_records(self):
        """Test building a density from config records"""
        density = ReferenceDensity.from_records([{'kind': 'uniform', 'params': {'lower': 0, 'upper': 2}}])
        self.assertEqual(density.dim, 1)
        np.testing.assert_allclose(density.center(), [1.0])

    def test_invalid_factor(self):
        """Test that a non-positive std is rejected"""
        with self.assertRaises(ConfigError):
            CoordinateFactor.gaussian(0.0, 0.0)


class TestProblemSpec(unittest.TestCase):
    """Test the LF/HF problem wrapper"""

    def setUp(self):
        """Set up test fixtures"""
        self.problem = make_toy_bimodal()

    def test_penalty_outside_domain(self):
        """Test that both fidelities take the penalty outside the box"""
        self.assertAlmostEqual(self.problem.lf_eval([1.5]), 225.0)
        self.assertAlmostEqual(self.problem.hf_eval([-1.0]), 100.0)
        np.testing.assert_allclose(self.problem.lf_grad_eval([1.5]), [300.0])

    def test_open_domain(self):
        """Test that the box faces are outside the domain"""
        np.testing.assert_array_equal(self.problem.in_domain(np.array([[0.0], [1.0], [-0.999]])),
                                      [True, False, True])

    def test_ledger_counts(self):
        """Test that every point costs one evaluation of its fidelity"""
        Z = np.linspace(-0.9, 0.9, 5)[:, None]
        self.problem.lf_eval(Z)
        self.problem.lf_value_and_grad_eval(Z)
        self.problem.hf_eval(Z[:2])
        self.assertEqual(self.problem.ledger.lf_count, 10)
        self.assertEqual(self.problem.ledger.hf_count, 2)

    def test_nan_raises(self):
        """Test that NaN limit-state values raise NumericalError"""
        problem = ProblemSpec(name='nan', reference=ReferenceDensity([CoordinateFactor.uniform(0, 1)]),
                              lf=lambda Z: np.full(len(Z), np.nan), lf_grad=lambda Z: np.zeros_like(Z),
                              hf=lambda Z: np.zeros(len(Z)), lower=0.0, upper=1.0)
        with self.assertRaises(NumericalError):
            problem.lf_eval([0.5])

    def test_center(self):
        """Test that the start point is the box midpoint"""
        np.testing.assert_allclose(make_borehole().center(), BOX.mean(axis=1))


class TestBenchmarks(unittest.TestCase):
    """Test benchmark values and analytic gradients"""

    def test_toy_failure_probability(self):
        """Test the closed-form toy failure probability"""
        self.assertAlmostEqual(toy_failure_probability(), 0.202162, places=5)

    def test_toy_gradient(self):
        """Test the toy gradient against central differences"""
        problem = make_toy_bimodal()
        Z = interior_points([-1.0], [1.0], 100, 1)
        fd = central_differences(problem.lf, Z, np.full_like(Z, 1e-6))
        np.testing.assert_allclose(problem.lf_grad(Z), fd, rtol=1e-6, atol=1e-7)

    def _check_scaled_gradient(self, problem, Z):
        steps = 1e-6 * np.abs(Z)
        fd = central_differences(problem.lf, Z, steps)
        g = problem.lf_grad(Z)
        scaled, scaled_fd = g * np.abs(Z), fd * np.abs(Z)
        np.testing.assert_allclose(scaled, scaled_fd, rtol=1e-5, atol=1e-6 * np.abs(scaled).max())

    def test_borehole_gradient(self):
        """Test the borehole LF gradient at 100 interior points"""
        self._check_scaled_gradient(make_borehole(), interior_points(BOX[:, 0], BOX[:, 1], 100, 2))

    def test_beam_gradient(self):
        """Test the beam LF gradient at 100 interior points"""
        problem = make_beam()
        self._check_scaled_gradient(problem, interior_points(problem.lower, problem.upper, 100, 3))

    def test_synthetic_gradient(self):
        """Test the 1000D LF gradient at 100 interior points"""
        problem = make_synthetic1000()
        Z = interior_points(problem.lower, problem.upper, 100, 4)
        fd = central_differences(problem.lf, Z, np.full_like(Z, 1e-5))
        np.testing.assert_allclose(problem.lf_grad(Z), fd, rtol=1e-5, atol=1e-8)

    def test_uniform_sum_cdf(self):
        """Test the characteristic-function CDF against the Irwin-Hall value"""
        # 8 uniforms on [-1, 1] sum to <= 2 iff 8 uniforms on [0, 1] sum to <= 5
        self.assertAlmostEqual(uniform_sum_cdf(np.ones(8), 2.0), 35779.0 / 40320.0, places=7)
        self.assertAlmostEqual(uniform_sum_cdf(np.ones(8), 0.0), 0.5, places=9)
        self.assertEqual(uniform_sum_cdf(np.ones(8), -8.0), 0.0)
        self.assertEqual(uniform_sum_cdf(np.ones(8), 8.5), 1.0)

    def test_synthetic_failure_probabilities(self):
        """Test the exact synthetic P_f and P_f^LF against Monte Carlo"""
        problem = make_synthetic1000()
        n, hf_fails, lf_fails = 20000, 0, 0
        for chunk in problem.reference.iter_samples(12, n):
            hf_fails += int(np.sum(problem.hf(chunk) < 0))
            lf_fails += int(np.sum(problem.lf(chunk) < 0))
        pf, pf_lf = synthetic_failure_probability(), synthetic_lf_failure_probability()
        self.assertAlmostEqual(pf, 0.047, delta=0.003)
        self.assertAlmostEqual(pf_lf, 0.075, delta=0.003)
        self.assertLess(abs(hf_fails / n - pf), 4 * np.sqrt(pf * (1 - pf) / n))
        self.assertLess(abs(lf_fails / n - pf_lf), 4 * np.sqrt(pf_lf * (1 - pf_lf) / n))
        self.assertEqual(problem.exact_pf(), pf)
        self.assertEqual(synthetic_lf_failure_probability(0.5), 1.0)

    def test_synthetic_values(self):
        """Test the synthetic limit states at the origin"""
        problem = make_synthetic1000()
        z = np.zeros(problem.dim)
        self.assertAlmostEqual(problem.lf_eval(z), 3.0)
        self.assertAlmostEqual(problem.hf_eval(z), 20.0 - np.exp(2.0))

    def test_beam_threshold_shift(self):
        """Test that HF and LF differ only by the thresholds inside the box"""
        problem = make_beam()
        Z = interior_points(problem.lower, problem.upper, 10, 5)
        np.testing.assert_allclose(problem.hf_eval(Z) - problem.lf_eval(Z), 4.04 - 3.18)

    def test_catalog(self):
        """Test catalog lookups and parameter errors"""
        self.assertEqual(make_problem('borehole-low').name, 'borehole-low')
        with self.assertRaises(ConfigError):
            make_problem('nope')
        with self.assertRaises(ConfigError):
            make_problem('toy', {'bogus': 1})


class TestHeatBenchmark(unittest.TestCase):
    """Test the heat solver, its adjoint gradient and discretization order"""

    def setUp(self):
        """Set up test fixtures"""
        self.cp = ConductivityParams(dprime=4, kbar=3.0)
        self.z = self.cp.reference().sample(21, 1)[0]

    def test_constant_conductivity_series(self):
        """Test max(u) against the Fourier series for K = Kbar + 1"""
        model = HeatEquationModel(ConductivityParams(dprime=4, kbar=3.0))
        u = model.solve(GridSpec(61), np.zeros(16))
        m = np.arange(1, 400, 2)
        sign = (-1.0) ** ((m - 1) // 2)
        M, N = np.meshgrid(m, m, indexing='ij')
        series = np.sum(16.0 / (np.pi ** 4 * M * N * (M ** 2 + N ** 2)) * np.outer(sign, sign))
        self.assertLess(abs(u.max() - series / 4.0) / (series / 4.0), 0.005)

    def test_max_principle(self):
        """Test that the temperature is non-negative"""
        u = HeatEquationModel(self.cp).solve(GridSpec(17), self.z)
        self.assertGreaterEqual(u.min(), 0.0)
        self.assertGreater(u.max(), 0.0)

    def test_grid_convergence_order(self):
        """Test second-order convergence of the centre temperature"""
        model = HeatEquationModel(self.cp)
        c = [model.solve(GridSpec(n), self.z)[n // 2, n // 2] for n in (17, 33, 65)]
        ratio = (c[0] - c[1]) / (c[1] - c[2])
        self.assertGreaterEqual(ratio, 3.0)
        self.assertLessEqual(ratio, 5.0)

    def test_adjoint_gradient(self):
        """Test the adjoint LF gradient against central differences"""
        model = HeatEquationModel(self.cp, grid_hf=9, grid_lf=9)
        grad = model.lf_grad(self.z)
        fd = np.empty_like(grad)
        for i in range(len(self.z)):
            dz = np.zeros_like(self.z)
            dz[i] = 1e-6
            fd[i] = (model.lf_h(self.z + dz) - model.lf_h(self.z - dz)) / 2e-6
        self.assertLess(np.linalg.norm(grad - fd) / np.linalg.norm(grad), 1e-4)

    def test_adjoint_gradient_full_size(self):
        """Test the 400D adjoint gradient on the 17x17 LF grid at 5 prior draws"""
        cp = ConductivityParams(dprime=100, kbar=3.0)
        model = HeatEquationModel(cp, grid_hf=17, grid_lf=17)
        Z = cp.reference().sample(22, 5)
        grads = model.lf_grad_batch(Z)
        fd = central_differences(model.lf_batch, Z, np.full_like(Z, 1e-6))
        for g, g_fd in zip(grads, fd):
            self.assertLess(np.linalg.norm(g - g_fd) / np.linalg.norm(g), 1e-4)

    def test_problem_wrapper(self):
        """Test the catalog heat problem's dimension and value-gradient path"""
        problem = make_heat(grid_hf=9, grid_lf=9, dprime=4)
        self.assertEqual(problem.dim, 16)
        value, grad = problem.lf_value_and_grad_eval(self.z)
        self.assertAlmostEqual(value, problem.lf_eval(self.z))
        self.assertEqual(grad.shape, (16,))
        self.assertNotIn('model', problem.metadata)

    def test_invalid_inputs(self):
        """Test shape and grid checks"""
        with self.assertRaises(ConfigError):
            self.cp.split(np.zeros(5))
        with self.assertRaises(ConfigError):
            GridSpec(2)


class TestBiasingModel(unittest.TestCase):
    """Test the biasing density"""

    def setUp(self):
        """Set up test fixtures"""
        self.problem = make_toy_bimodal()
        self.b = BiasingModel(self.problem, 5.0)

    def test_potential_value(self):
        """Test U = l tanh h - log p"""
        z = 0.3
        h = 0.9025 - np.sin(np.pi * z) ** 2
        self.assertAlmostEqual(self.b.potential([z]), 5.0 * np.tanh(h) + np.log(2.0), places=12)
        self.assertEqual(self.b.potential([1.5]), np.inf)

    def test_outside_support_costs_no_lf(self):
        """Test that points with zero reference density skip the LF model"""
        self.assertEqual(self.b.potential([1.5]), np.inf)
        self.assertEqual(self.problem.ledger.lf_count, 0)
        U, G, H = self.b.potential_and_grad(np.array([[0.2], [1.5], [-0.3], [-2.0]]))
        self.assertEqual(self.problem.ledger.lf_count, 2)
        np.testing.assert_array_equal(np.isinf(U), [False, True, False, True])
        np.testing.assert_array_equal(G[[1, 3]], 0.0)
        np.testing.assert_array_equal(np.isnan(H), [False, True, False, True])
        self.assertAlmostEqual(U[0], self.b.potential([0.2]), places=12)

    def test_batched_potential_matches(self):
        """Test that the batched potential and gradient match the single-point forms"""
        Z = np.array([[-0.7], [0.1], [0.45]])
        U, G, H = self.b.potential_and_grad(Z)
        for i, z in enumerate(Z):
            self.assertAlmostEqual(U[i], self.b.potential(z), places=12)
            np.testing.assert_allclose(G[i], self.b.potential_grad(z), rtol=1e-12)
            self.assertAlmostEqual(H[i], self.problem.lf_eval(z), places=12)

    def test_potential_gradient(self):
        """Test grad U against central differences"""
        z, eps = np.array([0.37]), 1e-6
        fd = (self.b.potential(z + eps) - self.b.potential(z - eps)) / (2 * eps)
        self.assertAlmostEqual(self.b.potential_grad(z)[0], fd, places=6)

    def test_normalizer_required(self):
        """Test that weights need the normalizer"""
        with self.assertRaises(NormalizerNotEstimatedError):
            self.b.weight([0.1])
        with self.assertRaises(ConfigError):
            BiasingModel(self.problem, -1.0)

    def test_normalizer_against_quadrature(self):
        """Test Z_M against the quadrature normalizer"""
        zhat = self.b.estimate_normalizer(40000, seed=3)
        exact = quadrature_factors(self.problem, 5.0)['Z']
        self.assertLess(abs(zhat - exact), 5 * self.b.zhat_se)
        h = self.problem.lf(np.array([[0.2]]))[0]
        self.assertAlmostEqual(self.b.weight([0.2]), zhat * np.exp(5.0 * np.tanh(h)))

    def test_bank_is_shared(self):
        """Test that normalizers at different l reuse the same LF draws"""
        self.b.estimate_normalizer(3000, seed=8)
        BiasingModel(self.problem, 2.0).estimate_normalizer(3000, seed=8)
        self.assertEqual(self.problem.ledger.lf_count, 3000)
        bank = draw_lf_bank(self.problem, 3000, 8)
        self.assertAlmostEqual(self.b.zhat, float(np.mean(normalizer_terms(bank, 5.0))))


class TestMala(unittest.TestCase):
    """Test the Langevin sampler"""

    def setUp(self):
        """Set up test fixtures"""
        self.toy = BiasingModel(make_toy_bimodal(), 5.0)

    def test_accept_probability_example(self):
        """Test the acceptance probability on U = z^2/2 from 0 to 1 with tau = 0.5"""
        b = BiasingModel(gaussian_problem(1), 0.0)
        self.assertAlmostEqual(mala.accept_prob(b, [0.0], [1.0], 0.5), np.exp(-0.125), places=12)
        self.assertAlmostEqual(mala.accept_prob(b, [0.0], [1.0], 0.5), 0.8825, places=4)

    def test_config_validation(self):
        """Test that invalid sampler settings are rejected"""
        with self.assertRaises(ConfigError):
            MalaConfig(tau=0.0)
        with self.assertRaises(ConfigError):
            MalaConfig(tau=0.1, z0='middle')

    def test_run_is_reproducible(self):
        """Test that equal seeds give identical chains"""
        cfg = MalaConfig(tau=0.05, burn_in=10, iters=15, chains=4, seed=3, z0='prior')
        a, b = mala.run(self.toy, cfg), mala.run(self.toy, cfg)
        np.testing.assert_array_equal(a.samples, b.samples)
        self.assertEqual(a.samples.shape, (60, 1))

    def test_worker_count_does_not_change_chains(self):
        """Test that chain batches on a pool reproduce the serial run"""
        cfg = MalaConfig(tau=0.05, burn_in=5, iters=10, chains=7, seed=4, z0='prior', chain_batch=3, block_size=4)
        serial = mala.run(self.toy, cfg, workers=1)
        pooled = mala.run(self.toy, cfg, workers=3)
        np.testing.assert_array_equal(serial.samples, pooled.samples)
        np.testing.assert_array_equal(serial.lf_values, pooled.lf_values)

    def test_lf_budget(self):
        """Test that a run costs at most C (B + T) + C LF evaluations"""
        problem = make_toy_bimodal()
        cfg = MalaConfig(tau=0.05, burn_in=6, iters=9, chains=5, seed=1, z0='prior')
        out = mala.run(BiasingModel(problem, 5.0), cfg)
        self.assertLessEqual(problem.ledger.lf_count, 5 * 15 + 5)
        self.assertEqual(problem.ledger.hf_count, 0)
        np.testing.assert_allclose(out.lf_values, problem.lf(out.samples))

    def test_initial_state_outside_support(self):
        """Test that a start point with infinite potential is refused"""
        with self.assertRaises(NumericalError):
            mala.run(self.toy, MalaConfig(tau=0.05, iters=2, z0=[2.0]))

    def test_resampled_starts_favour_failure(self):
        """Test that resampled starts follow the biasing weights"""
        cfg = MalaConfig(tau=0.05, chains=400, seed=9, z0='resample', resample_pool=5000)
        starts = mala.initial_states(self.toy, cfg, list(range(400)))
        self.assertEqual(starts.shape, (400, 1))
        self.assertTrue(np.all(np.abs(starts) < 1.0))
        # about 0.2 of p fails; q at l = 5 puts more than half its mass there
        self.assertGreater(np.mean(toy_h(starts) < 0), 0.45)
        np.testing.assert_array_equal(starts[:10], mala.initial_states(self.toy, cfg, list(range(10))))
        with self.assertRaises(ConfigError):
            MalaConfig(tau=0.05, z0='resample', resample_pool=0)

    def test_resampled_run_budget_and_workers(self):
        """Test that resampled starts cost the pool once and ignore the worker count"""
        problem = make_toy_bimodal()
        cfg = MalaConfig(tau=0.05, burn_in=5, iters=8, chains=7, seed=4, z0='resample', resample_pool=300,
                         chain_batch=3)
        serial = mala.run(BiasingModel(problem, 5.0), cfg, workers=1)
        self.assertLessEqual(problem.ledger.lf_count, 7 * 13 + 7 + 300)
        self.assertEqual(cfg.init_lf_evals, 300)
        pooled = mala.run(BiasingModel(problem, 5.0), cfg, workers=3)
        np.testing.assert_array_equal(serial.samples, pooled.samples)

    def test_penalty_keeps_chains_in_box(self):
        """Test that under 1% of chain states leave the box of a Gaussian reference"""
        problem = boxed_gaussian_problem()
        out = mala.run(BiasingModel(problem, 2.0),
                       MalaConfig(tau=0.1, burn_in=100, iters=200, chains=200, seed=6, z0='prior'))
        self.assertLess(out.outside_fraction, 0.01)
        self.assertGreater(np.mean(out.samples[:, 0] > 1.5), 0.1)
        for make in (make_toy_bimodal, make_beam):
            problem = make()
            cfg = MalaConfig(tau=0.05 if make is make_toy_bimodal else 1e-3, burn_in=50, iters=50, chains=10,
                             seed=6, z0='center')
            self.assertLess(mala.run(BiasingModel(problem, 5.0), cfg).outside_fraction, 0.01)

    def test_subselect(self):
        """Test uniform subselection without replacement"""
        idx = mala.subselect_indices(50, 20, make_rng(1))
        self.assertEqual(len(set(idx.tolist())), 20)
        with self.assertRaises(BudgetError):
            mala.subselect_indices(10, 11, 0)

    def test_toy_bimodality(self):
        """Test that the toy chains occupy both failure-adjacent modes"""
        cfg = MalaConfig(tau=0.05, burn_in=200, iters=10, chains=100, seed=2024, z0='prior')
        z = mala.run(self.toy, cfg).samples[:, 0]
        positive = np.mean(z > 0)
        self.assertGreaterEqual(positive, 0.3)
        self.assertLessEqual(positive, 0.7)
        self.assertGreater(np.mean((np.abs(z) > 0.25) & (np.abs(z) < 0.75)), 0.6)

    def test_gaussian_moments(self):
        """Test that l = 0 samples a standard Gaussian"""
        b = BiasingModel(gaussian_problem(2), 0.0)
        out = mala.run(b, MalaConfig(tau=0.5, burn_in=100, iters=400, chains=50, seed=5))
        self.assertLess(np.abs(out.samples.mean(axis=0)).max(), 0.1)
        np.testing.assert_allclose(out.samples.var(axis=0), 1.0, atol=0.1)
        self.assertGreater(out.mean_acceptance, 0.5)


class TestEstimators(unittest.TestCase):
    """Test the MC, LF-only and L-BF-IS estimators"""

    def setUp(self):
        """Set up test fixtures"""
        self.problem = make_toy_bimodal()

    def test_mc_estimate(self):
        """Test Monte Carlo against the closed form"""
        report = mc_estimate(self.problem, 20000, seed=1)
        self.assertEqual(report.n_hf, 20000)
        self.assertLess(abs(report.value - TOY_PF), 4 * report.std_error)

    def test_lf_only_costs_no_hf(self):
        """Test that the LF-only baseline spends no HF evaluations"""
        value = lf_only_estimate(self.problem, 5000, seed=2)
        self.assertEqual(self.problem.ledger.hf_count, 0)
        self.assertAlmostEqual(value, TOY_PF, delta=0.03)

    def test_lbfis_needs_normalizer(self):
        """Test that the estimator refuses a model without Z_M"""
        b = BiasingModel(self.problem, 5.0)
        with self.assertRaises(NormalizerNotEstimatedError):
            lbfis_estimate(b, np.zeros((10, 1)), 5, seed=0)

    def test_lbfis_estimate(self):
        """Test one L-BF-IS estimate and its HF cost"""
        b = BiasingModel(self.problem, 5.0)
        b.estimate_normalizer(20000, seed=4)
        out = mala.run(b, MalaConfig(tau=0.05, burn_in=100, iters=20, chains=50, seed=4, z0='prior'))
        hf_before = self.problem.ledger.hf_count
        report = lbfis_estimate(b, out, 200, seed=4)
        self.assertEqual(self.problem.ledger.hf_count - hf_before, 200)
        self.assertEqual(report.n_hf, 200)
        self.assertEqual(report.n_lf, 0)
        self.assertLess(abs(report.value - TOY_PF) / TOY_PF, 0.25)
        self.assertEqual(report.provenance['ell'], 5.0)

    def test_lbfis_from_points_counts_lf(self):
        """Test that plain sample arrays pay for their LF values"""
        b = BiasingModel(self.problem, 1.0)
        b.estimate_normalizer(1000, seed=1)
        report = lbfis_estimate(b, self.problem.reference.sample(1, 30), 10, seed=1)
        self.assertEqual(report.n_lf, 10)
        with self.assertRaises(BudgetError):
            lbfis_estimate(b, np.zeros((5, 1)), 6, seed=1)

    def test_rrmse(self):
        """Test the relative RMSE"""
        self.assertAlmostEqual(rrmse([1.1, 0.9], 1.0), 0.1)
        with self.assertRaises(ConfigError):
            rrmse([0.1], 0.0)

    def test_reference_pf(self):
        """Test quadrature references for D = 1 and frozen files otherwise"""
        self.assertAlmostEqual(reference_pf(self.problem), TOY_PF, places=8)
        borehole = make_borehole()
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                reference_pf(borehole, tmp)
            with open(os.path.join(tmp, 'borehole.json'), 'w') as f:
                json.dump({'problem': 'borehole', 'pf': 0.0123}, f)
            self.assertEqual(reference_pf(borehole, tmp), 0.0123)

    def test_reference_pf_prefers_exact(self):
        """Test that a problem with an exact P_f ignores frozen files"""
        problem = make_synthetic1000()
        with tempfile.TemporaryDirectory() as tmp:
            with open(os.path.join(tmp, 'synthetic1000.json'), 'w') as f:
                json.dump({'problem': 'synthetic1000', 'pf': 0.5}, f)
            self.assertEqual(reference_pf(problem, tmp), synthetic_failure_probability())
            record = run_reference_oracle(problem, 200, seed=1, reference_dir=None)
        self.assertEqual(record['pf_exact'], synthetic_failure_probability())
        self.assertEqual(problem.ledger.hf_count, 200)

    def test_zero_reference_warns(self):
        """Test that a frozen reference without failures is reported"""
        borehole = make_borehole()
        with tempfile.TemporaryDirectory() as tmp:
            with open(os.path.join(tmp, 'borehole.json'), 'w') as f:
                json.dump({'problem': 'borehole', 'pf': 0.0, 'n': 1000}, f)
            with self.assertLogs(level='WARNING') as logs:
                self.assertEqual(reference_pf(borehole, tmp), 0.0)
        self.assertIn('no HF failures', '\n'.join(logs.output))

    def test_lbfis_unbiased_across_ell(self):
        """Test that replicate means match P_f at a small and a large lengthscale"""
        for ell in (2.0, 8.0):
            with self.subTest(ell=ell):
                b = BiasingModel(self.problem, ell)
                b.estimate_normalizer(2000, seed=13)
                cfg = MalaConfig(tau=0.05, burn_in=200, iters=50, chains=400, seed=13, z0='resample',
                                 resample_pool=5000)
                study = convergence_study(self.problem, n_grid=[100], trials=200, seed=13, methods=['lbfis'],
                                          biasing=b, mala_cfg=cfg, mode='pooled', fresh_normalizer=True,
                                          normalizer_m=2000)
                values = study.rows['estimate'].to_numpy()
                self.assertLess(abs(values.mean() - TOY_PF) / TOY_PF, 0.1)

    def test_convergence_study_pooled(self):
        """Test the study layout with pooled chains"""
        b = BiasingModel(self.problem, 5.0)
        b.estimate_normalizer(5000, seed=2)
        cfg = MalaConfig(tau=0.05, burn_in=20, iters=10, chains=20, seed=2, z0='prior')
        study = convergence_study(self.problem, n_grid=[10, 20], trials=4, seed=2, biasing=b,
                                  mala_cfg=cfg, lf_m=500, normalizer_m=5000)
        self.assertEqual(len(study.rows), 3 * 2 * 4)
        self.assertEqual(study.modes, {10: 'pooled', 20: 'pooled'})
        self.assertEqual(list(study.rows.columns), ['method', 'n', 'trial', 'estimate'])
        self.assertTrue(study.rows.equals(study.rows.sort_values(['method', 'n', 'trial']).reset_index(drop=True)))
        lf_only = study.rows[study.rows['method'] == 'lf-only']
        np.testing.assert_array_equal(lf_only[lf_only['n'] == 10]['estimate'].to_numpy(),
                                      lf_only[lf_only['n'] == 20]['estimate'].to_numpy())
        self.assertEqual(list(study.summary.columns), ['method', 'n', 'mean', 'rrmse', 'lo95', 'hi95'])
        self.assertAlmostEqual(study.pf_ref, TOY_PF, places=8)

    def test_fresh_budget_enforced(self):
        """Test that fresh chains respect max_fresh_runs"""
        b = BiasingModel(self.problem, 5.0)
        b.estimate_normalizer(1000, seed=2)
        cfg = MalaConfig(tau=0.05, burn_in=2, iters=5, chains=2, seed=2, z0='prior')
        with self.assertRaises(BudgetError):
            convergence_study(self.problem, n_grid=[5], trials=3, seed=2, methods=['lbfis'], biasing=b,
                              mala_cfg=cfg, mode='fresh', max_fresh_runs=2)

    def test_invalid_grid(self):
        """Test that the N grid must increase"""
        with self.assertRaises(ConfigError):
            convergence_study(self.problem, n_grid=[20, 10], trials=2, methods=['mc'])


class TestTuning(unittest.TestCase):
    """Test lengthscale selection"""

    def test_default_grid(self):
        """Test the log-spaced default grid"""
        grid = default_grid()
        self.assertEqual(len(grid), 40)
        self.assertAlmostEqual(grid[0], 0.1)
        self.assertAlmostEqual(grid[-1], 10.0)
        with self.assertRaises(ConfigError):
            default_grid(0.0, 1.0, 5)

    def test_proxy_values(self):
        """Test both proxies on hand-computed inputs"""
        lf = np.array([-1.0, 1.0])
        zhat = lambda ell: float(np.mean(np.exp(-ell * np.tanh(lf))))
        t = np.tanh(1.0)
        self.assertAlmostEqual(variance_proxy_lf(1.0, lf, zhat), np.cosh(t) * np.exp(-t) / 2)
        self.assertAlmostEqual(variance_proxy_hf(1.0, np.array([1.0, -1.0]), lf, zhat), np.cosh(t) * np.exp(t) / 2)

    def test_approaches_agree_for_identical_fidelities(self):
        """Test that LF = HF and L = M on shared points give identical proxies"""
        problem = make_toy_bimodal()
        grid = default_grid(0.5, 10, 12)
        one = select_ell(problem, 'one', grid=grid, m=3000, pilot_l=3000, seed=5)
        two = select_ell(problem, 'two', grid=grid, m=3000, seed=5)
        np.testing.assert_array_equal(one.proxy, two.proxy)
        self.assertEqual(one.ell_star, two.ell_star)

    def test_selected_ell_is_near_optimal(self):
        """Test that the exact variance at l* is within 1.5x of the best grid value"""
        problem = make_toy_bimodal()
        grid = default_grid(0.5, 10, 12)
        sweep = select_ell(problem, 'two', grid=grid, m=50000, seed=3)
        exact = np.array([quadrature_factors(problem, ell)['var_p_form'] for ell in grid])
        at_star = exact[int(np.searchsorted(grid, sweep.ell_star))]
        self.assertLessEqual(at_star, 1.5 * exact.min())

    def test_toy_sweep(self):
        """Test a replicated approach-two sweep on the toy problem"""
        sweep = select_ell(make_toy_bimodal(), 'two', grid=default_grid(0.5, 10, 12), m=4000, seed=1, replicates=3)
        self.assertIn(sweep.ell_star, sweep.grid)
        frame = sweep.to_frame()
        self.assertEqual(list(frame.columns), ['ell', 'proxy', 'lo', 'hi'])
        self.assertTrue(np.all(sweep.lo <= sweep.proxy + 1e-15))
        self.assertTrue(np.all(sweep.proxy <= sweep.hi + 1e-15))
        self.assertEqual(sweep.replicates.shape, (3, 12))

    def test_pipeline_replicate_shares_bank(self):
        """Test that the normalizer after tuning costs no new LF evaluations"""
        problem = make_toy_bimodal()
        select_ell(problem, 'two', grid=[1.0, 2.0], m=3000, seed=6)
        spent = problem.ledger.lf_count
        BiasingModel(problem, 2.0).estimate_normalizer(3000, seed=6)
        self.assertEqual(problem.ledger.lf_count, spent)

    def test_approach_one_costs_pilot_hf(self):
        """Test that approach one spends L HF evaluations and gives a band"""
        problem = make_toy_bimodal()
        sweep = select_ell(problem, 'one', grid=[1.0, 2.0, 4.0], m=2000, pilot_l=300, seed=2)
        self.assertEqual(problem.ledger.hf_count, 300)
        self.assertTrue(np.all(sweep.lo <= sweep.hi))
        with self.assertRaises(ConfigError):
            select_ell(problem, 'one', grid=[1.0], m=10, pilot_l=20)

    def test_ties_go_to_smaller_ell(self):
        """Test that a flat proxy selects the smallest grid value"""
        sweep = select_ell(gaussian_problem(2), 'two', grid=[0.5, 1.0, 2.0], m=200, seed=1)
        self.assertEqual(sweep.ell_star, 0.5)

    def test_approach_one_without_failures(self):
        """Test that approach one with no HF failures raises TuningError"""
        with self.assertRaises(TuningError):
            select_ell(gaussian_problem(2), 'one', grid=[0.5, 1.0], m=200, pilot_l=50, seed=1)


class TestDiagnostics(unittest.TestCase):
    """Test overlap probabilities, bounds and variance terms"""

    def setUp(self):
        """Set up test fixtures"""
        self.problem = make_toy_bimodal()

    def test_identical_fidelities_overlap(self):
        """Test that LF = HF gives P[A_H ∩ A_L^c] = 0"""
        report = diagnostics.overlap_probs(self.problem, 5000, seed=1)
        self.assertEqual(report.p_AH_and_ALc, 0.0)
        self.assertEqual(report.p_AL, report.p_AH)
        self.assertEqual(self.problem.ledger.hf_count, 5000)
        self.assertEqual(diagnostics.classify_overlap(report), diagnostics.FAVOURABLE)

    def test_bounds_and_plugin(self):
        """Test the normalizer bound and KL bound against the plug-in"""
        b = BiasingModel(self.problem, 5.0)
        b.estimate_normalizer(50000, seed=3)
        report = diagnostics.overlap_probs(self.problem, 50000, seed=3)
        _, _, satisfied = diagnostics.normalizer_bound(b, report)
        self.assertTrue(satisfied)
        plugin = diagnostics.kl_plugin(b, report)
        self.assertGreaterEqual(diagnostics.kl_bound(b, report, slack_se=3.0, measure_consistent=True), plugin)
        self.assertAlmostEqual(plugin, quadrature_factors(self.problem, 5.0)['kl'], delta=0.05)

    def test_kl_needs_failures(self):
        """Test that the KL bound is undefined without HF failures"""
        b = BiasingModel(self.problem, 1.0)
        b.zhat = 1.0
        with self.assertRaises(NumericalError):
            diagnostics.kl_bound(b, overlap(0.1, 0.0, 0.0))

    def test_variance_decomposition(self):
        """Test the three product terms and the large-M forms"""
        rng = make_rng(2)
        w, y = rng.uniform(0.5, 1.5, 1000), rng.uniform(0.0, 2.0, 50)
        terms = diagnostics.variance_decomposition(w, y)
        self.assertAlmostEqual(terms['total'], terms['term_cross'] + terms['term_normalizer'] + terms['term_estimator'])
        self.assertAlmostEqual(terms['p_form'], terms['large_m_approx'] * 49 / 50)
        np.testing.assert_allclose(diagnostics.product_variance(2.0, 0.1, 3.0, 0.2), (0.02, 0.9, 0.8))

    def test_product_variance_matches_replicates(self):
        """Test the decomposition against the spread of independent-normalizer replicates"""
        b = BiasingModel(self.problem, 5.0)
        b.estimate_normalizer(2000, seed=14)
        cfg = MalaConfig(tau=0.05, burn_in=200, iters=50, chains=400, seed=14, z0='resample', resample_pool=5000)
        study = convergence_study(self.problem, n_grid=[50], trials=400, seed=14, methods=['lbfis'], biasing=b,
                                  mala_cfg=cfg, mode='pooled', fresh_normalizer=True, normalizer_m=200)
        empirical = float(np.var(study.rows['estimate'].to_numpy(), ddof=1))

        pool = mala.run(b, cfg)
        y = np.where(pool.lf_values < 0, np.exp(5.0 * np.tanh(pool.lf_values)), 0.0)
        w = normalizer_terms(draw_lf_bank(self.problem, 100000, seed=15, cache=False), 5.0)
        terms = diagnostics.variance_decomposition(w, y, n=50, m=200)
        self.assertGreater(terms['term_normalizer'], 0.05 * terms['total'])
        self.assertLess(abs(empirical / terms['total'] - 1.0), 0.3)

    def test_normalizer_decreases_with_ell(self):
        """Test that Z_M is non-increasing in l on the toy bank for l up to 4"""
        bank = draw_lf_bank(self.problem, 20000, seed=16)
        grid = np.linspace(0.1, 4.0, 20)
        zhat = np.array([np.mean(normalizer_terms(bank, ell)) for ell in grid])
        self.assertTrue(np.all(np.diff(zhat) <= 0))
        exact = np.array([quadrature_factors(self.problem, ell)['Z'] for ell in grid])
        self.assertTrue(np.all(np.diff(exact) <= 0))

    def test_normalizer_monotone_for_constant_limit_state(self):
        """Test Z_M = exp(-l tanh c) for constant h = c, decreasing for c > 0 and increasing for c < 0"""
        grid = np.array([0.5, 1.0, 2.0, 4.0])
        for c in (0.7, -0.7):
            with self.subTest(c=c):
                problem = gaussian_problem(2, lf_value=c)
                zhat = np.array([BiasingModel(problem, ell).estimate_normalizer(100, seed=1) for ell in grid])
                np.testing.assert_allclose(zhat, np.exp(-grid * np.tanh(c)), rtol=1e-12)
                self.assertTrue(np.all(np.sign(np.diff(zhat)) == -np.sign(c)))

    def test_variance_bound_dominates(self):
        """Test the variance bound against the quadrature variance"""
        b = BiasingModel(self.problem, 3.0)
        exact = quadrature_factors(self.problem, 3.0)
        report = overlap(exact['p_AL'], exact['pf'], 0.0)
        self.assertGreaterEqual(diagnostics.variance_bound(b, report, 10), exact['var_p_form'] / 10)

    def test_classify_overlap(self):
        """Test the four overlap cases"""
        self.assertEqual(diagnostics.classify_overlap(overlap(0.1, 0.1, 0.1)), diagnostics.NO_OVERLAP)
        self.assertEqual(diagnostics.classify_overlap(overlap(0.8, 0.1, 0.0)), diagnostics.LF_OVERCOVERS)
        self.assertEqual(diagnostics.classify_overlap(overlap(0.01, 0.1, 0.06)), diagnostics.LF_MISSES)
        self.assertEqual(diagnostics.classify_overlap(overlap(0.12, 0.1, 0.01)), diagnostics.FAVOURABLE)


class TestQuadrature(unittest.TestCase):
    """Test the 1D quadrature oracles on the toy problem"""

    def setUp(self):
        """Set up test fixtures"""
        self.problem = make_toy_bimodal()

    def test_failure_probability(self):
        """Test quadrature P_f against the closed form"""
        self.assertAlmostEqual(OneDimQuadrature(self.problem).failure_probability(), TOY_PF, places=10)

    def test_variance_forms_agree(self):
        """Test that the direct and p-form variances agree"""
        for ell in (2.0, 5.0, 8.0):
            f = quadrature_factors(self.problem, ell)
            self.assertAlmostEqual(f['var_direct'], f['var_p_form'], delta=1e-8)
            self.assertAlmostEqual(f['q_integral'], 1.0, delta=1e-9)

    def test_bounds_hold_strictly(self):
        """Test the normalizer and KL bounds for l = 1..10"""
        for ell in range(1, 11):
            f = quadrature_factors(self.problem, float(ell))
            b = BiasingModel(self.problem, float(ell))
            b.zhat = f['Z']
            report = OverlapReport(p_AL=f['p_AL'], p_AH=f['pf'], p_AH_and_ALc=0.0, se_AL=0.0, se_AH=0.0,
                                   se_AH_and_ALc=0.0, n_hf_used=0, n_lf_used=0)
            _, bound, satisfied = diagnostics.normalizer_bound(b, report)
            self.assertTrue(satisfied)
            self.assertLess(f['Z'], bound)
            self.assertLess(f['kl'], diagnostics.kl_bound(b, report))
            self.assertGreaterEqual(f['kl'], 0.0)


class TestRunConfig(unittest.TestCase):
    """Test strict run-config loading"""

    def test_shipped_configs_load(self):
        """Test that every shipped config passes validation"""
        paths = sorted(glob.glob(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs', '*.json')))
        self.assertEqual(len(paths), 6)
        for path in paths:
            cfg = load_run_config(path)
            self.assertIsInstance(cfg.mala_config(), MalaConfig)

    def test_unknown_keys(self):
        """Test that unknown keys name their field"""
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'seed': 1, 'problem': {'name': 'toy'}, 'colour': 'red'})
        self.assertEqual(ctx.exception.field, 'colour')
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'seed': 1, 'problem': {'name': 'toy'}, 'mala': {'taux': 1}})
        self.assertEqual(ctx.exception.field, 'mala.taux')

    def test_wrong_types_and_ranges(self):
        """Test type and bound checks"""
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'seed': 1, 'problem': {'name': 'toy'}, 'mala': {'iters': '10'}})
        self.assertEqual(ctx.exception.field, 'mala.iters')
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'seed': 1, 'problem': {'name': 'toy'}, 'estimator': {'n_grid': [10, 5]}})
        self.assertEqual(ctx.exception.field, 'estimator.n_grid')
        with self.assertRaises(ConfigError):
            config_from_dict({'seed': 1, 'problem': {'name': 'toy'}, 'ell': {'value': None, 'tune': False}})

    def test_seed_is_mandatory(self):
        """Test that a config without a seed is refused"""
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({'problem': {'name': 'toy'}})
        self.assertEqual(ctx.exception.field, 'seed')

    def test_syntax_error_line(self):
        """Test that JSON syntax errors report the line"""
        with self.assertRaises(ConfigError) as ctx:
            parse_run_config('{\n  "seed": 1,\n  "problem": }\n')
        self.assertEqual(ctx.exception.line, 3)

    def test_override(self):
        """Test dotted overrides with validation"""
        cfg = config_from_dict({'seed': 1, 'problem': {'name': 'toy'}})
        self.assertEqual(cfg.override('mala.tau', 0.1).mala_config().tau, 0.1)
        self.assertEqual(cfg.mala_config().seed, 1)
        with self.assertRaises(ConfigError):
            cfg.override('mala.tau', -1.0)
        with self.assertRaises(ConfigError):
            cfg.override('mala.speed', 1)
        self.assertEqual(len(cfg.ell_grid()), 40)


class TestResultsWriter(unittest.TestCase):
    """Test CSV and JSON emission"""

    def test_make_serializable(self):
        """Test numpy and non-finite conversions"""
        out = make_serializable({'a': np.float64(np.nan), 'b': np.array([1, 2]), 'c': np.bool_(True),
                                 'd': (np.inf, -np.inf), 3: np.int64(4)})
        self.assertEqual(out, {'a': None, 'b': [1, 2], 'c': True, 'd': ['inf', '-inf'], '3': 4})
        json.dumps(out)

    def test_csv_layout(self):
        """Test the header, line endings and sample columns"""
        with tempfile.TemporaryDirectory() as tmp:
            writer = ResultsWriter(tmp)
            path = writer.write_samples('s.csv', np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]]),
                                        lf_values=np.arange(4.0), chains=2)
            with open(path, 'rb') as f:
                raw = f.read()
            self.assertNotIn(b'\r', raw)
            self.assertTrue(raw.startswith(b'chain,step,z1,z2,h_lf\n'))
            frame = pd.read_csv(path)
            self.assertEqual(frame['chain'].tolist(), [0, 0, 1, 1])
            self.assertEqual(frame['step'].tolist(), [0, 1, 0, 1])


class TestEngine(unittest.TestCase):
    """Test the engine pipelines end to end on the toy problem"""

    def setUp(self):
        """Set up test fixtures"""
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def test_estimate(self):
        """Test the estimate report, files and evaluation ledger"""
        engine = LBFISEngine(toy_run_config(self.out), reference_dir=self.out)
        result = engine.run_estimate()
        est, budget = result['estimate'], result['budget']
        self.assertEqual(est['n_hf'], 50)
        self.assertTrue(budget['within_budget'])
        self.assertLessEqual(budget['lf_count'], 2000 + 20 * 30 + 20)
        self.assertAlmostEqual(est['pf_ref'], TOY_PF, places=8)
        self.assertLess(abs(est['value'] - TOY_PF) / TOY_PF, 0.5)
        frame = pd.read_csv(os.path.join(self.out, 'samples.csv'))
        self.assertEqual(len(frame), 50)
        with open(os.path.join(self.out, 'estimate.json')) as f:
            self.assertEqual(json.load(f)['command'], 'estimate')

    def test_estimate_with_tuning(self):
        """Test that tuning by approach one adds exactly L HF evaluations"""
        cfg = toy_run_config(self.out, ell={'value': None, 'tune': True, 'method': 'one'})
        result = LBFISEngine(cfg, reference_dir=self.out).run_estimate()
        self.assertEqual(result['budget']['hf_count'], 50 + 50)
        self.assertTrue(result['budget']['within_budget'])
        self.assertEqual(result['tuning']['method'], 'one')

    def test_outputs_independent_of_workers(self):
        """Test byte-identical CSVs for one and three workers"""
        contents = []
        for workers in (1, 3):
            out = os.path.join(self.out, f'w{workers}')
            cfg = toy_run_config(out, mala={'chain_batch': 6})
            cfg.override('workers', workers)
            LBFISEngine(cfg, reference_dir=self.out).run_estimate()
            with open(os.path.join(out, 'samples.csv'), 'rb') as f:
                contents.append(f.read())
        self.assertEqual(contents[0], contents[1])

    def test_convergence(self):
        """Test the convergence files"""
        result = LBFISEngine(toy_run_config(self.out), reference_dir=self.out).run_convergence()
        rows = pd.read_csv(os.path.join(self.out, 'convergence_rows.csv'))
        summary = pd.read_csv(os.path.join(self.out, 'convergence_summary.csv'))
        self.assertEqual(len(rows), 3 * 2 * 4)
        self.assertEqual(len(summary), 3 * 2)
        self.assertEqual(result['modes'], {'10': 'pooled', '20': 'pooled'})

    def test_tune(self):
        """Test the sweep CSV"""
        LBFISEngine(toy_run_config(self.out), reference_dir=self.out).run_tune()
        sweep = pd.read_csv(os.path.join(self.out, 'ell_sweep.csv'))
        self.assertEqual(len(sweep), 8)
        self.assertEqual(list(sweep.columns), ['ell', 'proxy', 'lo', 'hi'])

    def test_diagnose(self):
        """Test the diagnose report for identical fidelities"""
        result = LBFISEngine(toy_run_config(self.out), reference_dir=self.out).run_diagnose()
        self.assertEqual(result['overlap']['p_AH_and_ALc'], 0.0)
        self.assertIn('quadrature', result)
        self.assertLess(result['quadrature']['Z'], result['quadrature']['normalizer_bound'])
        self.assertIsNotNone(result['kl']['plugin'])

    def test_sample(self):
        """Test the sample files and histogram"""
        result = LBFISEngine(toy_run_config(self.out), reference_dir=self.out).run_sample()
        self.assertEqual(int(np.sum(result['histogram']['counts'])), 200)
        frame = pd.read_csv(os.path.join(self.out, 'samples.csv'))
        self.assertEqual(list(frame.columns), ['chain', 'step', 'z1', 'h_lf'])

    def test_oracle(self):
        """Test that the oracle freezes a reference file"""
        engine = LBFISEngine(toy_run_config(self.out), reference_dir=self.out)
        record = engine.run_oracle(n=2000)
        with open(os.path.join(self.out, 'toy.json')) as f:
            frozen = json.load(f)
        self.assertEqual(frozen['pf'], record['pf'])
        self.assertEqual(frozen['n'], 2000)


class TestCommandLine(unittest.TestCase):
    """Test exit codes of the command-line entry point"""

    def test_config_error_exit_code(self):
        """Test that an invalid config exits with code 2"""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'bad.json')
            with open(path, 'w') as f:
                f.write('{"seed": 1, "problem": {"name": "toy"}, "bogus": 1}')
            self.assertEqual(cli.main(['estimate', '--config', path, '--output-dir', tmp]), 2)

    def test_numerical_error_exit_code(self):
        """Test that a chain started outside the support exits with code 3"""
        with tempfile.TemporaryDirectory() as tmp:
            code = cli.main(['sample', '--problem', 'toy', '--ell', '5', '--z0', '2.0', '--iters', '2',
                             '--burn-in', '0', '--chains', '2', '--output-dir', tmp])
            self.assertEqual(code, 3)

    def test_oracle_without_failures_warns(self):
        """Test that an oracle run with no HF failures warns instead of printing a usable reference"""
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertLogs('main', level='WARNING') as logs:
                code = cli.main(['oracle', '--problem', 'borehole', '--n', '500', '--output-dir', tmp,
                                 '--reference-dir', tmp])
            self.assertEqual(code, 0)
            with open(os.path.join(tmp, 'borehole.json')) as f:
                self.assertEqual(json.load(f)['pf'], 0.0)
        self.assertIn('no HF failures', '\n'.join(logs.output))

    def test_sample_command(self):
        """Test a successful sample run from flags"""
        with tempfile.TemporaryDirectory() as tmp:
            code = cli.main(['sample', '--problem', 'toy', '--ell', '5', '--z0', 'prior', '--tau', '0.05',
                             '--iters', '5', '--burn-in', '5', '--chains', '4', '--output-dir', tmp])
            self.assertEqual(code, 0)
            self.assertTrue(os.path.exists(os.path.join(tmp, 'samples.csv')))


@unittest.skipUnless(SLOW, "set LBFIS_SLOW_TESTS=1 to run statistical acceptance tests")
class TestAcceptance(unittest.TestCase):
    """Long statistical acceptance runs"""

    def test_mala_standard_gaussian(self):
        """Test moments and KS statistic of a 10D standard Gaussian chain"""
        b = BiasingModel(gaussian_problem(10), 0.0)
        out = mala.run(b, MalaConfig(tau=0.1, burn_in=200, iters=1000, chains=100, seed=10))
        self.assertEqual(out.n_samples, 100000)
        self.assertLess(np.abs(out.samples.mean(axis=0)).max(), 0.05)
        variances = out.samples.var(axis=0)
        self.assertTrue(np.all((variances >= 0.95) & (variances <= 1.05)))
        thinned = out.samples.reshape(100, 1000, 10)[:, ::50, :].ravel()
        statistic = stats.kstest(thinned, 'norm').statistic
        self.assertLess(statistic, 1.63 / np.sqrt(len(thinned)))

    def test_toy_unbiasedness(self):
        """Test that fresh-chain replicates average to the quadrature P_f at l = 2, 5 and 8"""
        for ell in (2.0, 5.0, 8.0):
            with self.subTest(ell=ell):
                problem = make_toy_bimodal()
                b = BiasingModel(problem, ell)
                b.estimate_normalizer(10000, seed=11)
                cfg = MalaConfig(tau=0.05, burn_in=200, iters=10, chains=10, seed=11, z0='prior')
                study = convergence_study(problem, n_grid=[100], trials=500, seed=11, methods=['lbfis'],
                                          biasing=b, mala_cfg=cfg, mode='fresh', max_fresh_runs=500,
                                          fresh_normalizer=True, normalizer_m=10000)
                values = study.rows['estimate'].to_numpy()
                se = values.std(ddof=1) / np.sqrt(len(values))
                self.assertLess(abs(values.mean() - TOY_PF), 3 * se)

    def test_synthetic1000_rrmse(self):
        """Test the shipped 1000D configuration reaches rRMSE <= 0.35 at N = 100 over 100 trials"""
        root = os.path.dirname(os.path.abspath(__file__))
        run_cfg = load_run_config(os.path.join(root, 'configs', 'synthetic1000.json'))
        problem = make_synthetic1000()
        b = BiasingModel(problem, run_cfg.fixed_ell)
        b.estimate_normalizer(200000, seed=run_cfg.seed)
        study = convergence_study(problem, n_grid=[100], trials=100, seed=run_cfg.seed, methods=['lbfis'],
                                  biasing=b, mala_cfg=run_cfg.mala_config(), normalizer_m=200000,
                                  mode='pooled')
        self.assertAlmostEqual(study.pf_ref, synthetic_failure_probability(), places=12)
        row = study.summary.iloc[0]
        self.assertLessEqual(row['rrmse'], 0.35)
        self.assertEqual(problem.ledger.hf_count, 100 * 100)

    def test_heat_pipeline(self):
        """Test an end-to-end L-BF-IS run on the 400D heat problem"""
        with tempfile.TemporaryDirectory() as tmp:
            cfg = config_from_dict({
                'seed': 3,
                'problem': {'name': 'heat'},
                'output_dir': tmp,
                'mala': {'tau': 0.005, 'burn_in': 50, 'iters': 20, 'chains': 5, 'z0': 'prior'},
                'estimator': {'M': 2000, 'N': 50},
                'ell': {'value': 2.0, 'tune': False},
            })
            result = LBFISEngine(cfg, reference_dir=tmp).run_estimate()
        self.assertTrue(np.isfinite(result['estimate']['value']))
        acceptance = result['chains']['mean_acceptance']
        self.assertGreater(acceptance, 0.05)
        self.assertLess(acceptance, 0.95)
        self.assertTrue(result['budget']['within_budget'])


def run_tests():
    """Run all tests"""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()

    for case in (TestRandomStreams, TestErrors, TestReferenceDensity, TestProblemSpec, TestBenchmarks,
                 TestHeatBenchmark, TestBiasingModel, TestMala, TestEstimators, TestTuning,
                 TestDiagnostics, TestQuadrature, TestRunConfig, TestResultsWriter, TestEngine,
                 TestCommandLine, TestAcceptance):
        suite.addTests(loader.loadTestsFromTestCase(case))

    runner = unittest.TextTestRunner(verbosity=2)
    return runner.run(suite)


if __name__ == '__main__':
    print("\n" + "="*70)
    print("L-BF-IS Test Suite")
    print("="*70 + "\n")

    result = run_tests()

    print("\n" + "="*70)
    print("Test Summary")
    print("="*70)
    print(f"Tests run: {result.testsRun}")
    print(f"Successes: {result.testsRun - len(result.failures) - len(result.errors) - len(result.skipped)}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")
    print(f"Skipped: {len(result.skipped)}")
    print("="*70 + "\n")
