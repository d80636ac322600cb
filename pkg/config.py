"""
Configuration file for L-BF-IS
Default settings; a run config JSON overrides any of these per section
"""

# ============================================================================
# PROBLEM CONFIGURATION
# ============================================================================

PROBLEM_CONFIG = {
    # Out-of-domain penalty coefficient c in c * ||z||^2
    'penalty_coeff': 100.0,

    # Catalog names accepted by the CLI
    'names': ['toy', 'borehole', 'borehole-low', 'synthetic1000', 'beam', 'heat'],
}

# ============================================================================
# BENCHMARK CONFIGURATION
# ============================================================================

BENCHMARK_CONFIG = {
    'borehole': {'hf_threshold': 800.0, 'lf_threshold': 1000.0},
    'borehole-low': {'hf_threshold': 900.0, 'lf_threshold': 1100.0},
    'synthetic1000': {'hf_threshold': 20.0, 'lf_threshold': 8.0, 'dim': 1000},
    'beam': {'hf_threshold': 4.04, 'lf_threshold': 3.18},
}

HEAT_CONFIG = {
    'grid_hf': 61,
    'grid_lf': 17,
    'dprime': 100,
    'kbar': 3.0,
    'hf_threshold': 0.022,
    'lf_threshold': 0.019,
    'residual_tol': 1e-10,
}

# ============================================================================
# SAMPLER CONFIGURATION
# ============================================================================

MALA_CONFIG = {
    'tau': 0.05,
    'burn_in': 200,
    'iters': 1000,
    'chains': 1,
    'z0': 'center',          # 'center', 'prior', 'resample' or an explicit point
    'resample_pool': 10000,  # p-draws behind z0 = 'resample'
    'keep_trace': False,
    'chain_batch': 128,      # chains advanced together in one batch
    'block_size': 256,       # random draws generated per chain per refill
}

# ============================================================================
# ESTIMATOR CONFIGURATION
# ============================================================================

ESTIMATOR_CONFIG = {
    'M': 1_000_000,          # normalizer draws
    'N': 100,                # HF evaluations of the estimator
    'L': 100,                # approach-one pilot HF evaluations
    'lf_M': 1_000_000,       # LF-only baseline draws
    'trials': 1000,
    'n_grid': [10, 21, 46, 100, 215, 464, 1000, 2154, 4641, 10000],
    'methods': ['mc', 'lf-only', 'lbfis'],
    'mode': 'auto',          # 'pooled', 'fresh' or 'auto'
    'max_fresh_runs': 10000,
    'fresh_normalizer': False,
    'oracle_n': 10_000_000,
}

ELL_CONFIG = {
    'value': None,           # fixed lengthscale; None means tune
    'tune': True,
    'method': 'two',
}

# ============================================================================
# TUNING CONFIGURATION
# ============================================================================

TUNING_CONFIG = {
    'grid_min': 0.1,
    'grid_max': 10.0,
    'grid_points': 40,
    'grid': None,            # explicit grid overrides min/max/points
    'replicates': 10,        # sweeps for the tune-ell command
    'pipeline_replicates': 1,
    'uncertainty_threshold': 0.5,
}

# ============================================================================
# DIAGNOSTICS CONFIGURATION
# ============================================================================

DIAGNOSTICS_CONFIG = {
    'n_joint': 10000,
    'slack_se': 3.0,
    'large_al': 0.5,
    'large_miss': 0.5,
}

# ============================================================================
# DATA CONFIGURATION
# ============================================================================

DATA_CONFIG = {
    'output_dir': './output',
    'reference_dir': './reference',
    'log_dir': './logs',
    'float_format': '%.17g',
}

# ============================================================================
# PARALLEL CONFIGURATION
# ============================================================================

PARALLEL_CONFIG = {
    'workers': 1,
}

# ============================================================================
# LOGGING CONFIGURATION
# ============================================================================

LOGGING_CONFIG = {
    'level': 'INFO',
    'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    'file': './logs/lbfis.log',
    'max_file_size': 10 * 1024 * 1024,  # 10 MB
    'backup_count': 5
}
