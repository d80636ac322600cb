"""
Run Configuration
Loads a JSON run config, merges it over the defaults in config.py and checks
it strictly: unknown keys, wrong types and out-of-range budgets are errors
that name the offending field.
"""

import copy
import json
import logging
import numbers
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

import config as defaults
from sampling.mala import MalaConfig
from estimation.tuning import METHOD_ONE, METHOD_TWO, default_grid
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = {
    'mala': defaults.MALA_CONFIG,
    'estimator': defaults.ESTIMATOR_CONFIG,
    'ell': defaults.ELL_CONFIG,
    'tuning': defaults.TUNING_CONFIG,
    'diagnostics': defaults.DIAGNOSTICS_CONFIG,
}
TOP_LEVEL = {'problem', 'seed', 'output_dir', 'workers'} | set(SECTIONS)
PROBLEM_KEYS = {'name', 'params'}

# field -> (type check, lower bound, strict lower bound)
_INT = 'int'
_NUM = 'number'
_RULES = {
    'mala.tau': (_NUM, 0, True),
    'mala.burn_in': (_INT, 0, False),
    'mala.iters': (_INT, 1, False),
    'mala.chains': (_INT, 1, False),
    'mala.chain_batch': (_INT, 1, False),
    'mala.block_size': (_INT, 1, False),
    'mala.resample_pool': (_INT, 1, False),
    'estimator.M': (_INT, 1, False),
    'estimator.N': (_INT, 1, False),
    'estimator.L': (_INT, 1, False),
    'estimator.lf_M': (_INT, 1, False),
    'estimator.trials': (_INT, 1, False),
    'estimator.max_fresh_runs': (_INT, 1, False),
    'estimator.oracle_n': (_INT, 1, False),
    'tuning.grid_min': (_NUM, 0, True),
    'tuning.grid_max': (_NUM, 0, True),
    'tuning.grid_points': (_INT, 1, False),
    'tuning.replicates': (_INT, 1, False),
    'tuning.pipeline_replicates': (_INT, 1, False),
    'tuning.uncertainty_threshold': (_NUM, 0, True),
    'diagnostics.n_joint': (_INT, 1, False),
    'diagnostics.slack_se': (_NUM, 0, False),
    'diagnostics.large_al': (_NUM, 0, False),
    'diagnostics.large_miss': (_NUM, 0, False),
}


def _is_int(value) -> bool:
    return isinstance(value, numbers.Integral) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _check_value(path: str, value: Any):
    kind, bound, strict = _RULES[path]
    if kind == _INT and not _is_int(value):
        raise ConfigError(f"expected an integer, got {value!r}", field=path)
    if kind == _NUM and not _is_number(value):
        raise ConfigError(f"expected a number, got {value!r}", field=path)
    if value < bound or (strict and value == bound):
        relation = '>' if strict else '>='
        raise ConfigError(f"must be {relation} {bound}, got {value}", field=path)


def _merge_section(name: str, given: Any) -> Dict:
    if not isinstance(given, dict):
        raise ConfigError("section must be an object", field=name)
    merged = copy.deepcopy(SECTIONS[name])
    for key, value in given.items():
        path = f"{name}.{key}"
        if key not in merged:
            raise ConfigError("unknown key", field=path)
        if path in _RULES:
            _check_value(path, value)
        merged[key] = value
    return merged


@dataclass
class RunConfig:
    """Validated run configuration with every section filled from the defaults"""
    seed: int
    problem: Dict
    mala: Dict
    estimator: Dict
    ell: Dict
    tuning: Dict
    diagnostics: Dict
    output_dir: str = defaults.DATA_CONFIG['output_dir']
    workers: int = defaults.PARALLEL_CONFIG['workers']
    source: Optional[str] = None

    def __post_init__(self):
        self._validate()

    def _validate(self):
        if not _is_int(self.seed) or self.seed < 0:
            raise ConfigError(f"must be a non-negative integer, got {self.seed!r}", field='seed')
        grid = self.estimator['n_grid']
        if not isinstance(grid, list) or not grid or not all(_is_int(n) and n >= 1 for n in grid) \
                or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("must be a nonempty strictly increasing list of positive integers",
                              field='estimator.n_grid')
        if self.estimator['mode'] not in ('auto', 'pooled', 'fresh'):
            raise ConfigError(f"unknown mode '{self.estimator['mode']}'", field='estimator.mode')
        if self.ell['method'] not in (METHOD_ONE, METHOD_TWO):
            raise ConfigError(f"must be '{METHOD_ONE}' or '{METHOD_TWO}'", field='ell.method')
        value = self.ell['value']
        if value is not None and (not _is_number(value) or value < 0):
            raise ConfigError(f"must be a number >= 0 or null, got {value!r}", field='ell.value')
        if value is None and not self.ell['tune']:
            raise ConfigError("either give ell.value or set ell.tune", field='ell')
        if self.tuning['grid_max'] < self.tuning['grid_min']:
            raise ConfigError("grid_max must be >= grid_min", field='tuning.grid_max')
        z0 = self.mala['z0']
        if not (isinstance(z0, str) or (isinstance(z0, list) and all(_is_number(v) for v in z0))):
            raise ConfigError(f"must be 'center', 'prior', 'resample' or a list of numbers, got {z0!r}",
                              field='mala.z0')
        if not _is_int(self.workers) or self.workers < 1:
            raise ConfigError(f"must be an integer >= 1, got {self.workers!r}", field='workers')

    @property
    def problem_name(self) -> str:
        return self.problem['name']

    @property
    def problem_params(self) -> Dict:
        return self.problem.get('params', {})

    @property
    def fixed_ell(self) -> Optional[float]:
        """The configured lengthscale, or None when it has to be tuned"""
        return None if self.ell['value'] is None else float(self.ell['value'])

    def mala_config(self) -> MalaConfig:
        m = self.mala
        return MalaConfig(tau=float(m['tau']), burn_in=m['burn_in'], iters=m['iters'], chains=m['chains'],
                          seed=self.seed, z0=m['z0'], keep_trace=m['keep_trace'],
                          chain_batch=m['chain_batch'], block_size=m['block_size'],
                          resample_pool=m['resample_pool'])

    def ell_grid(self) -> np.ndarray:
        t = self.tuning
        if t['grid'] is not None:
            return np.asarray(t['grid'], dtype=float)
        return default_grid(t['grid_min'], t['grid_max'], t['grid_points'])

    def override(self, path: str, value: Any) -> 'RunConfig':
        """Set one dotted field (CLI flags), re-running validation"""
        if value is None:
            return self
        if path in ('seed', 'output_dir', 'workers'):
            setattr(self, path, value)
        elif path == 'problem.name':
            self.problem = {'name': value, 'params': {}} if value != self.problem_name else self.problem
        else:
            section, _, key = path.partition('.')
            if section not in SECTIONS or key not in SECTIONS[section]:
                raise ConfigError("unknown key", field=path)
            if path in _RULES:
                _check_value(path, value)
            getattr(self, section)[key] = value
        self._validate()
        return self

    def to_dict(self) -> Dict:
        return {
            'seed': self.seed,
            'problem': self.problem,
            'mala': self.mala,
            'estimator': self.estimator,
            'ell': self.ell,
            'tuning': self.tuning,
            'diagnostics': self.diagnostics,
            'output_dir': self.output_dir,
            'workers': self.workers,
        }


def config_from_dict(data: Any, source: Optional[str] = None) -> RunConfig:
    """Check a parsed config object and fill every section from the defaults"""
    if not isinstance(data, dict):
        raise ConfigError("run config must be a JSON object")
    for key in data:
        if key not in TOP_LEVEL:
            raise ConfigError("unknown key", field=key)
    if 'seed' not in data:
        raise ConfigError("seed is mandatory", field='seed')
    if not _is_int(data['seed']) or data['seed'] < 0:
        raise ConfigError(f"must be a non-negative integer, got {data['seed']!r}", field='seed')

    problem = data.get('problem')
    if not isinstance(problem, dict) or 'name' not in problem:
        raise ConfigError("problem section with a name is required", field='problem')
    for key in problem:
        if key not in PROBLEM_KEYS:
            raise ConfigError("unknown key", field=f"problem.{key}")
    if not isinstance(problem.get('params', {}), dict):
        raise ConfigError("must be an object", field='problem.params')

    sections = {name: _merge_section(name, data.get(name, {})) for name in SECTIONS}
    return RunConfig(
        seed=int(data['seed']),
        problem={'name': problem['name'], 'params': dict(problem.get('params', {}))},
        output_dir=data.get('output_dir', defaults.DATA_CONFIG['output_dir']),
        workers=data.get('workers', defaults.PARALLEL_CONFIG['workers']),
        source=source,
        **sections,
    )


def parse_run_config(text: str, source: Optional[str] = None) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", line=e.lineno)
    return config_from_dict(data, source)


def load_run_config(path: str) -> RunConfig:
    """Read and check a run config file"""
    try:
        with open(path, encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read run config {path}: {e}")
    cfg = parse_run_config(text, source=path)
    logger.info(f"Loaded run config {path} (problem '{cfg.problem_name}', seed {cfg.seed})")
    return cfg
