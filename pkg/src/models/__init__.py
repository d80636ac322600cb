"""
Benchmark problems
Catalog of named ProblemSpec constructors selectable from a run config
"""

import logging
from typing import Callable, Dict, Optional

from core.problem import ProblemSpec
from models.beam import make_beam
from models.borehole import make_borehole, make_borehole_low
from models.heat import make_heat
from models.synthetic import make_synthetic1000
from models.toy import make_toy_bimodal
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

BENCHMARKS: Dict[str, Callable[..., ProblemSpec]] = {
    'toy': make_toy_bimodal,
    'borehole': make_borehole,
    'borehole-low': make_borehole_low,
    'synthetic1000': make_synthetic1000,
    'beam': make_beam,
    'heat': make_heat,
}


def make_problem(name: str, params: Optional[Dict] = None) -> ProblemSpec:
    """Build a benchmark by catalog name with keyword overrides"""
    if name not in BENCHMARKS:
        raise ConfigError(f"unknown problem '{name}', expected one of {sorted(BENCHMARKS)}",
                          field='problem.name')
    try:
        problem = BENCHMARKS[name](**(params or {}))
    except TypeError as e:
        raise ConfigError(f"invalid parameters for problem '{name}': {e}", field='problem.params')
    logger.info(f"Built problem '{name}' (D={problem.dim})")
    return problem
