"""
Results Writer
CSV and JSON emission for estimates, studies, sweeps and chain samples
"""

import json
import logging
import os
from typing import Dict, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def make_serializable(obj):
    """Convert numpy types to Python native types for JSON serialization"""
    if isinstance(obj, dict):
        return {str(k): make_serializable(v) for k, v in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [make_serializable(item) for item in obj]
    elif isinstance(obj, np.ndarray):
        return make_serializable(obj.tolist())
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, (np.integer, np.floating)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ('inf' if obj > 0 else '-inf')
    return obj


class ResultsWriter:
    """Writes run outputs into one directory"""

    def __init__(self, output_dir: str, float_format: str = '%.17g'):
        self.output_dir = output_dir
        self.float_format = float_format
        os.makedirs(output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def write_json(self, name: str, data: Dict) -> str:
        path = self.path(name)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(make_serializable(data), f, indent=2, sort_keys=False)
            f.write('\n')
        logger.info(f"Wrote {path}")
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> str:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format=self.float_format, lineterminator='\n', encoding='utf-8')
        logger.info(f"Wrote {path} ({len(frame)} rows)")
        return path

    def write_samples(self, name: str, samples: np.ndarray, lf_values: Optional[np.ndarray] = None,
                      chains: Optional[int] = None) -> str:
        """Chain samples as columns z1..zD (plus chain, step and h_lf when known)"""
        frame = pd.DataFrame(samples, columns=[f"z{i + 1}" for i in range(samples.shape[1])])
        if chains:
            per_chain = len(samples) // chains
            frame.insert(0, 'step', np.tile(np.arange(per_chain), chains))
            frame.insert(0, 'chain', np.repeat(np.arange(chains), per_chain))
        if lf_values is not None:
            frame['h_lf'] = lf_values
        return self.write_csv(name, frame)
