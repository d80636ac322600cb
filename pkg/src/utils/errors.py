"""
Exception hierarchy for L-BF-IS
The CLI maps ConfigError to exit code 2 and NumericalError to exit code 3
"""

from typing import Optional

import numpy as np


class LBFISError(Exception):
    """Base class for all toolkit errors"""


class ConfigError(LBFISError):
    """Invalid run configuration or invalid call arguments"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        context = []
        if field is not None:
            context.append(f"field '{field}'")
        if line is not None:
            context.append(f"line {line}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class BudgetError(ConfigError):
    """A sample or evaluation budget cannot be honoured"""


class NumericalError(LBFISError):
    """A numerical computation failed (NaN values, solver residuals, dead chains)"""

    def __init__(self, message: str, z: Optional[np.ndarray] = None, residual: Optional[float] = None):
        self.z = None if z is None else np.array(z, dtype=float)
        self.residual = residual
        if self.z is not None:
            message = f"{message} at z={np.array2string(self.z, precision=6, threshold=12)}"
        if residual is not None:
            message = f"{message} (relative residual {residual:.3e})"
        super().__init__(message)


class DomainError(NumericalError):
    """Score requested on or outside the boundary of a uniform factor"""


class TuningError(NumericalError):
    """Lengthscale selection cannot produce a meaningful value"""


class NormalizerNotEstimatedError(LBFISError):
    """Weight or estimator requested before the normalizer was estimated"""

    def __init__(self):
        super().__init__("normalizer not estimated")
