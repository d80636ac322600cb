"""
Limit-State Problems
Paired low-/high-fidelity limit-state functions on a reference density, with
the out-of-domain penalty and an evaluation ledger.

Failure is the event h(z) < 0 for both fidelities; thresholds are part of h.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from core.density import ReferenceDensity
from utils.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

# Batched callables: (n, D) -> (n,) for values, (n, D) -> (n, D) for gradients
BatchFn = Callable[[np.ndarray], np.ndarray]
BatchValueGradFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


class EvalBudgetLedger:
    """Thread-safe counters of LF and HF evaluations"""

    def __init__(self):
        self._lock = threading.Lock()
        self._lf = 0
        self._hf = 0

    @property
    def lf_count(self) -> int:
        return self._lf

    @property
    def hf_count(self) -> int:
        return self._hf

    def add_lf(self, n: int = 1):
        with self._lock:
            self._lf += int(n)

    def add_hf(self, n: int = 1):
        with self._lock:
            self._hf += int(n)

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return {'lf_count': self._lf, 'hf_count': self._hf}

    def since(self, snapshot: Dict[str, int]) -> Dict[str, int]:
        """Evaluations spent after a previous snapshot"""
        now = self.snapshot()
        return {k: now[k] - snapshot[k] for k in now}

    def reset(self):
        with self._lock:
            self._lf = 0
            self._hf = 0


@dataclass(eq=False)
class ProblemSpec:
    """
    LF/HF limit-state problem

    lf, hf and lf_grad are batched callables evaluated only at points inside
    the domain box; outside the box both fidelities take the penalty
    penalty_coeff * ||z||^2 (gradient 2 * penalty_coeff * z). Bounds are
    treated as open, so a point on a finite face is outside. exact_pf, when
    given, returns the exact HF failure probability.
    """
    name: str
    reference: ReferenceDensity
    lf: BatchFn
    lf_grad: BatchFn
    hf: BatchFn
    lower: np.ndarray
    upper: np.ndarray
    penalty_coeff: float = 100.0
    lf_value_grad: Optional[BatchValueGradFn] = None
    exact_pf: Optional[Callable[[], float]] = None
    metadata: Dict = field(default_factory=dict)
    ledger: EvalBudgetLedger = field(default_factory=EvalBudgetLedger)

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.dim,)).copy()
        if np.any(self.lower >= self.upper):
            raise ConfigError(f"domain box of '{self.name}' needs lower < upper")
        if self.penalty_coeff < 0:
            raise ConfigError(f"penalty_coeff must be >= 0, got {self.penalty_coeff}")

    @property
    def dim(self) -> int:
        return self.reference.dim

    def center(self) -> np.ndarray:
        """Box midpoint where the box is finite, density center elsewhere"""
        finite = np.isfinite(self.lower) & np.isfinite(self.upper)
        mid = 0.5 * (np.where(finite, self.lower, 0.0) + np.where(finite, self.upper, 0.0))
        return np.where(finite, mid, self.reference.center())

    def _as_batch(self, z) -> Tuple[np.ndarray, bool]:
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        Z = np.atleast_2d(z)
        if Z.shape[1] != self.dim or Z.ndim != 2:
            raise ConfigError(f"'{self.name}' expects points of dimension {self.dim}, got shape {z.shape}")
        return Z, single

    def in_domain(self, z) -> np.ndarray:
        Z, single = self._as_batch(z)
        mask = np.all((Z > self.lower) & (Z < self.upper), axis=1)
        return mask[0] if single else mask

    def _penalty(self, Z: np.ndarray) -> np.ndarray:
        return self.penalty_coeff * np.sum(Z * Z, axis=1)

    def _checked(self, values: np.ndarray, Z: np.ndarray, what: str) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if np.isnan(values).any():
            bad = np.flatnonzero(np.isnan(values.reshape(len(Z), -1)).any(axis=1))[0]
            raise NumericalError(f"{what} of '{self.name}' returned NaN", z=Z[bad])
        return values

    def _branch_values(self, fn: BatchFn, Z: np.ndarray, what: str) -> np.ndarray:
        inside = np.all((Z > self.lower) & (Z < self.upper), axis=1)
        out = self._penalty(Z)
        if inside.any():
            out[inside] = self._checked(fn(Z[inside]), Z[inside], what)
        return out

    def lf_eval(self, z):
        """h^LF inside the domain, penalty outside; one LF evaluation per point"""
        Z, single = self._as_batch(z)
        self.ledger.add_lf(len(Z))
        out = self._branch_values(self.lf, Z, 'lf')
        return float(out[0]) if single else out

    def hf_eval(self, z):
        """h^HF inside the domain, penalty outside; one HF evaluation per point"""
        Z, single = self._as_batch(z)
        self.ledger.add_hf(len(Z))
        out = self._branch_values(self.hf, Z, 'hf')
        return float(out[0]) if single else out

    def lf_grad_eval(self, z) -> np.ndarray:
        """grad h^LF inside the domain, 2 * penalty_coeff * z outside"""
        Z, single = self._as_batch(z)
        self.ledger.add_lf(len(Z))
        _, grads = self._value_and_grad(Z)
        return grads[0] if single else grads

    def lf_value_and_grad_eval(self, z) -> Tuple[np.ndarray, np.ndarray]:
        """LF value and gradient together; counts one LF evaluation per point"""
        Z, single = self._as_batch(z)
        self.ledger.add_lf(len(Z))
        values, grads = self._value_and_grad(Z)
        if single:
            return float(values[0]), grads[0]
        return values, grads

    def _value_and_grad(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        inside = np.all((Z > self.lower) & (Z < self.upper), axis=1)
        values = self._penalty(Z)
        grads = 2.0 * self.penalty_coeff * Z
        if inside.any():
            Zi = Z[inside]
            if self.lf_value_grad is not None:
                v, g = self.lf_value_grad(Zi)
            else:
                v, g = self.lf(Zi), self.lf_grad(Zi)
            values[inside] = self._checked(v, Zi, 'lf')
            grads[inside] = self._checked(g, Zi, 'lf gradient')
        return values, grads

    def describe(self) -> Dict:
        return {
            'name': self.name,
            'dim': self.dim,
            'penalty_coeff': self.penalty_coeff,
            'metadata': self.metadata,
        }
