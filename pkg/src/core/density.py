"""
Reference Densities
Product-form input densities p(z) with exact log-density, score and sampling
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence

import numpy as np
from scipy import special

from utils.errors import ConfigError, DomainError
from utils.rng import SeedKey, Stream, make_rng

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

GAUSSIAN = 'gaussian'
UNIFORM = 'uniform'


@dataclass(frozen=True)
class CoordinateFactor:
    """One coordinate of a product density: N(mean, std) or U[lower, upper]"""
    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind == GAUSSIAN:
            if not self.b > 0:
                raise ConfigError(f"gaussian std must be > 0, got {self.b}")
        elif self.kind == UNIFORM:
            if not self.a < self.b:
                raise ConfigError(f"uniform needs lower < upper, got [{self.a}, {self.b}]")
        else:
            raise ConfigError(f"unknown factor kind '{self.kind}'")

    @classmethod
    def gaussian(cls, mean: float, std: float) -> 'CoordinateFactor':
        return cls(GAUSSIAN, float(mean), float(std))

    @classmethod
    def uniform(cls, lower: float, upper: float) -> 'CoordinateFactor':
        return cls(UNIFORM, float(lower), float(upper))

    @classmethod
    def from_record(cls, record: Dict) -> 'CoordinateFactor':
        """Build a factor from a config record {kind, params}"""
        kind = record.get('kind')
        params = record.get('params', {})
        if kind == GAUSSIAN:
            return cls.gaussian(params['mean'], params['std'])
        if kind == UNIFORM:
            return cls.uniform(params['lower'], params['upper'])
        raise ConfigError(f"unknown factor kind '{kind}'", field='kind')

    def to_record(self) -> Dict:
        if self.kind == GAUSSIAN:
            return {'kind': GAUSSIAN, 'params': {'mean': self.a, 'std': self.b}}
        return {'kind': UNIFORM, 'params': {'lower': self.a, 'upper': self.b}}


@dataclass(frozen=True)
class ReferenceDensity:
    """
    Product density p(z) = prod_i p_i(z_i)

    All evaluation methods accept a single point of length D or a batch of
    shape (n, D); batches return one value (or row) per point.
    """
    factors: Sequence[CoordinateFactor]
    _gauss: np.ndarray = field(init=False, repr=False, compare=False)
    _a: np.ndarray = field(init=False, repr=False, compare=False)
    _b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        factors = tuple(self.factors)
        if len(factors) < 1:
            raise ConfigError("a reference density needs at least one factor")
        object.__setattr__(self, 'factors', factors)
        object.__setattr__(self, '_gauss', np.array([f.kind == GAUSSIAN for f in factors]))
        object.__setattr__(self, '_a', np.array([f.a for f in factors], dtype=float))
        object.__setattr__(self, '_b', np.array([f.b for f in factors], dtype=float))

    @classmethod
    def from_records(cls, records: List[Dict]) -> 'ReferenceDensity':
        return cls([CoordinateFactor.from_record(r) for r in records])

    @classmethod
    def iid(cls, factor: CoordinateFactor, dim: int) -> 'ReferenceDensity':
        return cls([factor] * dim)

    @property
    def dim(self) -> int:
        return len(self.factors)

    @property
    def support_lower(self) -> np.ndarray:
        return np.where(self._gauss, -np.inf, self._a)

    @property
    def support_upper(self) -> np.ndarray:
        return np.where(self._gauss, np.inf, self._b)

    def center(self) -> np.ndarray:
        """Gaussian means and uniform midpoints"""
        return np.where(self._gauss, self._a, 0.5 * (self._a + self._b))

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1:] != (self.dim,) or z.ndim > 2:
            raise ConfigError(f"expected points of dimension {self.dim}, got shape {z.shape}")
        return z

    def log_density(self, z) -> np.ndarray:
        """
        Sum of per-coordinate log-pdfs

        Returns -inf for points with a uniform coordinate outside [lower, upper].
        """
        z = self._check(z)
        gauss = self._gauss
        a, b = self._a, self._b
        std = np.where(gauss, b, 1.0)
        gauss_terms = -0.5 * ((z - a) / std) ** 2 - np.log(std) - _LOG_SQRT_2PI
        width = np.where(gauss, 1.0, b - a)
        inside = (z >= a) & (z <= b)
        unif_terms = np.where(inside, -np.log(width), -np.inf)
        terms = np.where(gauss, gauss_terms, unif_terms)
        return terms.sum(axis=-1)

    def score(self, z, strict: bool = True) -> np.ndarray:
        """
        Gradient of log p(z)

        Gaussian coordinates give -(z - mean)/std^2 and uniform coordinates 0.
        With strict=True a uniform coordinate on or outside its boundary is an
        error; callers outside the domain use the penalty branch with
        strict=False.
        """
        z = self._check(z)
        gauss = self._gauss
        if strict and not gauss.all():
            interior = (z > self._a) & (z < self._b)
            bad = ~interior & ~gauss
            if bad.any():
                row = z if z.ndim == 1 else z[np.flatnonzero(bad.any(axis=1))[0]]
                raise DomainError("score undefined on or outside a uniform boundary", z=row)
        std = np.where(gauss, self._b, 1.0)
        return np.where(gauss, -(z - self._a) / std ** 2, 0.0)

    def transform_uniform(self, u: np.ndarray) -> np.ndarray:
        """Map U(0,1) variates coordinatewise through the inverse CDFs"""
        u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
        gauss_vals = self._a + self._b * special.ndtri(u)
        unif_vals = self._a + (self._b - self._a) * u
        return np.where(self._gauss, gauss_vals, unif_vals)

    def sample(self, seed: SeedKey, n: int) -> np.ndarray:
        """n i.i.d. draws as an (n, D) matrix, deterministic in seed"""
        if n < 0:
            raise ConfigError(f"sample size must be >= 0, got {n}")
        if n == 0:
            return np.empty((0, self.dim))
        rng = make_rng(seed, Stream.SAMPLE)
        return self.transform_uniform(rng.random((n, self.dim)))

    def iter_samples(self, seed: SeedKey, n: int, chunk_rows: int = 0) -> Iterator[np.ndarray]:
        """
        Yield the rows of sample(seed, n) in chunks

        The concatenated chunks equal sample(seed, n) exactly, whatever the
        chunk size, so large draws keep the same values as small ones.
        """
        if chunk_rows <= 0:
            chunk_rows = max(1, (1 << 21) // self.dim)
        rng = make_rng(seed, Stream.SAMPLE)
        done = 0
        while done < n:
            k = min(chunk_rows, n - done)
            yield self.transform_uniform(rng.random((k, self.dim)))
            done += k
