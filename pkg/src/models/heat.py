"""
Steady-State Heat Problem
-div(K grad u) = 1 on (0,1)^2 with u = 0 on the boundary, and a random
log-perturbed conductivity
    K(x, z) = Kbar + exp(sqrt(2/D') sum_i w_i cos(a1_i x1 + a2_i x2 + b_i)).

The HF model solves on a fine grid, the LF model on a coarse grid; the LF
gradient of h = threshold - max(u) comes from one adjoint solve.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from core.density import CoordinateFactor, ReferenceDensity
from core.problem import ProblemSpec
from utils.errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

ARGMAX_TIE_TOL = 1e-14


@dataclass(frozen=True)
class ConductivityParams:
    """Random-feature conductivity; z = (w, a1, a2, b), each block of length dprime"""
    dprime: int = 100
    kbar: float = 3.0

    @property
    def dim(self) -> int:
        return 4 * self.dprime

    def split(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ConfigError(f"heat inputs must have length {self.dim}, got shape {z.shape}")
        d = self.dprime
        return z[:d], z[d:2 * d], z[2 * d:3 * d], z[3 * d:]

    def reference(self) -> ReferenceDensity:
        gauss = CoordinateFactor.gaussian(0.0, 1.0)
        phase = CoordinateFactor.uniform(0.0, 2.0 * np.pi)
        return ReferenceDensity([gauss] * (3 * self.dprime) + [phase] * self.dprime)


@dataclass(frozen=True)
class GridSpec:
    """Uniform n x n node grid on [0,1]^2 including the Dirichlet boundary"""
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError(f"grid needs at least 3 nodes per side, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.n - 1)

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Node coordinates as (n, n) arrays indexed [i, j] -> (x1_i, x2_j)"""
        x = np.linspace(0.0, 1.0, self.n)
        return np.meshgrid(x, x, indexing='ij')


def _exponent(cp: ConductivityParams, z: np.ndarray, x1: np.ndarray, x2: np.ndarray):
    w, a1, a2, b = cp.split(z)
    theta = np.multiply.outer(x1, a1) + np.multiply.outer(x2, a2) + b
    scale = np.sqrt(2.0) / np.sqrt(cp.dprime)
    return scale * (np.cos(theta) @ w), theta, scale


def eval_field(cp: ConductivityParams, z: np.ndarray, x) -> np.ndarray:
    """K(x, z) at one point (length-2 x) or at stacked points (..., 2)"""
    x = np.asarray(x, dtype=float)
    expo, _, _ = _exponent(cp, z, x[..., 0], x[..., 1])
    return cp.kbar + np.exp(expo)


class _Stencil:
    """Face connectivity of the 5-point scheme on one grid, built once"""

    def __init__(self, grid: GridSpec):
        n = grid.n
        self.grid = grid
        self.inv_h2 = 1.0 / grid.spacing ** 2
        idx = np.arange(n * n).reshape(n, n)
        interior = np.zeros((n, n), dtype=bool)
        interior[1:-1, 1:-1] = True
        self.interior_nodes = idx[interior]
        self.unknown = np.full(n * n, -1)
        self.unknown[self.interior_nodes] = np.arange(len(self.interior_nodes))

        # faces between horizontally and vertically adjacent nodes
        a = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
        b = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
        keep = interior.ravel()[a] | interior.ravel()[b]
        self.face_a, self.face_b = a[keep], b[keep]
        self.a_inside = self.unknown[self.face_a] >= 0
        self.b_inside = self.unknown[self.face_b] >= 0

    def assemble(self, k_nodes: np.ndarray) -> sparse.csc_matrix:
        """SPD matrix of the conservative scheme with arithmetic face averages"""
        kf = 0.5 * (k_nodes[self.face_a] + k_nodes[self.face_b]) * self.inv_h2
        ua, ub = self.unknown[self.face_a], self.unknown[self.face_b]
        both = self.a_inside & self.b_inside
        rows = np.concatenate([ua[self.a_inside], ub[self.b_inside], ua[both], ub[both]])
        cols = np.concatenate([ua[self.a_inside], ub[self.b_inside], ub[both], ua[both]])
        vals = np.concatenate([kf[self.a_inside], kf[self.b_inside], -kf[both], -kf[both]])
        m = len(self.interior_nodes)
        return sparse.csc_matrix((vals, (rows, cols)), shape=(m, m))

    def face_sensitivity(self, lam: np.ndarray, u: np.ndarray) -> np.ndarray:
        """
        lam^T (dA/dK_m) u for every node m

        Each face contributes (lam_a - lam_b)(u_a - u_b)/h^2 to both of its
        nodes with weight 1/2 (arithmetic average).
        """
        contrib = 0.5 * (lam[self.face_a] - lam[self.face_b]) * (u[self.face_a] - u[self.face_b]) * self.inv_h2
        sens = np.zeros(self.grid.n ** 2)
        np.add.at(sens, self.face_a, contrib)
        np.add.at(sens, self.face_b, contrib)
        return sens


class HeatEquationModel:
    """Fine-grid HF and coarse-grid LF solvers for one conductivity model"""

    def __init__(self, cp: ConductivityParams = ConductivityParams(),
                 grid_hf: int = 61, grid_lf: int = 17,
                 hf_threshold: float = 0.022, lf_threshold: float = 0.019,
                 residual_tol: float = 1e-10):
        self.cp = cp
        self.hf_grid = GridSpec(grid_hf)
        self.lf_grid = GridSpec(grid_lf)
        self.hf_threshold = hf_threshold
        self.lf_threshold = lf_threshold
        self.residual_tol = residual_tol
        self._stencils = {}

    def _stencil(self, grid: GridSpec) -> _Stencil:
        if grid.n not in self._stencils:
            self._stencils[grid.n] = _Stencil(grid)
        return self._stencils[grid.n]

    def _solve_system(self, grid: GridSpec, z: np.ndarray, adjoint: bool = False):
        stencil = self._stencil(grid)
        x1, x2 = grid.coordinates()
        expo, theta, scale = _exponent(self.cp, z, x1.ravel(), x2.ravel())
        k_nodes = self.cp.kbar + np.exp(expo)

        A = stencil.assemble(k_nodes)
        rhs = np.ones(A.shape[0])
        lu = splu(A)
        u_int = lu.solve(rhs)
        residual = np.linalg.norm(A @ u_int - rhs) / np.linalg.norm(rhs)
        if not np.isfinite(residual) or residual > self.residual_tol:
            raise NumericalError("heat solve did not converge", z=z, residual=float(residual))

        u = np.zeros(grid.n ** 2)
        u[stencil.interior_nodes] = u_int
        if not adjoint:
            return u

        j_star = int(np.flatnonzero(u >= u.max() - ARGMAX_TIE_TOL)[0])
        e = np.zeros(A.shape[0])
        e[stencil.unknown[j_star]] = 1.0
        lam = np.zeros(grid.n ** 2)
        lam[stencil.interior_nodes] = lu.solve(e, trans='T')
        return u, lam, stencil, np.exp(expo), theta, scale, (x1.ravel(), x2.ravel())

    def solve(self, grid: GridSpec, z: np.ndarray) -> np.ndarray:
        """Temperature field as an (n, n) array, zero on the boundary"""
        return self._solve_system(grid, z).reshape(grid.n, grid.n)

    def hf_h(self, z: np.ndarray) -> float:
        return float(self.hf_threshold - self._solve_system(self.hf_grid, z).max())

    def lf_h(self, z: np.ndarray) -> float:
        return float(self.lf_threshold - self._solve_system(self.lf_grid, z).max())

    def lf_value_and_grad(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        """h^LF and its gradient, ordered in (w, a1, a2, b) blocks"""
        u, lam, stencil, exp_e, theta, scale, (x1, x2) = self._solve_system(self.lf_grid, z, adjoint=True)
        w, _, _, _ = self.cp.split(z)

        # dh/dK_m, then chain rule through K_m = Kbar + exp(E_m)
        g_nodes = stencil.face_sensitivity(lam, u) * exp_e * scale
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        grad_w = cos_t.T @ g_nodes
        grad_a1 = -w * (sin_t.T @ (g_nodes * x1))
        grad_a2 = -w * (sin_t.T @ (g_nodes * x2))
        grad_b = -w * (sin_t.T @ g_nodes)
        return float(self.lf_threshold - u.max()), np.concatenate([grad_w, grad_a1, grad_a2, grad_b])

    def lf_grad(self, z: np.ndarray) -> np.ndarray:
        return self.lf_value_and_grad(z)[1]

    # batched wrappers for ProblemSpec
    def lf_batch(self, Z: np.ndarray) -> np.ndarray:
        return np.array([self.lf_h(z) for z in Z])

    def hf_batch(self, Z: np.ndarray) -> np.ndarray:
        return np.array([self.hf_h(z) for z in Z])

    def lf_grad_batch(self, Z: np.ndarray) -> np.ndarray:
        return np.array([self.lf_grad(z) for z in Z]).reshape(len(Z), self.cp.dim)

    def lf_value_grad_batch(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pairs = [self.lf_value_and_grad(z) for z in Z]
        values = np.array([p[0] for p in pairs])
        grads = np.array([p[1] for p in pairs]).reshape(len(Z), self.cp.dim)
        return values, grads


def make_heat(grid_hf: int = 61, grid_lf: int = 17, dprime: int = 100, kbar: float = 3.0,
              hf_threshold: float = 0.022, lf_threshold: float = 0.019,
              residual_tol: float = 1e-10, penalty_coeff: float = 100.0) -> ProblemSpec:
    """Heat benchmark; Gaussian blocks are unbounded, phases live in [0, 2 pi]"""
    cp = ConductivityParams(dprime=dprime, kbar=kbar)
    model = HeatEquationModel(cp, grid_hf, grid_lf, hf_threshold, lf_threshold, residual_tol)
    lower = np.concatenate([np.full(3 * dprime, -np.inf), np.zeros(dprime)])
    upper = np.concatenate([np.full(3 * dprime, np.inf), np.full(dprime, 2.0 * np.pi)])
    return ProblemSpec(
        name='heat',
        reference=cp.reference(),
        lf=model.lf_batch,
        lf_grad=model.lf_grad_batch,
        hf=model.hf_batch,
        lower=lower,
        upper=upper,
        penalty_coeff=penalty_coeff,
        lf_value_grad=model.lf_value_grad_batch,
        metadata={
            'grid_hf': grid_hf, 'grid_lf': grid_lf, 'dprime': dprime,
            'hf_threshold': hf_threshold, 'lf_threshold': lf_threshold,
            'lf_model': 'coarse-grid finite differences with adjoint gradients',
        },
    )
