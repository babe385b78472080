"""Finite-difference Darcy forward model, point observations and likelihood.

Solves ``-div(exp(u) grad p) = f`` on the unit square with ``p = 0`` on the
boundary.  Fields are flat row-major vectors on a square :class:`Grid2D`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _backend
from .grf import Grid2D


class SolverError(ArithmeticError):
    pass


def lattice_sensors(n_side: int = 8, inset: float = 0.0) -> np.ndarray:
    """``n_side x n_side`` uniform lattice on ``[inset, 1 - inset]^2``."""
    s = np.linspace(inset, 1.0 - inset, n_side)
    X, Y = np.meshgrid(s, s)
    return np.column_stack([X.ravel(), Y.ravel()])


@dataclass(eq=False)
class DarcyProblem:
    """Grid, source, sensors and noise level.

    ``source=None`` means ``f = 1``.  ``sensors=None`` places an 8x8 lattice
    inset by one grid spacing, since boundary pressures are pinned to zero.
    """

    grid: Grid2D
    noise_sigma: float = 0.01
    source: Optional[np.ndarray] = None
    sensors: Optional[np.ndarray] = None
    _obs_matrix: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        if self.grid.nx != self.grid.ny:
            raise ValueError("the finite-difference solver needs a square grid")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")
        if self.source is None:
            self.source = np.ones(self.grid.size)
        self.source = np.asarray(self.source, dtype=np.float64).ravel()
        if self.source.shape[0] != self.grid.size:
            raise ValueError("source must have one value per grid node")
        if self.sensors is None:
            self.sensors = lattice_sensors(8, self.grid.hx)
        self.sensors = np.atleast_2d(np.asarray(self.sensors, dtype=np.float64))
        if np.any(self.sensors <= 0.0) or np.any(self.sensors >= 1.0):
            raise ValueError("sensors must lie strictly inside the unit square")
        self._obs_matrix = bilinear_matrix(self.grid, self.sensors)

    @property
    def n_obs(self) -> int:
        return self.sensors.shape[0]

    @property
    def obs_matrix(self) -> sp.csr_matrix:
        return self._obs_matrix


def bilinear_matrix(grid: Grid2D, points) -> sp.csr_matrix:
    """Sparse ``(m, nodes)`` operator evaluating the bilinear interpolant at ``points``."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if np.any(P < 0.0) or np.any(P > 1.0):
        raise ValueError("interpolation point outside the unit square")
    fx = P[:, 0] / grid.hx
    fy = P[:, 1] / grid.hy
    i0 = np.minimum(np.floor(fx).astype(np.int64), grid.nx - 2)
    j0 = np.minimum(np.floor(fy).astype(np.int64), grid.ny - 2)
    tx = fx - i0
    ty = fy - j0
    rows = np.repeat(np.arange(P.shape[0]), 4)
    cols = np.column_stack([
        j0 * grid.nx + i0, j0 * grid.nx + i0 + 1,
        (j0 + 1) * grid.nx + i0, (j0 + 1) * grid.nx + i0 + 1,
    ]).ravel()
    vals = np.column_stack([
        (1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty,
    ]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(P.shape[0], grid.size))


def solve_darcy(problem: DarcyProblem, u) -> np.ndarray:
    g = problem.grid
    logk = np.ascontiguousarray(np.asarray(u, dtype=np.float64).reshape(g.ny, g.nx))
    if not np.all(np.isfinite(logk)):
        raise ValueError("log-permeability must be finite")
    f = np.ascontiguousarray(problem.source.reshape(g.ny, g.nx))
    status, p = _backend.kernels.darcy_solve(logk, f, g.hx)
    if status:
        raise SolverError("Darcy system lost positive definiteness")
    return np.asarray(p).ravel()


def darcy_operator(problem: DarcyProblem, u) -> sp.csr_matrix:
    """Assembled interior stiffness matrix, for residual and definiteness checks."""
    g = problem.grid
    kap = np.exp(np.asarray(u, dtype=np.float64).reshape(g.ny, g.nx))
    mx = g.nx - 2
    n = mx * mx
    inv_h2 = 1.0 / g.hx ** 2

    def hmean(a, b):
        return 2.0 * a * b / (a + b)

    kc = kap[1:-1, 1:-1]
    ke, kw = hmean(kc, kap[1:-1, 2:]), hmean(kc, kap[1:-1, :-2])
    kn, ks = hmean(kc, kap[2:, 1:-1]), hmean(kc, kap[:-2, 1:-1])
    idx = np.arange(n).reshape(mx, mx)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [((ke + kw + kn + ks) * inv_h2).ravel()]
    for coef, (di, dj) in ((ke, (0, 1)), (kw, (0, -1)), (kn, (1, 0)), (ks, (-1, 0))):
        b0, b1 = max(0, -di), mx - max(0, di)
        a0, a1 = max(0, -dj), mx - max(0, dj)
        rows.append(idx[b0:b1, a0:a1].ravel())
        cols.append(idx[b0 + di:b1 + di, a0 + dj:a1 + dj].ravel())
        vals.append((-coef[b0:b1, a0:a1] * inv_h2).ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def interior(problem: DarcyProblem, field_vec) -> np.ndarray:
    g = problem.grid
    return np.asarray(field_vec).reshape(g.ny, g.nx)[1:-1, 1:-1].ravel()


def observe(problem: DarcyProblem, p) -> np.ndarray:
    return problem.obs_matrix @ np.asarray(p, dtype=np.float64).ravel()


def forward(problem: DarcyProblem, u) -> np.ndarray:
    """Noiseless observation map ``u -> p(u)(x_1..x_m)``."""
    return observe(problem, solve_darcy(problem, u))


def forward_batch(problem: DarcyProblem, U) -> np.ndarray:
    U = np.atleast_2d(U)
    P = np.empty((U.shape[0], problem.grid.size))
    for i, u in enumerate(U):
        P[i] = solve_darcy(problem, u)
    return (problem.obs_matrix @ P.T).T


def simulate_data(problem: DarcyProblem, u, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = forward(problem, u)
    return y + problem.noise_sigma * rng.standard_normal(y.shape[0])


def simulate_batch(problem: DarcyProblem, U, rng: np.random.Generator) -> np.ndarray:
    Y = forward_batch(problem, U)
    return Y + problem.noise_sigma * rng.standard_normal(Y.shape)


def misfit(y_model, y_obs, sigma: float) -> float:
    r = np.asarray(y_model, dtype=np.float64) - np.asarray(y_obs, dtype=np.float64)
    return float(r @ r) / (2.0 * sigma * sigma)


def likelihood_phi(problem: DarcyProblem, u, y) -> float:
    """Negative log-likelihood ``|p(u)(x) - y|^2 / (2 sigma^2)``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != problem.n_obs:
        raise ValueError(f"expected {problem.n_obs} observations, got {y.shape[0]}")
    return misfit(forward(problem, u), y, problem.noise_sigma)


def poisson_center_reference(terms: int = 200) -> float:
    """Center value of ``-lap p = 1`` on the unit square with zero boundary (Fourier series)."""
    total = 0.0
    for m in range(1, 2 * terms, 2):
        for n in range(1, 2 * terms, 2):
            s = np.sin(m * np.pi / 2) * np.sin(n * np.pi / 2)
            total += 16.0 * s / (np.pi ** 4 * m * n * (m * m + n * n))
    return total
