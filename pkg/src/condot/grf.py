"""Matérn-3/2 Gaussian random fields on the unit square and PCA truncation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cholesky
from scipy.spatial.distance import cdist

JITTER = 1e-10


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Uniform ``ny x nx`` node grid on [0,1]^2, nodes ordered row-major (x fastest)."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("a grid needs at least 2 nodes per direction")

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        xs = np.linspace(0.0, 1.0, self.nx)
        ys = np.linspace(0.0, 1.0, self.ny)
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def as_image(self, field) -> np.ndarray:
        return np.asarray(field).reshape(self.ny, self.nx)


@dataclass(frozen=True)
class MaternKernel:
    lengthscale: float = 0.5

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")

    def __call__(self, r):
        s = np.sqrt(3.0) * np.asarray(r, dtype=np.float64) / self.lengthscale
        return (1.0 + s) * np.exp(-s)


def matern32(x, y, lengthscale: float) -> float:
    r = float(np.linalg.norm(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)))
    return float(MaternKernel(lengthscale)(r))


def cov_matrix(grid: Grid2D, kernel: MaternKernel) -> np.ndarray:
    C = kernel(cdist(grid.nodes, grid.nodes))
    return 0.5 * (C + C.T)


def cholesky_factor(C: np.ndarray, jitter: float = JITTER) -> np.ndarray:
    """Lower Cholesky factor of ``C + jitter I``."""
    try:
        return cholesky(C + jitter * np.eye(C.shape[0]), lower=True)
    except LinAlgError as exc:
        raise FactorizationError(
            f"Cholesky failed with jitter {jitter:g}; try {jitter * 100:g}"
        ) from exc


def sample_grf(factor: np.ndarray, n: int, seed) -> np.ndarray:
    """``n`` fields ``L xi`` as rows of an ``(n, nodes)`` array."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    xi = rng.standard_normal((n, factor.shape[0]))
    return xi @ factor.T


class GaussianPrior:
    """Zero-mean Matérn prior on a grid with a cached factor."""

    def __init__(self, grid: Grid2D, lengthscale: float = 0.5, jitter: float = JITTER):
        self.grid = grid
        self.kernel = MaternKernel(lengthscale)
        self.cov = cov_matrix(grid, self.kernel)
        self.factor = cholesky_factor(self.cov, jitter)

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return sample_grf(self.factor, n, rng)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample(rng, 1)[0]


@dataclass(frozen=True, eq=False)
class KlBasis:
    """Empirical KL basis: rows of ``modes`` are orthonormal fields."""

    modes: np.ndarray
    singular_values: np.ndarray
    mean: np.ndarray
    n_samples: int

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def coef_std(self) -> np.ndarray:
        """Sample standard deviation of each mode coefficient."""
        return self.singular_values / np.sqrt(max(self.n_samples - 1, 1))

    def project(self, fields) -> np.ndarray:
        F = np.atleast_2d(np.asarray(fields, dtype=np.float64))
        return (F - self.mean) @ self.modes.T

    def reconstruct(self, coefs) -> np.ndarray:
        Cf = np.atleast_2d(np.asarray(coefs, dtype=np.float64))
        return Cf @ self.modes + self.mean

    def truncate(self, n: int) -> "KlBasis":
        if not 1 <= n <= self.n_modes:
            raise ValueError(f"cannot truncate {self.n_modes} modes to {n}")
        return KlBasis(self.modes[:n], self.singular_values[:n], self.mean, self.n_samples)

    def to_json(self) -> str:
        return json.dumps({
            "modes": self.modes.tolist(),
            "singular_values": self.singular_values.tolist(),
            "mean": self.mean.tolist(),
            "n_samples": self.n_samples,
        })

    @classmethod
    def from_json(cls, text: str) -> "KlBasis":
        d = json.loads(text)
        return cls(np.array(d["modes"]), np.array(d["singular_values"]),
                   np.array(d["mean"]), int(d["n_samples"]))


def pca_fit(samples, n_modes: int = 20, center: bool = True) -> KlBasis:
    S = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if not 1 <= n_modes <= min(S.shape):
        raise ValueError(f"n_modes must lie in [1, {min(S.shape)}], got {n_modes}")
    mean = S.mean(0) if center else np.zeros(S.shape[1])
    _, s, Vt = np.linalg.svd(S - mean, full_matrices=False)
    return KlBasis(Vt[:n_modes].copy(), s[:n_modes].copy(), mean, S.shape[0])


def pca_project(basis: KlBasis, fields) -> np.ndarray:
    return basis.project(fields)


def pca_reconstruct(basis: KlBasis, coefs) -> np.ndarray:
    return basis.reconstruct(coefs)
