"""Experiment pipelines shared by the command line and the acceptance suite.

Every random stream is derived from one integer seed and a string tag, so
reordering or parallelizing stages never changes any individual stream.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import darcy as dm
from .benchmarks2d import Benchmark2D, conditional_truth_slab, sample_benchmark, slab_acceptance
from .conditional_ot import PerturbedCostSpec
from .grf import GaussianPrior, Grid2D, KlBasis, pca_fit
from .measures import gaussian_sampler
from .metrics import field_l2_error, pearson, wasserstein1_1d
from .monge_map import TrainConfig, monotonicity_fraction, train
from .pcn import PcnConfig, posterior_stats, run_chain
from .plugin_map import PluginConditionalMap, conditional_sample, fit_plugin


def derive_seed(seed: int, tag: str) -> int:
    """Stable 63-bit seed for the stream named ``tag``."""
    digest = hashlib.sha256(f"{int(seed)}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, tag))


# --------------------------------------------------------------------- 2D benchmarks

@dataclass
class Bench2DResult:
    Y: np.ndarray
    U: np.ndarray
    plugin: PluginConditionalMap
    slices: list
    samples: dict = field(default_factory=dict)
    truths: dict = field(default_factory=dict)
    w1: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    fit_seconds: float = 0.0


def run_bench2d(family: str, J: int = 20000, epsilon: float = 5e-3, k: int = 2,
                slices=(-0.5, 0.0, 0.5), n_eval: int = 5000, delta: float = 0.05,
                seed: int = 0, ot_neighbours: int = 16) -> Bench2DResult:
    b = Benchmark2D(family)
    Y, U = sample_benchmark(b, J, derive_seed(seed, f"bench2d/{family}/data"))
    t0 = time.perf_counter()
    plugin = fit_plugin((Y, U), gaussian_sampler(1), PerturbedCostSpec(epsilon), k=k,
                        seed=derive_seed(seed, f"bench2d/{family}/reference"),
                        ot_neighbours=ot_neighbours)
    res = Bench2DResult(Y, U, plugin, list(slices), fit_seconds=time.perf_counter() - t0)
    for y0 in slices:
        res.acceptance[y0] = slab_acceptance(b, y0, delta, seed=derive_seed(seed, f"bench2d/{family}/acc"))
        res.truths[y0] = conditional_truth_slab(b, y0, delta, n_eval,
                                                derive_seed(seed, f"bench2d/{family}/slab/{y0}"))
        res.samples[y0] = conditional_sample(plugin, [y0], n_eval, gaussian_sampler(1),
                                             derive_seed(seed, f"bench2d/{family}/cond/{y0}"))[:, 0]
        res.w1[y0] = wasserstein1_1d(res.samples[y0], res.truths[y0])
    return res


# --------------------------------------------------------------------- Darcy

@dataclass
class DarcySetup:
    """Forward problem, prior, training pairs and the KL basis of the training fields.

    ``C`` holds the training fields' basis coefficients divided by their
    standard deviations, so the reference for ``v`` is a standard normal.
    Observations enter the maps through their leading principal coordinates
    after division by the noise level: ``y_axes`` and ``y_sd`` come from the
    training data, and noise-dominated directions are dropped.
    """

    problem: dm.DarcyProblem
    prior: GaussianPrior
    basis: KlBasis
    Y: np.ndarray
    C: np.ndarray
    y_scale: float
    y_mean: np.ndarray
    y_axes: np.ndarray
    y_sd: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.basis.n_modes

    @property
    def n_y_features(self) -> int:
        return self.y_axes.shape[0]

    def whiten_y(self, Y) -> np.ndarray:
        return np.atleast_2d(Y) / self.y_scale

    def y_features(self, Y) -> np.ndarray:
        """Principal coordinates of the noise-whitened data; distances are likelihood units."""
        return (self.whiten_y(Y) - self.y_mean) @ self.y_axes.T

    def y_standardized(self, Y) -> np.ndarray:
        return self.y_features(Y) / self.y_sd

    def fields_from_coefs(self, Cw) -> np.ndarray:
        return self.basis.reconstruct(np.atleast_2d(Cw) * self.basis.coef_std)


def darcy_setup(n_grid: int = 16, lengthscale: float = 0.5, sigma: float = 0.01,
                J: int = 100000, n_modes: int = 20, seed: int = 0, n_y_features: int = 16,
                y_pca_rows: int = 20000) -> DarcySetup:
    problem = dm.DarcyProblem(Grid2D(n_grid, n_grid), noise_sigma=sigma)
    prior = GaussianPrior(problem.grid, lengthscale)
    Utr = prior.sample(rng_for(seed, "darcy/train/u"), J)
    Y = dm.simulate_batch(problem, Utr, rng_for(seed, "darcy/train/noise"))
    basis = pca_fit(Utr, n_modes)
    C = basis.project(Utr) / basis.coef_std
    Yw = Y[:y_pca_rows] / sigma
    y_mean = Yw.mean(0)
    n_y = min(n_y_features, Y.shape[1])
    _, sv, Vt = np.linalg.svd(Yw - y_mean, full_matrices=False)
    y_sd = sv[:n_y] / np.sqrt(max(Yw.shape[0] - 1, 1))
    return DarcySetup(problem, prior, basis, Y, C, sigma, y_mean, Vt[:n_y].copy(), y_sd)


def darcy_truths(setup: DarcySetup, n_truth: int = 4, seed: int = 0):
    """Held-out ``u`` draws and their noisy data."""
    U = setup.prior.sample(rng_for(seed, "darcy/truth/u"), n_truth)
    Y = dm.simulate_batch(setup.problem, U, rng_for(seed, "darcy/truth/noise"))
    return U, Y


def darcy_pcn(setup: DarcySetup, y, cfg: PcnConfig):
    prob = setup.problem
    y = np.asarray(y, dtype=np.float64)

    def potential(u):
        return dm.likelihood_phi(prob, u, y)

    return run_chain(cfg, potential, setup.prior.draw, np.zeros(prob.grid.size))


def darcy_plugin(setup: DarcySetup, epsilon: float = 1.0, k: int = 2, seed: int = 0,
                 y_weight: float = 1.0, ot_neighbours: int = 16) -> PluginConditionalMap:
    """Plug-in map on ``(y_features, standardized KL coefficients)``."""
    Yf = setup.y_features(setup.Y)
    w = np.concatenate([np.full(Yf.shape[1], y_weight), np.ones(setup.n_modes)])
    return fit_plugin((Yf, setup.C), gaussian_sampler(setup.n_modes), PerturbedCostSpec(epsilon),
                      k=k, seed=derive_seed(seed, "darcy/plugin/reference"), metric_weights=w,
                      ot_neighbours=ot_neighbours)


def darcy_monge(setup: DarcySetup, cfg: TrainConfig):
    """Monge-penalized map conditioned on the standardized principal coordinates of y."""
    return train((setup.y_standardized(setup.Y), setup.C), gaussian_sampler(setup.n_modes), cfg)


def posterior_fields_plugin(setup, plugin, y, n, seed):
    Cw = conditional_sample(plugin, setup.y_features(y)[0], n, gaussian_sampler(setup.n_modes), seed)
    return setup.fields_from_coefs(Cw)


def posterior_fields_monge(setup, tmap, y, n, seed):
    V = np.random.default_rng(seed).standard_normal((n, setup.n_modes))
    Yq = np.repeat(setup.y_standardized(y), n, 0)
    return setup.fields_from_coefs(tmap(Yq, V))


def compare_fields(samples, pcn_mean, pcn_var) -> dict:
    mean = samples.mean(0)
    var = samples.var(0, ddof=1)
    return {
        "rel_l2_mean": field_l2_error(mean, pcn_mean, relative=True),
        "var_pearson": pearson(var, pcn_var),
        "mean": mean,
        "var": var,
    }


def monotonicity_pairs(setup: DarcySetup, n: int, seed: int):
    """Held-out ``(y, z1, z2)`` triples with ``y`` from fresh simulations."""
    rng = rng_for(seed, "darcy/monotone")
    U = setup.prior.sample(rng, n)
    Y = setup.y_standardized(dm.simulate_batch(setup.problem, U, rng))
    return Y, rng.standard_normal((n, setup.n_modes)), rng.standard_normal((n, setup.n_modes))


def darcy_monotonicity(setup: DarcySetup, tmap, n: int = 10000, seed: int = 0) -> float:
    return monotonicity_fraction(tmap, *monotonicity_pairs(setup, n, seed))


# --------------------------------------------------------------------- linear-Gaussian surrogate

@dataclass
class LinearGaussian:
    """``y = G u + noise`` with a Matérn prior on a grid; posteriors are exact."""

    grid: Grid2D
    G: np.ndarray
    sigma: float
    prior_cov: np.ndarray
    eigvals: np.ndarray = field(init=False, repr=False)
    eigvecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w, V = np.linalg.eigh(self.prior_cov)
        order = np.argsort(w)[::-1]
        self.eigvals = np.maximum(w[order], 0.0)
        self.eigvecs = V[:, order]

    def posterior(self):
        """Full-field posterior mean operator pieces: returns ``(K, S)`` with mean ``K y``."""
        C, G = self.prior_cov, self.G
        S_y = G @ C @ G.T + self.sigma ** 2 * np.eye(G.shape[0])
        K = C @ G.T @ np.linalg.inv(S_y)
        return K, C - K @ G @ C

    def posterior_modes(self, N: int, y):
        """Mean and covariance of the KL coefficients when the prior is truncated to ``N`` modes."""
        Phi = self.eigvecs[:, :N] * np.sqrt(self.eigvals[:N])
        A = self.G @ Phi
        prec = np.eye(N) + A.T @ A / self.sigma ** 2
        cov = np.linalg.inv(prec)
        mean = cov @ A.T @ np.asarray(y) / self.sigma ** 2
        return Phi, mean, 0.5 * (cov + cov.T)

    def sample_posterior(self, N: int, y, n: int, seed: int = 0, max_modes: int = None) -> np.ndarray:
        """Field samples at ``N`` modes; draws share one normal stream across ``N``."""
        Phi, mean, cov = self.posterior_modes(N, y)
        M = max_modes or self.grid.size
        Z = np.random.default_rng(seed).standard_normal((n, M))[:, :N]
        L = np.linalg.cholesky(cov)
        return (mean + Z @ L.T) @ Phi.T


def linear_gaussian(n_grid: int = 8, n_obs: int = 6, sigma: float = 0.1, lengthscale: float = 0.5,
                    seed: int = 0) -> LinearGaussian:
    """Point observations of the field at a few interior nodes."""
    grid = Grid2D(n_grid, n_grid)
    from .grf import MaternKernel, cov_matrix

    C = cov_matrix(grid, MaternKernel(lengthscale))
    rng = rng_for(seed, "linear_gaussian/sensors")
    G = dm.bilinear_matrix(grid, rng.uniform(0.1, 0.9, (n_obs, 2))).toarray()
    return LinearGaussian(grid, G, sigma, C)
