"""Oracle suites shared by ``condot selftest`` and the acceptance tests.

Each suite returns a :class:`SuiteResult`; sizes are parameters so the
command line can run a quick pass and the acceptance suite a full one.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import monge_map
from .conditional_ot import conditional_duality
from .grf import Grid2D, MaternKernel, cov_matrix
from .measures import make_empirical
from .monge_map import FeatureExpansion, LinearReadoutMap, TrainConfig, monge_mmd_loss
from .ot_core import solve_assignment
from .pcn import PcnConfig, batch_means_se, run_chain


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<14} {self.detail}  ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def permutation_suite(n_instances: int = 200, sizes=range(3, 8), seed: int = 0, tol: float = 1e-12):
    """Assignment cost against enumeration of all permutations."""
    rng = np.random.default_rng(seed)
    sizes = list(sizes)
    worst = 0.0
    for i in range(n_instances):
        n = sizes[i % len(sizes)]
        c = rng.random((n, n))
        _, cost = solve_assignment(c)
        best = min(math.fsum(c[r, p[r]] for r in range(n)) for p in itertools.permutations(range(n))) / n
        worst = max(worst, abs(cost - best))
    return SuiteResult("permutations", worst <= tol, f"{n_instances} instances, max |diff| = {worst:.2e}")


def random_conditional_instance(rng, max_slices: int = 5, max_per_slice: int = 6, dim: int = 1):
    """Slice-structured instance with equal slice masses on both sides."""
    k = int(rng.integers(2, max_slices + 1))
    sizes = rng.integers(1, max_per_slice + 1, size=k)
    ys = rng.normal(size=(k, 1))
    Y = np.repeat(ys, sizes, axis=0)
    n = Y.shape[0]
    ref = make_empirical(np.hstack([Y, rng.normal(size=(n, dim))]), y_dim=1)
    tgt = make_empirical(np.hstack([Y, rng.normal(size=(n, dim))]), y_dim=1)
    return ref, tgt


@_timed
def duality_suite(n_instances: int = 100, seed: int = 1, tol: float = 1e-8):
    """Conditional primal against the partial c-transform dual, plus slackness."""
    rng = np.random.default_rng(seed)
    worst_gap = worst_slack = worst_feas = 0.0
    for _ in range(n_instances):
        d = conditional_duality(*random_conditional_instance(rng))
        worst_gap = max(worst_gap, abs(d.gap) / (1.0 + abs(d.primal)))
        worst_slack = max(worst_slack, d.slackness)
        worst_feas = max(worst_feas, d.feasibility)
    ok = worst_gap <= tol and worst_slack <= tol and worst_feas <= tol
    return SuiteResult("duality", ok, f"{n_instances} instances, rel gap {worst_gap:.1e}, "
                                      f"slackness {worst_slack:.1e}, dual violation {worst_feas:.1e}")


def conjugate_problem(n_side: int = 4, n_obs: int = 3, sigma: float = 0.3, seed: int = 2):
    """Small linear-Gaussian problem: returns ``(potential, sampler, mean, cov)``."""
    rng = np.random.default_rng(seed)
    C = cov_matrix(Grid2D(n_side, n_side), MaternKernel(0.5))
    L = np.linalg.cholesky(C + 1e-12 * np.eye(C.shape[0]))
    G = rng.normal(size=(n_obs, C.shape[0])) / math.sqrt(C.shape[0])
    y = G @ (L @ rng.standard_normal(C.shape[0])) + sigma * rng.standard_normal(n_obs)
    S = G @ C @ G.T + sigma ** 2 * np.eye(n_obs)
    K = C @ G.T @ np.linalg.inv(S)
    mean, cov = K @ y, C - K @ G @ C

    def potential(u):
        r = y - G @ u
        return 0.5 * float(r @ r) / sigma ** 2

    return potential, (lambda r: L @ r.standard_normal(L.shape[0])), mean, cov


@_timed
def pcn_suite(iterations: int = 100000, seed: int = 3, n_se: float = 3.0):
    """Chain mean against the analytic posterior mean, node by node."""
    potential, sampler, mean, _ = conjugate_problem()
    cfg = PcnConfig(beta=0.5, iterations=iterations, burn_in=iterations // 10, thin=1, seed=seed)
    ch = run_chain(cfg, potential, sampler, np.zeros(mean.size))
    se = batch_means_se(ch.states)
    z = np.abs(ch.states.mean(0) - mean) / se
    return SuiteResult("pcn-conjugate", bool(np.all(z <= n_se)),
                       f"{iterations} steps, max |z| = {z.max():.2f} over {mean.size} nodes, "
                       f"acceptance {ch.acceptance_rate:.2f}")


def gradient_instance(rng, dy: int = 1, du: int = 2, n: int = 12):
    feats = FeatureExpansion.random(dy + du, 16, 1.0, seed=int(rng.integers(1 << 31)))
    tmap = LinearReadoutMap(rng.normal(scale=0.3, size=(du, feats.n_out)), feats, dy)
    ref = (rng.normal(size=(n, dy)), rng.normal(size=(n, du)))
    tgt = (rng.normal(size=(n + 3, dy)), rng.normal(1.0, 1.0, size=(n + 3, du)))
    return tmap, ref, tgt, TrainConfig(lam=0.3, kernel_bandwidth=1.1)


@_timed
def gradient_suite(n_instances: int = 3, n_points: int = 10, seed: int = 4, tol: float = 1e-5,
                   step: float = 1e-5):
    """Analytic loss gradient against central differences; the error is relative to the gradient scale."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        tmap, ref, tgt, cfg = gradient_instance(rng)
        g = monge_map.grad_loss(tmap, ref, tgt, cfg)
        scale = max(1.0, float(np.abs(g).max()))
        for _ in range(n_points):
            i, j = int(rng.integers(g.shape[0])), int(rng.integers(g.shape[1]))
            Wp, Wm = tmap.weights.copy(), tmap.weights.copy()
            Wp[i, j] += step
            Wm[i, j] -= step
            fd = (monge_mmd_loss(tmap.with_weights(Wp), ref, tgt, cfg)
                  - monge_mmd_loss(tmap.with_weights(Wm), ref, tgt, cfg)) / (2 * step)
            worst = max(worst, abs(fd - g[i, j]) / max(abs(fd), abs(g[i, j]), 1e-3 * scale))
    return SuiteResult("gradient", worst <= tol,
                       f"{n_instances}x{n_points} points, max rel err {worst:.1e}")


def run_all(quick: bool = True) -> list:
    if quick:
        return [permutation_suite(60), duality_suite(40), pcn_suite(40000), gradient_suite()]
    return [permutation_suite(), duality_suite(), pcn_suite(), gradient_suite()]
