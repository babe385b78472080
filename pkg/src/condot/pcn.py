"""Preconditioned Crank-Nicolson MCMC on prior-Gaussian function spaces."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Potential = Callable[[np.ndarray], float]
PriorSampler = Callable[[np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class PcnConfig:
    beta: float = 0.2
    iterations: int = 10000
    burn_in: int = 1000
    target_acceptance: float = 0.25
    adapt: bool = True
    thin: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")


@dataclass(eq=False)
class Chain:
    """Post-burn-in states (thinned), acceptance record and step-size history."""

    states: np.ndarray
    acceptance_rate: float
    beta_trace: np.ndarray
    accepted: np.ndarray = field(repr=False)
    burn_in: int = 0

    @property
    def final_beta(self) -> float:
        return float(self.beta_trace[-1])

    def write_csv(self, path, comments=()):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "accepted", "beta"])
            for t, (a, b) in enumerate(zip(self.accepted, self.beta_trace)):
                w.writerow([t, int(a), repr(float(b))])

    def summary_json(self) -> str:
        mean, var = posterior_stats(self)
        return json.dumps({
            "acceptance_rate": self.acceptance_rate,
            "final_beta": self.final_beta,
            "n_states": int(self.states.shape[0]),
            "mean": mean.tolist(),
            "variance": var.tolist(),
        })


def pcn_step(u, phi_u: float, potential: Potential, sampler: PriorSampler, beta: float,
             rng: np.random.Generator):
    """One pCN move; returns ``(u_next, phi_next, accepted)``.

    The proposal ``sqrt(1 - beta^2) u + beta xi`` is prior-reversible, so only
    the potential difference enters the acceptance ratio.
    """
    xi = sampler(rng)
    prop = math.sqrt(1.0 - beta * beta) * u + beta * xi
    phi_prop = potential(prop)
    log_alpha = phi_u - phi_prop
    if log_alpha >= 0 or rng.random() < math.exp(log_alpha):
        return prop, phi_prop, True
    return u, phi_u, False


def run_chain(cfg: PcnConfig, potential: Potential, sampler: PriorSampler, u0) -> Chain:
    """Run pCN; with ``cfg.adapt`` the step size follows a Robbins-Monro rule on
    ``log beta`` during burn-in and is frozen afterwards."""
    rng = np.random.default_rng(cfg.seed)
    u = np.array(u0, dtype=np.float64)
    phi_u = potential(u)
    log_beta = math.log(cfg.beta)
    beta = cfg.beta
    n_keep = (cfg.iterations - cfg.burn_in + cfg.thin - 1) // cfg.thin
    states = np.empty((n_keep,) + u.shape)
    accepted = np.zeros(cfg.iterations, dtype=bool)
    betas = np.empty(cfg.iterations)
    k = 0
    for t in range(cfg.iterations):
        u, phi_u, acc = pcn_step(u, phi_u, potential, sampler, beta, rng)
        accepted[t] = acc
        betas[t] = beta
        if cfg.adapt and t < cfg.burn_in:
            log_beta += (float(acc) - cfg.target_acceptance) / math.sqrt(t + 1)
            log_beta = min(log_beta, 0.0)
            beta = math.exp(log_beta)
        if t >= cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
            states[k] = u
            k += 1
    rate = float(accepted[cfg.burn_in:].mean())
    return Chain(states[:k], rate, betas, accepted, cfg.burn_in)


def posterior_stats(chain) -> tuple[np.ndarray, np.ndarray]:
    """Node-wise sample mean and unbiased variance."""
    S = chain.states if isinstance(chain, Chain) else np.asarray(chain, dtype=np.float64)
    if S.shape[0] == 0:
        raise ValueError("empty chain")
    mean = S.mean(0)
    var = S.var(0, ddof=1) if S.shape[0] > 1 else np.zeros_like(mean)
    return mean, var


def batch_means_se(samples, n_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of the mean for correlated draws (per column)."""
    S = np.asarray(samples, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    b = S.shape[0] // n_batches
    if b < 1:
        raise ValueError("too few samples for the requested number of batches")
    means = S[: b * n_batches].reshape(n_batches, b, -1).mean(1)
    return means.std(0, ddof=1) / math.sqrt(n_batches)
