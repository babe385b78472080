"""Triangular maps trained on a Monge cost plus a kernel two-sample penalty.

The map is ``T(y, v) = (y, W phi(y, v))`` where ``phi`` stacks the raw
inputs, random Fourier features and a constant.  Being linear in ``W``,
its loss gradient is available in closed form.  The divergence between
pushed-forward reference draws and targets is the Gaussian-kernel MMD,
by default multiplied by the squared bandwidth so that it carries the
units of a squared distance, like the Monge term it is balanced against.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .measures import Sampler, as_arrays


class TrainingDivergedError(FloatingPointError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def _gauss_kernel(A, B, h):
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * h * h))


def mmd2(X, Y, bandwidth: float) -> float:
    """Squared MMD (V-statistic) with a Gaussian kernel of width ``bandwidth``."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] == 0 or Y.shape[0] == 0 or X.shape[1] != Y.shape[1]:
        raise ValueError("need two nonempty sample sets of equal dimension")
    val = (_gauss_kernel(X, X, bandwidth).mean() + _gauss_kernel(Y, Y, bandwidth).mean()
           - 2.0 * _gauss_kernel(X, Y, bandwidth).mean())
    return float(val)


def median_bandwidth(X, n_sub: int = 512, seed: int = 0) -> float:
    """Median pairwise distance of a random subsample."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rng = np.random.default_rng(seed)
    if X.shape[0] > n_sub:
        X = X[rng.choice(X.shape[0], n_sub, replace=False)]
    d2 = (X * X).sum(1)[:, None] + (X * X).sum(1)[None, :] - 2.0 * X @ X.T
    iu = np.triu_indices(X.shape[0], 1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0)))) if iu[0].size else 0.0
    return med if med > 0 else 1.0


@dataclass(frozen=True, eq=False)
class FeatureExpansion:
    """``phi(x) = [x, sqrt(2/R) cos(Omega x + b), 1]`` for ``x = (y, v)``."""

    frequencies: np.ndarray
    phases: np.ndarray
    bandwidth: float

    @classmethod
    def random(cls, dim_in: int, n_features: int, bandwidth: float, seed=0, y_dim: int = 0,
               n_y_features: int = 0, y_bandwidth: Optional[float] = None) -> "FeatureExpansion":
        """Gaussian random features; the first ``n_y_features`` ignore the v-block
        and use ``y_bandwidth`` (default ``bandwidth``)."""
        if n_features < 1 or not bandwidth > 0:
            raise ValueError("need n_features >= 1 and a positive bandwidth")
        if not 0 <= n_y_features <= n_features or (n_y_features and not 0 < y_dim < dim_in):
            raise ValueError("n_y_features needs 0 < y_dim < dim_in and at most n_features")
        rng = np.random.default_rng(seed)
        freqs = rng.standard_normal((n_features, dim_in)) / bandwidth
        freqs[:n_y_features, y_dim:] = 0.0
        if y_bandwidth is not None:
            freqs[:n_y_features] *= bandwidth / y_bandwidth
        phases = rng.uniform(0.0, 2.0 * np.pi, n_features)
        return cls(freqs, phases, float(bandwidth))

    def y_only_columns(self, y_dim: int) -> np.ndarray:
        """Output columns that do not depend on v."""
        rff = ~np.any(self.frequencies[:, y_dim:] != 0.0, axis=1)
        return np.concatenate([np.ones(y_dim, bool), np.zeros(self.dim_in - y_dim, bool), rff, [True]])

    @property
    def dim_in(self) -> int:
        return self.frequencies.shape[1]

    @property
    def n_random(self) -> int:
        return self.frequencies.shape[0]

    @property
    def n_out(self) -> int:
        return self.dim_in + self.n_random + 1

    def __call__(self, Y, V) -> np.ndarray:
        X = np.hstack([np.atleast_2d(Y), np.atleast_2d(V)])
        rff = math.sqrt(2.0 / self.n_random) * np.cos(X @ self.frequencies.T + self.phases)
        return np.hstack([X, rff, np.ones((X.shape[0], 1))])


@dataclass(frozen=True, eq=False)
class LinearReadoutMap:
    """``T_U(y, v) = W phi(y, v)``; the y-component is passed through untouched."""

    weights: np.ndarray
    features: FeatureExpansion
    y_dim: int

    @classmethod
    def identity_in_v(cls, features: FeatureExpansion, y_dim: int) -> "LinearReadoutMap":
        du = features.dim_in - y_dim
        W = np.zeros((du, features.n_out))
        W[:, y_dim:features.dim_in] = np.eye(du)
        return cls(W, features, y_dim)

    @classmethod
    def gaussian_init(cls, features: FeatureExpansion, Y, U, ridge: float = 1e-8) -> "LinearReadoutMap":
        """Conditional Monge map of a Gaussian surrogate: ``m(y) + S^(1/2) v``.

        ``m`` is the least-squares fit of ``u`` on the v-free features and
        ``S`` the residual covariance; its symmetric root keeps the map
        monotone in ``v``.
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        y_dim, du = Y.shape[1], U.shape[1]
        if features.dim_in != y_dim + du:
            raise ValueError("features must act on (y, v) with dim(v) = dim(u)")
        cols = features.y_only_columns(y_dim)
        P = features(Y, np.zeros_like(U))[:, cols]
        A = P.T @ P
        A[np.diag_indices_from(A)] += ridge * max(1.0, float(np.trace(A)) / A.shape[0])
        B = np.linalg.solve(A, P.T @ U)
        R = U - P @ B
        w, Q = np.linalg.eigh(np.atleast_2d(np.cov(R.T)))
        W = np.zeros((du, features.n_out))
        W[:, cols] = B.T
        W[:, y_dim:features.dim_in] = (Q * np.sqrt(np.maximum(w, 0.0))) @ Q.T
        return cls(W, features, y_dim)

    @property
    def u_dim(self) -> int:
        return self.weights.shape[0]

    def __call__(self, Y, V) -> np.ndarray:
        return self.features(Y, V) @ self.weights.T

    def with_weights(self, W) -> "LinearReadoutMap":
        return replace(self, weights=np.asarray(W, dtype=np.float64))

    def to_json(self) -> str:
        f = self.features
        return json.dumps({
            "y_dim": self.y_dim,
            "frequencies": f.frequencies.tolist(),
            "phases": f.phases.tolist(),
            "bandwidth": f.bandwidth,
            "weights": self.weights.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "LinearReadoutMap":
        d = json.loads(text)
        feats = FeatureExpansion(np.array(d["frequencies"]), np.array(d["phases"]), d["bandwidth"])
        return cls(np.array(d["weights"]), feats, int(d["y_dim"]))


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    kernel_bandwidth: Optional[float] = None
    batch_size: int = 256
    learning_rate: float = 1e-2
    iterations: int = 2000
    seed: int = 0
    n_features: int = 128
    feature_bandwidth: Optional[float] = None
    optimizer: str = "adam"
    monge_weight: float = 1.0
    n_y_features: Optional[int] = None
    init: str = "gaussian"
    scale_divergence: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.kernel_bandwidth is not None and not self.kernel_bandwidth > 0:
            raise ValueError("kernel_bandwidth must be positive")
        if self.batch_size < 1 or self.iterations < 0 or not self.learning_rate > 0:
            raise ValueError("batch_size, iterations and learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.init not in ("gaussian", "identity"):
            raise ValueError("init must be 'gaussian' or 'identity'")

    @property
    def divergence_scale(self) -> float:
        return self.kernel_bandwidth ** 2 if self.scale_divergence else 1.0


def _loss_terms(tmap, Yr, Vr, Yt, Ut, cfg):
    T = tmap(Yr, Vr)
    monge = float(((Vr - T) ** 2).sum(1).mean())
    div = mmd2(np.hstack([Yr, T]), np.hstack([Yt, Ut]), cfg.kernel_bandwidth) * cfg.divergence_scale
    return monge, div


def monge_mmd_loss(tmap: LinearReadoutMap, batch_ref, batch_tgt, cfg: TrainConfig) -> float:
    """Monge cost of the batch plus the divergence over ``lam``; batches are ``(Y, V)`` and ``(Y, U)``."""
    monge, div = _loss_terms(tmap, *batch_ref, *batch_tgt, cfg)
    return cfg.monge_weight * monge + div / cfg.lam


def grad_loss(tmap: LinearReadoutMap, batch_ref, batch_tgt, cfg: TrainConfig) -> np.ndarray:
    """Gradient of :func:`monge_mmd_loss` with respect to ``tmap.weights``."""
    Yr, Vr = batch_ref
    Yt, Ut = batch_tgt
    h2 = cfg.kernel_bandwidth ** 2
    Phi = tmap.features(Yr, Vr)
    T = Phi @ tmap.weights.T
    M, N = T.shape[0], Ut.shape[0]
    G_in = np.hstack([Yr, T])
    Kgg = _gauss_kernel(G_in, G_in, cfg.kernel_bandwidth)
    Kgt = _gauss_kernel(G_in, np.hstack([Yt, Ut]), cfg.kernel_bandwidth)
    self_term = Kgg.sum(1)[:, None] * T - Kgg @ T
    cross_term = Kgt.sum(1)[:, None] * T - Kgt @ Ut
    dmmd = ((-2.0 / (M * M * h2)) * self_term + (2.0 / (M * N * h2)) * cross_term) * cfg.divergence_scale
    dT = cfg.monge_weight * (-2.0 / M) * (Vr - T) + dmmd / cfg.lam
    return dT.T @ Phi


@dataclass(eq=False)
class TrainResult:
    map: LinearReadoutMap
    trace: list = field(default_factory=list)
    config: Optional[TrainConfig] = None

    def write_trace_csv(self, path, comments=()):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in comments:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "monge_term", "mmd_term", "total"])
            for row in self.trace:
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def resolve_config(cfg: TrainConfig, Y, V, U) -> TrainConfig:
    """Fill in median-heuristic bandwidths left as ``None``."""
    out = cfg
    if cfg.kernel_bandwidth is None:
        out = replace(out, kernel_bandwidth=median_bandwidth(np.hstack([Y, U]), seed=cfg.seed))
    if cfg.feature_bandwidth is None:
        out = replace(out, feature_bandwidth=median_bandwidth(np.hstack([Y, V]), seed=cfg.seed + 1))
    return out


def train(targets, ref_sampler: Sampler, cfg: TrainConfig, init: Optional[LinearReadoutMap] = None,
          trace_every: int = 10) -> TrainResult:
    """Mini-batch descent on the penalized Monge objective.

    A reference pool ``(y_j, v_j)`` is drawn once, pairing every target y
    with a fresh reference v.  Each step draws one index batch and compares
    ``(y_i, T(y_i, v_i))`` against ``(y_i, u_i)``: both sides share their y
    rows, which is valid because the reference and target y-marginals agree,
    and it removes the y-part of the sampling noise from the divergence.
    When ``batch_size`` covers all samples the iteration is deterministic
    gradient descent.
    """
    Y, U = as_arrays(targets)
    J = Y.shape[0]
    rng = np.random.default_rng(cfg.seed)
    V = np.asarray(ref_sampler(rng, J), dtype=np.float64).reshape(J, -1)
    if V.shape[1] != U.shape[1]:
        raise ValueError("reference v and target u must have equal dimension")
    full = cfg.batch_size >= J
    cfg = resolve_config(cfg, Y, V, U)
    if init is None:
        n_y = cfg.n_features // 2 if cfg.n_y_features is None else cfg.n_y_features
        feats = FeatureExpansion.random(Y.shape[1] + V.shape[1], cfg.n_features, cfg.feature_bandwidth,
                                        seed=cfg.seed + 2, y_dim=Y.shape[1], n_y_features=n_y,
                                        y_bandwidth=median_bandwidth(Y, seed=cfg.seed + 3))
        if cfg.init == "gaussian":
            tmap = LinearReadoutMap.gaussian_init(feats, Y, U)
        else:
            tmap = LinearReadoutMap.identity_in_v(feats, Y.shape[1])
    else:
        tmap = init
    W = tmap.weights.copy()
    m1 = np.zeros_like(W)
    m2 = np.zeros_like(W)
    b1, b2 = 0.9, 0.999
    trace = []
    for it in range(cfg.iterations):
        if full:
            ref, tgt = (Y, V), (Y, U)
        else:
            ir = rng.choice(J, cfg.batch_size, replace=False)
            ref, tgt = (Y[ir], V[ir]), (Y[ir], U[ir])
        cur = tmap.with_weights(W)
        g = grad_loss(cur, ref, tgt, cfg)
        if it % trace_every == 0 or it == cfg.iterations - 1:
            monge, div = _loss_terms(cur, *ref, *tgt, cfg)
            total = cfg.monge_weight * monge + div / cfg.lam
            trace.append((it, monge, div, total))
            if not math.isfinite(total):
                raise TrainingDivergedError(f"loss became {total} at iteration {it}", trace)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient at iteration {it}", trace)
        if cfg.optimizer == "sgd":
            W -= cfg.learning_rate * g
        else:
            m1 = b1 * m1 + (1 - b1) * g
            m2 = b2 * m2 + (1 - b2) * g * g
            mh = m1 / (1 - b1 ** (it + 1))
            vh = m2 / (1 - b2 ** (it + 1))
            W -= cfg.learning_rate * mh / (np.sqrt(vh) + 1e-8)
    return TrainResult(tmap.with_weights(W), trace, cfg)


def monotonicity_fraction(tmap, Y, Z1, Z2) -> float:
    """Share of triples with ``<T(y, z1) - T(y, z2), z1 - z2> >= 0``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Z1 = np.atleast_2d(np.asarray(Z1, dtype=np.float64))
    Z2 = np.atleast_2d(np.asarray(Z2, dtype=np.float64))
    if Y.shape[0] == 0:
        raise ValueError("no evaluation pairs")
    inner = ((tmap(Y, Z1) - tmap(Y, Z2)) * (Z1 - Z2)).sum(1)
    return float(np.mean(inner >= 0))
