"""Plug-in conditional map: empirical perturbed OT plus nearest-neighbour interpolation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .conditional_ot import PerturbedCostSpec, solve_perturbed
from .measures import Sampler, as_arrays, pair_reference

#: below this anchor count neighbours are found by brute force
BRUTE_FORCE_MAX = 512
#: the k-d tree is only used for inputs of at most this dimension
KDTREE_MAX_DIM = 16


@dataclass(frozen=True, eq=False)
class PluginConditionalMap:
    """Anchors ``(y_j, v_j, u_j)`` and an inverse-distance interpolant over ``(y, v)``.

    ``metric_weights`` scales each input coordinate before distances are
    taken; it has one entry per column of ``[y, v]``.
    """

    Y: np.ndarray
    V: np.ndarray
    U: np.ndarray
    k: int = 2
    metric_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        Y, V, U = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (self.Y, self.V, self.U))
        if Y.shape[0] == 0 or not (Y.shape[0] == V.shape[0] == U.shape[0]):
            raise ValueError("anchors must be a nonempty set of (y, v, u) triples")
        if not 1 <= self.k <= Y.shape[0]:
            raise ValueError(f"k must lie in [1, {Y.shape[0]}]")
        w = self.metric_weights
        w = np.ones(Y.shape[1] + V.shape[1]) if w is None else np.asarray(w, dtype=np.float64).ravel()
        if w.shape[0] != Y.shape[1] + V.shape[1] or np.any(w <= 0):
            raise ValueError("metric_weights must be positive, one per (y, v) coordinate")
        for name, arr in (("Y", Y), ("V", V), ("U", U), ("metric_weights", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_anchors(self) -> int:
        return self.Y.shape[0]

    @cached_property
    def _inputs(self) -> np.ndarray:
        return np.hstack([self.Y, self.V]) * self.metric_weights

    @cached_property
    def _tree(self):
        if self.n_anchors < BRUTE_FORCE_MAX or self._inputs.shape[1] > KDTREE_MAX_DIM:
            return None
        return cKDTree(self._inputs)

    def _neighbours(self, Q: np.ndarray):
        k = self.k
        if self._tree is not None:
            d, idx = self._tree.query(Q, k=k)
            d = d.reshape(Q.shape[0], k)
            idx = idx.reshape(Q.shape[0], k)
            # the tree breaks distance ties arbitrarily; restore index order
            order = np.lexsort((idx, d), axis=1)
            return np.take_along_axis(d, order, 1), np.take_along_axis(idx, order, 1)
        X = self._inputs
        n, dim = X.shape
        ds, ids = [], []
        if n < BRUTE_FORCE_MAX:
            step = max(1, 2_000_000 // (n * dim))
            for s in range(0, Q.shape[0], step):
                dd = np.sqrt(((Q[s:s + step, None, :] - X[None, :, :]) ** 2).sum(-1))
                order = np.argsort(dd, axis=1, kind="stable")[:, :k]
                ds.append(np.take_along_axis(dd, order, 1))
                ids.append(order)
            return np.vstack(ds), np.vstack(ids)
        # large and high-dimensional: BLAS shortlist, then exact distances
        xx = np.einsum("ij,ij->i", X, X)
        m = min(n, k + 8)
        for s in range(0, Q.shape[0], 512):
            q = Q[s:s + 512]
            d2 = (q * q).sum(1)[:, None] + xx[None, :] - 2.0 * q @ X.T
            part = np.argpartition(d2, m - 1, axis=1)[:, :m] if m < n else \
                np.tile(np.arange(n), (q.shape[0], 1))
            dd = np.sqrt(((q[:, None, :] - X[part]) ** 2).sum(-1))
            order = np.lexsort((part, dd), axis=1)[:, :k]
            ds.append(np.take_along_axis(dd, order, 1))
            ids.append(np.take_along_axis(part, order, 1))
        return np.vstack(ds), np.vstack(ids)

    def evaluate_batch(self, Yq, Vq) -> np.ndarray:
        Yq = np.atleast_2d(np.asarray(Yq, dtype=np.float64))
        Vq = np.atleast_2d(np.asarray(Vq, dtype=np.float64))
        if Yq.shape[0] == 1 and Vq.shape[0] > 1:
            Yq = np.repeat(Yq, Vq.shape[0], 0)
        if Yq.shape[1] != self.Y.shape[1] or Vq.shape[1] != self.V.shape[1]:
            raise ValueError("query dimensions do not match the anchors")
        Q = np.hstack([Yq, Vq]) * self.metric_weights
        d, idx = self._neighbours(Q)
        hit = d[:, 0] == 0.0
        w = 1.0 / np.where(hit[:, None], 1.0, d)
        w /= w.sum(1, keepdims=True)
        out = np.einsum("nk,nkd->nd", w, self.U[idx])
        out[hit] = self.U[idx[hit, 0]]
        return out

    def evaluate(self, y, v) -> np.ndarray:
        return self.evaluate_batch(np.atleast_1d(y)[None, :], np.atleast_1d(v)[None, :])[0]

    def to_json(self) -> str:
        return json.dumps({
            "k": self.k,
            "metric_weights": self.metric_weights.tolist(),
            "Y": self.Y.tolist(), "V": self.V.tolist(), "U": self.U.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "PluginConditionalMap":
        d = json.loads(text)
        return cls(np.array(d["Y"]), np.array(d["V"]), np.array(d["U"]), int(d["k"]),
                   np.array(d["metric_weights"]))


def fit_plugin(targets, ref_sampler: Sampler, spec: PerturbedCostSpec, k: int = 2, seed=0,
               metric_weights=None, ot_neighbours: int = 64) -> PluginConditionalMap:
    """Pair targets with reference draws, solve the perturbed OT and store anchors.

    Anchor ``j`` is ``(y_j, v_j, u_{sigma(j)})`` where ``sigma`` is the optimal
    permutation for the epsilon-perturbed cost.
    """
    eta, nu = pair_reference(targets, ref_sampler, seed)
    plan, _ = solve_perturbed(eta, nu, spec, k=ot_neighbours)
    return PluginConditionalMap(eta.y, eta.x, nu.x[plan.sigma], k, metric_weights)


def evaluate(m: PluginConditionalMap, y, v) -> np.ndarray:
    return m.evaluate(y, v)


def conditional_sample(m: PluginConditionalMap, y, n: int, ref_sampler: Sampler, seed=0) -> np.ndarray:
    """``n`` draws of ``T(y, v)`` with ``v`` from the reference; rows are samples."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    V = np.asarray(ref_sampler(rng, n), dtype=np.float64).reshape(n, -1)
    return m.evaluate_batch(np.atleast_1d(np.asarray(y, dtype=np.float64))[None, :], V)


def anchors_from_arrays(Y, V, U, k=2, metric_weights=None) -> PluginConditionalMap:
    Y, U = as_arrays((np.asarray(Y, dtype=np.float64), np.asarray(U, dtype=np.float64)))
    return PluginConditionalMap(Y, np.asarray(V, dtype=np.float64).reshape(Y.shape[0], -1), U,
                                k, metric_weights)
