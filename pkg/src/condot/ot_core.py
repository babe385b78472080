"""Discrete balanced optimal transport: exact solvers, duals, Sinkhorn, oracles.

Forbidden pairs are encoded as ``+inf`` entries (:data:`FORBIDDEN`) and are
never given mass.  Costs reported for uniform assignments include the
``1/n`` weight.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import _backend

FORBIDDEN = np.inf

#: tie-breaking toward the lexicographically smallest optimal permutation is
#: exact but quadratic in n; above this size the solver's own order is kept
LEX_TIEBREAK_MAX_N = 256


class InfeasibleError(ValueError):
    """No coupling avoids the forbidden entries."""


class NotOptimalError(ValueError):
    """A plan handed to :func:`extract_duals` is not optimal for the cost."""


class ProblemTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Coupling between two discrete measures.

    ``form`` is ``"permutation"`` (``sigma[i]`` is the target of atom ``i``,
    uniform equal-size marginals) or ``"matrix"`` (dense ``n x m`` masses).
    """

    form: str
    sigma: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    row_weights: Optional[np.ndarray] = None
    col_weights: Optional[np.ndarray] = None

    @classmethod
    def from_permutation(cls, sigma) -> "TransportPlan":
        sigma = np.asarray(sigma, dtype=np.int64)
        n = sigma.shape[0]
        if n == 0 or not np.array_equal(np.sort(sigma), np.arange(n)):
            raise ValueError("sigma must be a permutation of 0..n-1")
        w = np.full(n, 1.0 / n)
        return cls("permutation", sigma=sigma, row_weights=w, col_weights=w)

    @classmethod
    def from_matrix(cls, matrix, a=None, b=None) -> "TransportPlan":
        P = np.asarray(matrix, dtype=np.float64)
        if P.ndim != 2 or np.any(P < 0):
            raise ValueError("plan matrix must be 2-d and nonnegative")
        a = P.sum(1) if a is None else np.asarray(a, dtype=np.float64)
        b = P.sum(0) if b is None else np.asarray(b, dtype=np.float64)
        return cls("matrix", matrix=P, row_weights=a, col_weights=b)

    @property
    def shape(self):
        if self.form == "permutation":
            n = self.sigma.shape[0]
            return n, n
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        if self.form == "matrix":
            return self.matrix
        n = self.sigma.shape[0]
        P = np.zeros((n, n))
        P[np.arange(n), self.sigma] = 1.0 / n
        return P

    def support(self, tol: float = 0.0):
        """Row and column indices carrying mass above ``tol``."""
        if self.form == "permutation":
            return np.arange(self.sigma.shape[0]), self.sigma
        return np.nonzero(self.matrix > tol)

    def cost(self, c) -> float:
        """Compensated-summation cost of the plan under ``c``."""
        c = np.asarray(c, dtype=np.float64)
        if self.form == "permutation":
            n = self.sigma.shape[0]
            vals = c[np.arange(n), self.sigma]
            if not np.all(np.isfinite(vals)):
                return math.inf
            return math.fsum(vals) / n
        rows, cols = np.nonzero(self.matrix > 0)
        vals = c[rows, cols]
        if not np.all(np.isfinite(vals)):
            return math.inf
        return math.fsum(self.matrix[rows, cols] * vals)

    def marginal_violation(self) -> float:
        """Largest absolute deviation of row/column sums from the prescribed marginals."""
        P = self.dense()
        return float(
            max(np.abs(P.sum(1) - self.row_weights).max(), np.abs(P.sum(0) - self.col_weights).max())
        )

    def to_json(self) -> str:
        if self.form == "permutation":
            return json.dumps({"form": "permutation", "sigma": self.sigma.tolist()})
        n, m = self.matrix.shape
        return json.dumps(
            {"form": "matrix", "rows": n, "cols": m, "data": self.matrix.ravel().tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "TransportPlan":
        obj = json.loads(text)
        if obj["form"] == "permutation":
            return cls.from_permutation(obj["sigma"])
        if obj["form"] == "matrix":
            P = np.asarray(obj["data"], dtype=np.float64).reshape(obj["rows"], obj["cols"])
            return cls.from_matrix(P)
        raise ValueError(f"unknown plan form {obj['form']!r}")


@dataclass(frozen=True, eq=False)
class DualPotentials:
    """``psi`` on reference atoms, ``phi`` on target atoms, with ``phi_j - psi_i <= c_ij``."""

    psi: np.ndarray
    phi: np.ndarray

    def value(self, a, b) -> float:
        return math.fsum(np.asarray(b) * self.phi) - math.fsum(np.asarray(a) * self.psi)

    def max_violation(self, c) -> float:
        """Largest ``phi_j - psi_i - c_ij`` over finite entries (<= 0 when feasible)."""
        c = np.asarray(c, dtype=np.float64)
        red = self.phi[None, :] - self.psi[:, None] - c
        red = red[np.isfinite(c)]
        return float(red.max()) if red.size else -math.inf


def _check_square(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
        raise ValueError(f"assignment needs a nonempty square cost matrix, got shape {c.shape}")
    if np.any(np.isnan(c)) or np.any(c == -np.inf):
        raise ValueError("cost entries must be finite or +inf (forbidden)")
    return np.ascontiguousarray(c)


def _lex_smallest(c, sigma, u, v):
    """Rewrite ``sigma`` into the lexicographically smallest optimal permutation.

    Works in the equality graph of the optimal duals; every candidate
    rematching is an alternating cycle whose exact cost change is checked
    so the optimum value can never drift.
    """
    n = sigma.shape[0]
    finite = np.isfinite(c)
    scale = 1.0 + np.abs(c[finite]).max()
    tight = finite & (c - u[:, None] - v[None, :] <= 1e-9 * scale)
    sigma = sigma.copy()
    owner = np.empty(n, dtype=np.int64)
    owner[sigma] = np.arange(n)
    adj = [np.flatnonzero(tight[i]) for i in range(n)]
    for i in range(n):
        cur = sigma[i]
        for j in adj[i]:
            if j >= cur:
                break
            r0 = owner[j]
            if r0 <= i:
                continue
            # BFS over rows > i: from a row, step to a tight column, then to its owner
            prev = {r0: -1}
            via = {}
            queue = deque([r0])
            found = None
            while queue and found is None:
                r = queue.popleft()
                for jj in adj[r]:
                    if jj == cur:
                        found = r
                        via_end = jj
                        break
                    rr = owner[jj]
                    if rr > i and rr not in prev:
                        prev[rr] = r
                        via[rr] = jj
                        queue.append(rr)
            if found is None:
                continue
            # rows on the path, each moving to a new column
            moves = [(i, j)]
            r, target = found, via_end
            while r != -1:
                moves.append((r, target))
                target = via.get(r)
                r = prev[r]
            old = math.fsum(c[r_, sigma[r_]] for r_, _ in moves)
            new = math.fsum(c[r_, j_] for r_, j_ in moves)
            if new > old:
                continue
            for r_, j_ in moves:
                sigma[r_] = j_
                owner[j_] = r_
            break
    return sigma


def solve_assignment(c, *, lex_tiebreak: bool = True, return_duals: bool = False):
    """Optimal permutation for a square cost under uniform marginals.

    Returns ``(plan, cost)`` with ``cost = (1/n) sum_i c[i, sigma(i)]``; with
    ``return_duals`` also a :class:`DualPotentials` certificate.
    """
    c = _check_square(c)
    n = c.shape[0]
    status, sigma, u, v = _backend.kernels.lsap_dense(c)
    if status:
        raise InfeasibleError("every permutation uses a forbidden entry")
    if lex_tiebreak and 1 < n <= LEX_TIEBREAK_MAX_N:
        sigma = _lex_smallest(c, sigma, u, v)
    plan = TransportPlan.from_permutation(sigma)
    out = (plan, plan.cost(c))
    if return_duals:
        # u_i + v_j <= c_ij  <=>  phi_j - psi_i <= c_ij with phi = v, psi = -u
        out += (DualPotentials(psi=-u, phi=v),)
    return out


def _transport_simplex(c, a, b, max_pivots=None):
    """Transportation simplex (network simplex on the bipartite graph).

    Northwest-corner start, Dantzig pricing with smallest-index ties, and
    potentials recomputed over the basis tree each pivot.  Forbidden cells
    carry a big-M cost; any mass left on them at the optimum means the
    problem is infeasible.
    """
    n, m = c.shape
    finite = np.isfinite(c)
    if not finite.any():
        raise InfeasibleError("all entries are forbidden")
    cmax = float(np.abs(c[finite]).max())
    big = (n + m) * (cmax + 1.0) * 4.0
    cw = np.where(finite, c, big)
    supply = a.astype(np.float64).copy()
    demand = b.astype(np.float64).copy()
    flow = np.zeros((n, m))
    basis = np.zeros((n, m), dtype=bool)
    i = j = 0
    while True:
        x = min(supply[i], demand[j])
        flow[i, j] = x
        basis[i, j] = True
        supply[i] -= x
        demand[j] -= x
        if i == n - 1 and j == m - 1:
            break
        if (supply[i] <= demand[j] and i < n - 1) or j == m - 1:
            i += 1
        else:
            j += 1
    tol = 1e-12 * (1.0 + float(np.abs(cw).max()))
    max_pivots = max_pivots or 50 * (n + m) * (n + m)
    for _ in range(max_pivots):
        u = np.full(n, np.nan)
        v = np.full(m, np.nan)
        u[0] = 0.0
        stack = [("r", 0)]
        while stack:
            kind, k = stack.pop()
            if kind == "r":
                for jj in np.flatnonzero(basis[k]):
                    if np.isnan(v[jj]):
                        v[jj] = cw[k, jj] - u[k]
                        stack.append(("c", jj))
            else:
                for ii in np.flatnonzero(basis[:, k]):
                    if np.isnan(u[ii]):
                        u[ii] = cw[ii, k] - v[k]
                        stack.append(("r", ii))
        red = cw - u[:, None] - v[None, :]
        red[basis] = 0.0
        k = int(np.argmin(red))
        if red.flat[k] >= -tol:
            return flow, u, v, cw
        ei, ej = divmod(k, m)
        # tree path from column ej back to row ei
        prev = {("c", ej): None}
        queue = deque([("c", ej)])
        while ("r", ei) not in prev:
            kind, idx = queue.popleft()
            nbrs = (
                [("r", ii) for ii in np.flatnonzero(basis[:, idx])]
                if kind == "c"
                else [("c", jj) for jj in np.flatnonzero(basis[idx])]
            )
            for nb in nbrs:
                if nb not in prev:
                    prev[nb] = (kind, idx)
                    queue.append(nb)
        nodes = [("r", ei)]
        while nodes[-1] != ("c", ej):
            nodes.append(prev[nodes[-1]])
        # cells along the cycle: entering (ei, ej) is '+', then alternate
        cells = []
        for s in range(len(nodes) - 1):
            x1, x2 = nodes[s], nodes[s + 1]
            r_, c_ = (x1[1], x2[1]) if x1[0] == "r" else (x2[1], x1[1])
            cells.append((r_, c_))
        minus = cells[0::2]
        plus = cells[1::2]
        theta_cell = min(minus, key=lambda rc: (flow[rc], rc))
        theta = flow[theta_cell]
        for rc in minus:
            flow[rc] -= theta
        for rc in plus:
            flow[rc] += theta
        flow[ei, ej] += theta
        basis[theta_cell] = False
        flow[theta_cell] = 0.0
        basis[ei, ej] = True
    raise RuntimeError("transportation simplex did not terminate")


def _check_weights(a, b, c):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if c.shape != (a.shape[0], b.shape[0]):
        raise ValueError(f"cost shape {c.shape} does not match weights ({a.size}, {b.size})")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("weights must be nonnegative")
    if abs(math.fsum(a) - 1.0) > 1e-9 or abs(math.fsum(b) - 1.0) > 1e-9:
        raise ValueError("both marginals must sum to one")
    return a, b


def solve_lp(c, a, b):
    """Exact Kantorovich optimum for arbitrary marginals. Returns ``(plan, cost)``."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or np.any(np.isnan(c)) or np.any(c == -np.inf):
        raise ValueError("cost must be a 2-d array of finite or +inf entries")
    a, b = _check_weights(a, b, c)
    flow, _, _, _ = _transport_simplex(c, a, b)
    flow[flow < 0] = 0.0
    if np.any(flow[~np.isfinite(c)] > 1e-12):
        raise InfeasibleError("no coupling with the given marginals avoids the forbidden entries")
    flow[~np.isfinite(c)] = 0.0
    plan = TransportPlan.from_matrix(flow, a, b)
    return plan, plan.cost(c)


def solve_sinkhorn(c, a, b, entropic_reg: float, max_iters: int = 10000, tol: float = 1e-9):
    """Log-domain Sinkhorn iterations.

    Returns ``(plan, info)`` where ``info`` has ``converged``, ``iterations``
    and ``violation`` (L1 marginal error).  The plan is returned even when
    the iteration budget runs out.
    """
    c = np.asarray(c, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise ValueError("Sinkhorn needs a finite cost matrix")
    if not entropic_reg > 0:
        raise ValueError("entropic_reg must be positive")
    a, b = _check_weights(a, b, c)
    la = np.log(np.where(a > 0, a, 1.0))
    lb = np.log(np.where(b > 0, b, 1.0))
    K = -c / entropic_reg
    f = np.zeros(c.shape[0])
    g = np.zeros(c.shape[1])
    violation = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        f = la - logsumexp(K + g[None, :], axis=1)
        f[a == 0] = -np.inf
        g = lb - logsumexp(K + f[:, None], axis=0)
        g[b == 0] = -np.inf
        if it % 10 == 0 or it == max_iters:
            P = np.exp(K + f[:, None] + g[None, :])
            violation = float(np.abs(P.sum(1) - a).sum())
            if violation <= tol:
                break
    P = np.exp(K + f[:, None] + g[None, :])
    violation = float(np.abs(P.sum(1) - a).sum() + np.abs(P.sum(0) - b).sum())
    info = {"converged": violation <= tol, "iterations": it, "violation": violation}
    return TransportPlan.from_matrix(P, a, b), info


def extract_duals(c, plan: TransportPlan, *, support_tol: float = 1e-14, gap_tol: float = 1e-8):
    """Recover optimal potentials certifying ``plan``.

    Solves the difference constraints ``phi_j <= psi_i + c_ij`` (all finite
    pairs) and ``psi_i <= phi_j - c_ij`` (pairs in the support) by
    Bellman-Ford.  A negative cycle, or a leftover duality gap, means the
    plan is not optimal.
    """
    c = np.asarray(c, dtype=np.float64)
    P = plan.dense()
    n, m = c.shape
    finite = np.isfinite(c)
    supp = P > support_tol
    if np.any(supp & ~finite):
        raise NotOptimalError("plan puts mass on a forbidden entry")
    scale = 1.0 + (float(np.abs(c[finite]).max()) if finite.any() else 0.0)
    eps = 1e-13 * scale
    cf = np.where(finite, c, np.inf)
    cs = np.where(supp, c, -np.inf)
    psi = np.zeros(n)
    phi = np.zeros(m)
    for _ in range(n + m + 1):
        new_phi = np.minimum(phi, (psi[:, None] + cf).min(0))
        new_psi = np.minimum(psi, (new_phi[None, :] - cs).min(1))
        changed = np.any(new_phi < phi - eps) or np.any(new_psi < psi - eps)
        phi, psi = new_phi, new_psi
        if not changed:
            break
    else:
        raise NotOptimalError("negative cycle in the support: plan is not optimal")
    duals = DualPotentials(psi=psi, phi=phi)
    primal = plan.cost(c)
    gap = primal - duals.value(plan.row_weights, plan.col_weights)
    if abs(gap) > gap_tol * (1.0 + abs(primal)):
        raise NotOptimalError(f"duality gap {gap:.3e} exceeds tolerance")
    return duals


def brute_force_ot(c, a=None, b=None) -> float:
    """Exhaustive optimum, used as a test oracle.

    Uniform square problems enumerate all permutations (n <= 8); other
    marginals enumerate every basic solution of the transportation polytope
    (n * m <= 16).
    """
    c = np.asarray(c, dtype=np.float64)
    n, m = c.shape
    uniform = (
        n == m
        and (a is None or np.allclose(a, 1.0 / n, rtol=0, atol=1e-15))
        and (b is None or np.allclose(b, 1.0 / m, rtol=0, atol=1e-15))
    )
    if uniform:
        if n > 8:
            raise ProblemTooLargeError("permutation enumeration is limited to n <= 8")
        best = math.inf
        rows = np.arange(n)
        for perm in itertools.permutations(range(n)):
            vals = c[rows, perm]
            if np.all(np.isfinite(vals)):
                best = min(best, math.fsum(vals) / n)
        if best == math.inf:
            raise InfeasibleError("every permutation uses a forbidden entry")
        return best
    a = np.full(n, 1.0 / n) if a is None else np.asarray(a, dtype=np.float64)
    b = np.full(m, 1.0 / m) if b is None else np.asarray(b, dtype=np.float64)
    if n * m > 16:
        raise ProblemTooLargeError("vertex enumeration is limited to n * m <= 16")
    cells = [(i, j) for i in range(n) for j in range(m)]
    A = np.zeros((n + m, n * m))
    for k, (i, j) in enumerate(cells):
        A[i, k] = 1.0
        A[n + j, k] = 1.0
    rhs = np.concatenate([a, b])
    best = math.inf
    for subset in itertools.combinations(range(n * m), n + m - 1):
        sub = A[:, subset]
        if np.linalg.matrix_rank(sub) < n + m - 1:
            continue
        x, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.any(x < -1e-12) or np.abs(sub @ x - rhs).max() > 1e-10:
            continue
        vals = [c[cells[k]] for k, xk in zip(subset, x) if xk > 1e-15]
        if all(np.isfinite(vals)):
            best = min(best, math.fsum(xk * c[cells[k]] for k, xk in zip(subset, x) if xk > 1e-15))
    if best == math.inf:
        raise InfeasibleError("no feasible vertex avoids the forbidden entries")
    return best


def _rows_per_chunk(n_cols, budget=1 << 24):
    """Row-block size keeping an ``(rows, n_cols)`` float block near 128 MB."""
    return max(1, budget // max(n_cols, 1))


def _knn(A, B, k):
    """Indices of the ``k`` nearest rows of ``B`` for each row of ``A`` (Euclidean)."""
    k = min(k, B.shape[0])
    if A.shape[1] <= 8:
        from scipy.spatial import cKDTree

        _, idx = cKDTree(B).query(A, k=k)
        return np.asarray(idx, dtype=np.int64).reshape(A.shape[0], k)
    bn = np.einsum("ij,ij->i", B, B)
    out = np.empty((A.shape[0], k), dtype=np.int64)
    chunk = _rows_per_chunk(B.shape[0])
    for s in range(0, A.shape[0], chunk):
        d2 = bn[None, :] - 2.0 * A[s : s + chunk] @ B.T
        out[s : s + chunk] = np.argpartition(d2, k - 1, axis=1)[:, :k]
    return out


def _pair_costs(za, va, yb, ub, rows, cols, eps, p, q):
    s1 = ((za[rows] - yb[cols]) ** 2).sum(1)
    s2 = ((va[rows] - ub[cols]) ** 2).sum(1)
    if p != 2.0:
        s1 = np.sqrt(s1) ** p
    if q != 2.0:
        s2 = np.sqrt(s2) ** q
    return s1 + eps * s2


def _pricing_blas(za, va, yb, ub, eps, u, v, tol, max_per_row):
    """Quadratic-cost pricing via matrix products; candidates re-checked exactly."""
    A = np.hstack([za, math.sqrt(eps) * va])
    B = np.hstack([yb, math.sqrt(eps) * ub])
    an = np.einsum("ij,ij->i", A, A)
    bn = np.einsum("ij,ij->i", B, B)
    slack = 1e-9 * (1.0 + an.max() + bn.max())
    m = min(max_per_row, B.shape[0])
    chunk = _rows_per_chunk(B.shape[0])
    rows, cols = [], []
    for s in range(0, A.shape[0], chunk):
        red = an[s : s + chunk, None] + bn[None, :] - 2.0 * (A[s : s + chunk] @ B.T)
        red -= u[s : s + chunk, None]
        red -= v[None, :]
        # keep only the m most negative entries of each row
        part = np.argpartition(red, m - 1, axis=1)[:, :m] if m < B.shape[0] else \
            np.tile(np.arange(B.shape[0]), (red.shape[0], 1))
        r, jj = np.nonzero(np.take_along_axis(red, part, 1) < -tol + slack)
        rows.append(r + s)
        cols.append(part[r, jj])
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    if rows.size == 0:
        return rows, cols, np.zeros(0)
    cost = _pair_costs(za, va, yb, ub, rows, cols, eps, 2.0, 2.0)
    red = cost - u[rows] - v[cols]
    keep = red < -tol
    rows, cols, cost, red = rows[keep], cols[keep], cost[keep], red[keep]
    order = np.lexsort((red, rows))
    rows, cols, cost, red = rows[order], cols[order], cost[order], red[order]
    first = np.searchsorted(rows, rows, side="left")
    keep = (np.arange(rows.size) - first) < max_per_row
    return rows[keep], cols[keep], cost[keep]


def _csr(n, rows, cols, data):
    order = np.lexsort((cols, rows))
    rows, cols, data = rows[order], cols[order], data[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), rows, np.ascontiguousarray(cols), np.ascontiguousarray(data)


def _sparse_solve(n, rows, cols, data, warm=None):
    """Assignment on a candidate graph.

    Cold starts use column reduction plus a greedy tight matching.  A warm
    start ``(col4row, u, v)`` keeps the previous duals; rows that have an
    edge with negative reduced cost are unmatched and their ``u`` lowered,
    which restores feasibility without touching the rest of the matching.
    """
    indptr, rows, cols, data = _csr(n, rows, cols, data)
    if warm is None:
        v = np.full(n, np.inf)
        np.minimum.at(v, cols, data)
        v[~np.isfinite(v)] = 0.0
        col4row = np.full(n, -1, dtype=np.int64)
    else:
        col4row, _, v = (x.copy() for x in warm)
    red = data - v[cols]
    u = np.full(n, np.inf)
    np.minimum.at(u, rows, red)
    u[~np.isfinite(u)] = 0.0
    if warm is None:
        taken = np.zeros(n, dtype=bool)
        tight = np.flatnonzero(red - u[rows] <= 0.0)
        for r, cc in zip(rows[tight].tolist(), cols[tight].tolist()):
            if col4row[r] < 0 and not taken[cc]:
                col4row[r] = cc
                taken[cc] = True
    else:
        matched = col4row >= 0
        idx = np.flatnonzero(matched)
        # a matched row stays only if its edge is still a row minimum
        pos = np.searchsorted(rows * n + cols, idx * n + col4row[idx])
        stale = red[pos] > u[idx]
        col4row[idx[stale]] = -1
    status = _backend.kernels.lsap_sparse(indptr, cols, data, col4row, u, v)
    if status:
        raise InfeasibleError("candidate graph has no perfect matching")
    return col4row, u, v


def solve_assignment_points(za, va, yb, ub, eps: float, p: float = 2.0, q: float = 2.0,
                            k: int = 16, max_rounds: int = 100, return_duals: bool = False):
    """Exact assignment for ``c_ij = |z_i - y_j|^p + eps |v_i - u_j|^q`` without a dense matrix.

    Works on a sparse candidate graph: the k nearest targets of each row in
    the scaled space ``(y, sqrt(eps) u)`` plus the diagonal.  After each
    solve the graph grows by the neighbours of every row's current match,
    until the matching stops moving.  Every pair is then priced against the
    duals and violating pairs are added, until none remain, so the result
    is optimal for the full dense problem.  Returns ``(plan, cost)`` and
    optionally the duals ``(u, v)`` with ``u_i + v_j <= c_ij``.
    """
    za, va, yb, ub = (np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
                      for x in (za, va, yb, ub))
    n = za.shape[0]
    if yb.shape[0] != n or va.shape[0] != n or ub.shape[0] != n:
        raise ValueError("point-cloud assignment needs equal-size reference and target sets")
    if not eps > 0:
        raise ValueError("eps must be positive")
    A = np.hstack([za, math.sqrt(eps) * va])
    B = np.hstack([yb, math.sqrt(eps) * ub])
    k = min(k, n)
    near_b = _knn(B, B, k)
    keys = np.unique(np.concatenate([
        (np.repeat(np.arange(n), k) * n + _knn(A, B, k).ravel()),
        np.arange(n) * (n + 1),
    ]))
    rows, cols = keys // n, keys % n
    data = _pair_costs(za, va, yb, ub, rows, cols, eps, p, q)
    tol = 1e-11 * (1.0 + float(data.max()))
    expanding = True
    prev = None
    warm = None
    for _ in range(max_rounds):
        sigma, u, v = _sparse_solve(n, rows, cols, data, warm)
        warm = (sigma, u, v)
        if expanding:
            cand = np.repeat(np.arange(n), k) * n + near_b[sigma].ravel()
            fresh = np.setdiff1d(cand, keys, assume_unique=False)
            if fresh.size and (prev is None or np.any(sigma != prev)):
                prev = sigma
                new_rows, new_cols = fresh // n, fresh % n
            else:
                expanding = False
        if not expanding:
            if p == 2.0 and q == 2.0 and A.shape[1] > 8:
                new_rows, new_cols, _ = _pricing_blas(za, va, yb, ub, eps, u, v, tol, 8)
            else:
                new_rows, new_cols, _ = _backend.kernels.pricing_scan(
                    za, va, yb, ub, float(eps), float(p), float(q), u, v, tol, 8)
            if new_rows.size == 0:
                break
        keys = np.concatenate([keys, new_rows * n + new_cols])
        rows = np.concatenate([rows, new_rows])
        cols = np.concatenate([cols, new_cols])
        data = np.concatenate([data, _pair_costs(za, va, yb, ub, new_rows, new_cols, eps, p, q)])
        keys, first = np.unique(keys, return_index=True)
        rows, cols, data = rows[first], cols[first], data[first]
    else:
        raise RuntimeError("candidate refinement did not converge")
    plan = TransportPlan.from_permutation(sigma)
    cost = math.fsum(_pair_costs(za, va, yb, ub, np.arange(n), sigma, eps, p, q)) / n
    if return_duals:
        return plan, cost, (u, v)
    return plan, cost
