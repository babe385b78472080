"""Pure-numpy twins of the routines in ``_kernels.pyx``.

Signatures and return conventions match the compiled module exactly so the
two can be swapped by ``_backend``.  These are correct at any size but are
only fast enough for small problems.
"""

import heapq

import numpy as np
from scipy.linalg import solveh_banded


def lsap_dense(cost):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    u = np.zeros(n)
    v = np.zeros(n)
    for cur in range(n):
        shortest = np.full(n, np.inf)
        path = np.full(n, -1, dtype=np.int64)
        remaining = list(range(n - 1, -1, -1))
        sr = np.zeros(n, dtype=bool)
        sc = np.zeros(n, dtype=bool)
        min_val = 0.0
        i = cur
        sink = -1
        while sink == -1:
            sr[i] = True
            rem = np.asarray(remaining, dtype=np.int64)
            r = min_val + cost[i, rem] - u[i] - v[rem]
            better = r < shortest[rem]
            path[rem[better]] = i
            shortest[rem[better]] = r[better]
            vals = shortest[rem]
            lowest = vals.min()
            if not np.isfinite(lowest):
                return 1, col4row, u, v
            # scan-order tie rule of the compiled loop: last free tie, else first tie
            ties = np.flatnonzero(vals == lowest)
            free = ties[row4col[rem[ties]] == -1]
            index = int(free[-1]) if free.size else int(ties[0])
            min_val = lowest
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            sc[j] = True
            remaining[index] = remaining[-1]
            remaining.pop()
        u[cur] += min_val
        others = np.flatnonzero(sr)
        others = others[others != cur]
        u[others] += min_val - shortest[col4row[others]]
        v[sc] -= min_val - shortest[sc]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return 0, col4row, u, v


def lsap_sparse(indptr, indices, data, col4row, u, v):
    n = col4row.shape[0]
    row4col = np.full(n, -1, dtype=np.int64)
    matched = col4row >= 0
    row4col[col4row[matched]] = np.flatnonzero(matched)
    for cur in range(n):
        if col4row[cur] >= 0:
            continue
        dist = {}
        pred = {}
        done = set()
        heap = []
        srows = []
        min_val = 0.0
        i = cur
        while True:
            srows.append(i)
            ui = u[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = int(indices[k])
                if j in done:
                    continue
                r = min_val + data[k] - ui - v[j]
                if r < dist.get(j, np.inf):
                    dist[j] = r
                    pred[j] = i
                    heapq.heappush(heap, (r, j))
            j = -1
            while heap:
                d, jj = heapq.heappop(heap)
                if jj not in done and d == dist[jj]:
                    j = jj
                    break
            if j < 0:
                return 1
            min_val = dist[j]
            done.add(j)
            if row4col[j] == -1:
                sink = j
                break
            i = int(row4col[j])
        u[cur] += min_val
        for i in srows[1:]:
            u[i] += min_val - dist[int(col4row[i])]
        for j in done:
            v[j] -= min_val - dist[j]
        j = sink
        while True:
            i = pred[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return 0


def pricing_scan(za, va, yb, ub, eps, p, q, u, v, tol, max_per_row, chunk=256):
    n = za.shape[0]
    rows, cols, costs = [], [], []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        s1 = ((za[start:stop, None, :] - yb[None, :, :]) ** 2).sum(-1)
        s2 = ((va[start:stop, None, :] - ub[None, :, :]) ** 2).sum(-1)
        if p != 2.0:
            s1 = np.sqrt(s1) ** p
        if q != 2.0:
            s2 = np.sqrt(s2) ** q
        c = s1 + eps * s2
        red = c - u[start:stop, None] - v[None, :]
        for r in range(stop - start):
            bad = np.flatnonzero(red[r] < -tol)
            if bad.size > max_per_row:
                bad = bad[np.argsort(red[r, bad], kind="stable")[:max_per_row]]
            rows.extend([start + r] * bad.size)
            cols.extend(bad.tolist())
            costs.extend(c[r, bad].tolist())
    return (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
            np.asarray(costs, dtype=np.float64))


def darcy_solve(logk, f, h):
    ny, nx = logk.shape
    mx, my = nx - 2, ny - 2
    p = np.zeros((ny, nx))
    if mx <= 0 or my <= 0:
        return 0, p
    kap = np.exp(logk)

    def hmean(a, b):
        return 2.0 * a * b / (a + b)

    kc = kap[1:-1, 1:-1]
    ke = hmean(kc, kap[1:-1, 2:])
    kw = hmean(kc, kap[1:-1, :-2])
    kn = hmean(kc, kap[2:, 1:-1])
    ks = hmean(kc, kap[:-2, 1:-1])
    n = mx * my
    inv_h2 = 1.0 / (h * h)
    # upper banded storage for solveh_banded: ab[bw + i - j, j] = A[i, j]
    ab = np.zeros((mx + 1, n))
    ab[mx] = ((ke + kw + kn + ks) * inv_h2).ravel()
    west = (-kw * inv_h2).copy()
    west[:, 0] = 0.0
    ab[mx - 1, 1:] = west.ravel()[1:]
    ab[0, mx:] = (-ks * inv_h2).ravel()[mx:]
    try:
        sol = solveh_banded(ab, f[1:-1, 1:-1].ravel().copy())
    except np.linalg.LinAlgError:
        return 1, p
    p[1:-1, 1:-1] = sol.reshape(my, mx)
    return 0, p
