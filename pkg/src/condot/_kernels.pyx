# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a pure-numpy twin in ``_fallback.py`` with the same
signature and return convention; ``_backend.py`` picks one at import.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, sqrt, pow

cnp.import_array()

ctypedef cnp.int64_t idx_t


def lsap_dense(double[:, ::1] cost):
    """Shortest augmenting path assignment on a dense square matrix.

    Returns ``(status, col4row, u, v)``; status 0 is success, 1 means no
    finite-cost perfect matching exists.  ``u[i] + v[j] <= cost[i, j]``
    holds on exit with equality on matched pairs.
    """
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t i, j, it, cur, index, num_remaining, sink, tmp
    cdef double min_val, lowest, r
    col4row_a = np.full(n, -1, dtype=np.int64)
    row4col_a = np.full(n, -1, dtype=np.int64)
    u_a = np.zeros(n)
    v_a = np.zeros(n)
    shortest_a = np.empty(n)
    path_a = np.empty(n, dtype=np.int64)
    remaining_a = np.empty(n, dtype=np.int64)
    sr_a = np.empty(n, dtype=np.uint8)
    sc_a = np.empty(n, dtype=np.uint8)
    cdef idx_t[::1] col4row = col4row_a
    cdef idx_t[::1] row4col = row4col_a
    cdef double[::1] u = u_a
    cdef double[::1] v = v_a
    cdef double[::1] shortest = shortest_a
    cdef idx_t[::1] path = path_a
    cdef idx_t[::1] remaining = remaining_a
    cdef cnp.uint8_t[::1] sr = sr_a
    cdef cnp.uint8_t[::1] sc = sc_a

    for cur in range(n):
        for j in range(n):
            shortest[j] = INFINITY
            path[j] = -1
            remaining[j] = n - 1 - j
            sr[j] = 0
            sc[j] = 0
        num_remaining = n
        min_val = 0.0
        i = cur
        sink = -1
        while sink == -1:
            sr[i] = 1
            index = -1
            lowest = INFINITY
            for it in range(num_remaining):
                j = remaining[it]
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = it
            min_val = lowest
            if min_val == INFINITY or index < 0:
                return 1, col4row_a, u_a, v_a
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            sc[j] = 1
            num_remaining -= 1
            remaining[index] = remaining[num_remaining]

        u[cur] += min_val
        for i in range(n):
            if sr[i] and i != cur:
                u[i] += min_val - shortest[col4row[i]]
        for j in range(n):
            if sc[j]:
                v[j] -= min_val - shortest[j]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            tmp = col4row[i]
            col4row[i] = j
            j = tmp
            if i == cur:
                break
    return 0, col4row_a, u_a, v_a


cdef inline void _heap_push(double[::1] hkey, idx_t[::1] hval, Py_ssize_t *size,
                            double key, idx_t val) noexcept nogil:
    cdef Py_ssize_t pos = size[0]
    cdef Py_ssize_t parent
    size[0] += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if hkey[parent] < key or (hkey[parent] == key and hval[parent] <= val):
            break
        hkey[pos] = hkey[parent]
        hval[pos] = hval[parent]
        pos = parent
    hkey[pos] = key
    hval[pos] = val


cdef inline void _heap_pop(double[::1] hkey, idx_t[::1] hval, Py_ssize_t *size,
                           double *key, idx_t *val) noexcept nogil:
    cdef Py_ssize_t pos = 0
    cdef Py_ssize_t child, last
    cdef double lk
    cdef idx_t lv
    key[0] = hkey[0]
    val[0] = hval[0]
    size[0] -= 1
    last = size[0]
    if last == 0:
        return
    lk = hkey[last]
    lv = hval[last]
    while True:
        child = 2 * pos + 1
        if child >= last:
            break
        if child + 1 < last and (hkey[child + 1] < hkey[child] or
                                 (hkey[child + 1] == hkey[child] and hval[child + 1] < hval[child])):
            child += 1
        if lk < hkey[child] or (lk == hkey[child] and lv <= hval[child]):
            break
        hkey[pos] = hkey[child]
        hval[pos] = hval[child]
        pos = child
    hkey[pos] = lk
    hval[pos] = lv


def lsap_sparse(idx_t[::1] indptr, idx_t[::1] indices, double[::1] data,
                idx_t[::1] col4row, double[::1] u, double[::1] v):
    """Shortest augmenting paths over a CSR candidate graph, in place.

    ``col4row`` may hold a partial matching whose edges are tight under
    ``(u, v)``; ``(u, v)`` must be feasible on every edge.  Free rows are
    augmented one at a time with a heap-based Dijkstra.  Returns 0 on
    success or 1 when some row cannot reach a free column.
    """
    cdef Py_ssize_t n = col4row.shape[0]
    cdef Py_ssize_t i, j, k, cur, sink, tmp, n_sr, n_touched, hsize, t
    cdef double min_val, r, d, cu
    cdef idx_t jj
    row4col_a = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] row4col = row4col_a
    for i in range(n):
        if col4row[i] >= 0:
            row4col[col4row[i]] = i
    dist_a = np.full(n, INFINITY)
    cdef double[::1] dist = dist_a
    pred_a = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] pred = pred_a
    done_a = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] done = done_a
    touched_a = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] touched = touched_a
    srows_a = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] srows = srows_a
    nnz = indices.shape[0]
    hkey_a = np.empty(nnz + n + 1)
    hval_a = np.empty(nnz + n + 1, dtype=np.int64)
    cdef double[::1] hkey = hkey_a
    cdef idx_t[::1] hval = hval_a
    cdef int status = 0

    with nogil:
        for cur in range(n):
            if col4row[cur] >= 0:
                continue
            n_touched = 0
            n_sr = 0
            hsize = 0
            min_val = 0.0
            i = cur
            sink = -1
            while True:
                srows[n_sr] = i
                n_sr += 1
                cu = u[i]
                for k in range(indptr[i], indptr[i + 1]):
                    j = indices[k]
                    if done[j]:
                        continue
                    r = min_val + data[k] - cu - v[j]
                    if r < dist[j]:
                        if dist[j] == INFINITY:
                            touched[n_touched] = j
                            n_touched += 1
                        dist[j] = r
                        pred[j] = i
                        _heap_push(hkey, hval, &hsize, r, j)
                j = -1
                while hsize > 0:
                    _heap_pop(hkey, hval, &hsize, &d, &jj)
                    if not done[jj] and d == dist[jj]:
                        j = jj
                        break
                if j < 0:
                    status = 1
                    break
                min_val = dist[j]
                done[j] = 1
                if row4col[j] == -1:
                    sink = j
                    break
                i = row4col[j]
            if status:
                break
            u[cur] += min_val
            for t in range(1, n_sr):
                i = srows[t]
                u[i] += min_val - dist[col4row[i]]
            for t in range(n_touched):
                j = touched[t]
                if done[j]:
                    v[j] -= min_val - dist[j]
                dist[j] = INFINITY
                done[j] = 0
            j = sink
            while True:
                i = pred[j]
                row4col[j] = i
                tmp = col4row[i]
                col4row[i] = j
                j = tmp
                if i == cur:
                    break
    return status


def pricing_scan(double[:, ::1] za, double[:, ::1] va, double[:, ::1] yb,
                 double[:, ::1] ub, double eps, double p, double q,
                 double[::1] u, double[::1] v, double tol, Py_ssize_t max_per_row):
    """Find pairs whose reduced cost ``c - u - v`` is below ``-tol``.

    The cost is ``|z - y|^p + eps |v - u|^q`` evaluated on the fly, so the
    dense matrix is never formed.  Targets are visited in order of their
    first y-coordinate and each row stops once that coordinate alone makes
    the cost exceed ``u_i + max(v) - tol``.  At most ``max_per_row`` of the
    most negative pairs are reported per row.  Returns ``(rows, cols, costs)``.
    """
    cdef Py_ssize_t n = za.shape[0]
    cdef Py_ssize_t m = yb.shape[0]
    cdef Py_ssize_t dy = za.shape[1]
    cdef Py_ssize_t dv = va.shape[1]
    cdef Py_ssize_t i, j, k, t, worst, pos, start, direction
    cdef double s1, s2, diff, c, red, ui, bound, vmax, d0
    cdef bint p2 = p == 2.0
    cdef bint q2 = q == 2.0
    order_a = np.argsort(np.asarray(yb[:, 0]), kind="stable").astype(np.int64)
    cdef idx_t[::1] order = order_a
    key_a = np.ascontiguousarray(np.asarray(yb[:, 0])[order_a])
    cdef double[::1] key = key_a
    vmax = np.max(np.asarray(v))
    best_red_a = np.empty(max_per_row)
    best_col_a = np.empty(max_per_row, dtype=np.int64)
    best_cost_a = np.empty(max_per_row)
    cdef double[::1] best_red = best_red_a
    cdef idx_t[::1] best_col = best_col_a
    cdef double[::1] best_cost = best_cost_a
    cdef Py_ssize_t nbest
    rows = []
    cols = []
    costs = []
    for i in range(n):
        nbest = 0
        ui = u[i]
        bound = ui + vmax - tol
        start = np.searchsorted(key_a, za[i, 0])
        with nogil:
            for direction in range(2):
                pos = start if direction == 0 else start - 1
                while 0 <= pos < m:
                    d0 = za[i, 0] - key[pos]
                    d0 = d0 * d0
                    if not p2:
                        d0 = pow(sqrt(d0), p)
                    if d0 >= bound:
                        break
                    j = order[pos]
                    pos = pos + 1 if direction == 0 else pos - 1
                    s1 = 0.0
                    for k in range(dy):
                        diff = za[i, k] - yb[j, k]
                        s1 += diff * diff
                    s2 = 0.0
                    for k in range(dv):
                        diff = va[i, k] - ub[j, k]
                        s2 += diff * diff
                    if not p2:
                        s1 = pow(sqrt(s1), p)
                    if not q2:
                        s2 = pow(sqrt(s2), q)
                    c = s1 + eps * s2
                    red = c - ui - v[j]
                    if red < -tol:
                        if nbest < max_per_row:
                            best_red[nbest] = red
                            best_col[nbest] = j
                            best_cost[nbest] = c
                            nbest += 1
                        else:
                            worst = 0
                            for t in range(1, nbest):
                                if best_red[t] > best_red[worst]:
                                    worst = t
                            if red < best_red[worst]:
                                best_red[worst] = red
                                best_col[worst] = j
                                best_cost[worst] = c
        for t in range(nbest):
            rows.append(i)
            cols.append(best_col[t])
            costs.append(best_cost[t])
    return (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
            np.asarray(costs, dtype=np.float64))


def darcy_solve(double[:, ::1] logk, double[:, ::1] f, double h):
    """Five-point solve of ``-div(exp(logk) grad p) = f`` with ``p = 0`` on the boundary.

    Interface coefficients are harmonic means of the nodal ``exp(logk)``.
    The SPD system is factored by banded Cholesky (bandwidth ``nx - 2``).
    Returns ``(status, p)``; status 1 flags a non-positive pivot.
    """
    cdef Py_ssize_t ny = logk.shape[0]
    cdef Py_ssize_t nx = logk.shape[1]
    cdef Py_ssize_t mx = nx - 2
    cdef Py_ssize_t my = ny - 2
    cdef Py_ssize_t n = mx * my
    cdef Py_ssize_t bw = mx
    cdef Py_ssize_t a, b, r, c, kk, lo, col, row
    cdef double s, ke, kw, kn, ks, kc, inv_h2 = 1.0 / (h * h)
    p_a = np.zeros((ny, nx))
    cdef double[:, ::1] p = p_a
    if n <= 0:
        return 0, p_a
    kap_a = np.exp(np.asarray(logk))
    cdef double[:, ::1] kap = kap_a
    # band[r, d] holds A[r, r - d] for d = 0..bw
    band_a = np.zeros((n, bw + 1))
    cdef double[:, ::1] band = band_a
    rhs_a = np.empty(n)
    cdef double[::1] rhs = rhs_a
    cdef int status = 0
    with nogil:
        for b in range(my):
            for a in range(mx):
                r = b * mx + a
                kc = kap[b + 1, a + 1]
                ke = 2.0 * kc * kap[b + 1, a + 2] / (kc + kap[b + 1, a + 2])
                kw = 2.0 * kc * kap[b + 1, a] / (kc + kap[b + 1, a])
                kn = 2.0 * kc * kap[b + 2, a + 1] / (kc + kap[b + 2, a + 1])
                ks = 2.0 * kc * kap[b, a + 1] / (kc + kap[b, a + 1])
                band[r, 0] = (ke + kw + kn + ks) * inv_h2
                if a > 0:
                    band[r, 1] = -kw * inv_h2
                if b > 0:
                    band[r, bw] = -ks * inv_h2
                rhs[r] = f[b + 1, a + 1]
        # in-place banded Cholesky: L stored in band with the same layout
        for r in range(n):
            lo = r - bw
            if lo < 0:
                lo = 0
            for col in range(lo, r + 1):
                s = band[r, r - col]
                for kk in range(lo, col):
                    if col - kk <= bw:
                        s -= band[r, r - kk] * band[col, col - kk]
                if col == r:
                    if s <= 0.0:
                        status = 1
                        break
                    band[r, 0] = sqrt(s)
                else:
                    band[r, r - col] = s / band[col, 0]
            if status:
                break
        if not status:
            for r in range(n):
                s = rhs[r]
                lo = r - bw
                if lo < 0:
                    lo = 0
                for kk in range(lo, r):
                    s -= band[r, r - kk] * rhs[kk]
                rhs[r] = s / band[r, 0]
            for row in range(n - 1, -1, -1):
                s = rhs[row]
                lo = row + bw
                if lo > n - 1:
                    lo = n - 1
                for kk in range(row + 1, lo + 1):
                    s -= band[kk, kk - row] * rhs[kk]
                rhs[row] = s / band[row, 0]
            for b in range(my):
                for a in range(mx):
                    p[b + 1, a + 1] = rhs[b * mx + a]
    return status, p_a
