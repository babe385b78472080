import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment, linprog

from condot import _backend
from condot.ot_core import (
    FORBIDDEN,
    DualPotentials,
    InfeasibleError,
    NotOptimalError,
    ProblemTooLargeError,
    TransportPlan,
    brute_force_ot,
    extract_duals,
    solve_assignment,
    solve_assignment_points,
    solve_lp,
    solve_sinkhorn,
)


def lp_oracle(c, a, b):
    """Independent LP via scipy's HiGHS."""
    n, m = c.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        A[n + j, j::m] = 1
    finite = np.isfinite(c.ravel())
    res = linprog(c.ravel()[finite], A_eq=A[:, finite], b_eq=np.concatenate([a, b]),
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def test_identity_and_anti_diagonal(backend):
    plan, cost = solve_assignment([[0, 1], [1, 0]])
    assert plan.sigma.tolist() == [0, 1] and cost == 0
    plan, cost = solve_assignment([[5, 0], [0, 5]])
    assert plan.sigma.tolist() == [1, 0] and cost == 0


@pytest.mark.parametrize("n", [1, 2, 5, 30, 120])
def test_assignment_matches_scipy(backend, n):
    rng = np.random.default_rng(n)
    c = rng.random((n, n))
    r, col = linear_sum_assignment(c)
    _, cost = solve_assignment(c)
    assert cost == pytest.approx(c[r, col].sum() / n, abs=1e-12)


def test_six_by_six_exhaustive(backend):
    rng = np.random.default_rng(6)
    c = rng.random((6, 6))
    best = min(sum(c[i, p[i]] for i in range(6)) for p in itertools.permutations(range(6))) / 6
    assert solve_assignment(c)[1] == pytest.approx(best, abs=1e-12)


def test_lex_smallest_among_ties():
    plan, cost = solve_assignment(np.zeros((4, 4)))
    assert plan.sigma.tolist() == [0, 1, 2, 3] and cost == 0
    c = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    # optima: (2,?,0) and (?,2,0) with cost 1/3; smallest is [1, 2, 0]
    plan, cost = solve_assignment(c)
    assert plan.sigma.tolist() == [1, 2, 0]
    assert cost == pytest.approx(1 / 3)


def test_forbidden_entries():
    c = np.array([[FORBIDDEN, 1.0], [2.0, FORBIDDEN]])
    plan, cost = solve_assignment(c)
    assert plan.sigma.tolist() == [1, 0] and cost == 1.5
    with pytest.raises(InfeasibleError):
        solve_assignment([[FORBIDDEN, FORBIDDEN], [1.0, 2.0]])


def test_non_square_rejected():
    with pytest.raises(ValueError):
        solve_assignment(np.zeros((2, 3)))


def test_assignment_duals_certify(backend):
    rng = np.random.default_rng(3)
    c = rng.random((12, 12))
    plan, cost, duals = solve_assignment(c, return_duals=True)
    a = np.full(12, 1 / 12)
    assert duals.max_violation(c) <= 1e-9
    assert duals.value(a, a) == pytest.approx(cost, abs=1e-12)


def test_lp_forced_and_two_to_one():
    plan, cost = solve_lp([[3.0]], [1.0], [1.0])
    assert cost == 3.0 and plan.dense().tolist() == [[1.0]]
    plan, _ = solve_lp([[1.0], [2.0]], [0.5, 0.5], [1.0])
    np.testing.assert_allclose(plan.dense(), [[0.5], [0.5]])


@pytest.mark.parametrize("seed", range(5))
def test_lp_matches_highs(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(2, 7, 2)
    c = rng.random((n, m))
    a = rng.random(n) + 0.1
    b = rng.random(m) + 0.1
    a /= a.sum()
    b /= b.sum()
    plan, cost = solve_lp(c, a, b)
    assert cost == pytest.approx(lp_oracle(c, a, b), abs=1e-10)
    assert plan.marginal_violation() <= 1e-10


def test_lp_uniform_equals_assignment():
    rng = np.random.default_rng(44)
    c = rng.random((4, 4))
    a = np.full(4, 0.25)
    assert solve_lp(c, a, a)[1] == pytest.approx(solve_assignment(c)[1], abs=1e-12)


def test_lp_with_forbidden_cells():
    c = np.array([[1.0, FORBIDDEN], [FORBIDDEN, 2.0], [0.5, 0.5]])
    a = np.array([0.25, 0.25, 0.5])
    b = np.array([0.5, 0.5])
    plan, cost = solve_lp(c, a, b)
    assert cost == pytest.approx(lp_oracle(c, a, b), abs=1e-12)
    assert plan.dense()[0, 1] == 0 and plan.dense()[1, 0] == 0
    with pytest.raises(InfeasibleError):
        solve_lp(np.array([[1.0, FORBIDDEN], [2.0, FORBIDDEN]]), [0.5, 0.5], [0.5, 0.5])


def test_sinkhorn_trivial_and_close_to_lp():
    plan, info = solve_sinkhorn([[2.0]], [1.0], [1.0], 0.3)
    assert plan.dense().tolist() == [[1.0]] and info["converged"]
    rng = np.random.default_rng(2)
    c = rng.random((4, 4))
    a = np.full(4, 0.25)
    lp = solve_lp(c, a, a)[1]
    gaps = []
    for reg in (1e-1, 1e-2, 1e-3):
        plan, info = solve_sinkhorn(c, a, a, reg, max_iters=20000)
        assert info["violation"] <= 1e-6
        gaps.append(plan.cost(c) - lp)
    assert gaps[-1] <= 0.02 * lp
    assert all(g2 <= g1 + 1e-12 for g1, g2 in zip(gaps, gaps[1:]))


def test_extract_duals_forced():
    d = extract_duals([[3.0]], TransportPlan.from_matrix([[1.0]]))
    assert d.phi[0] - d.psi[0] == 3.0
    assert d.value([1.0], [1.0]) == 3.0


def test_extract_duals_slackness():
    rng = np.random.default_rng(10)
    c = rng.random((10, 10))
    plan, cost = solve_assignment(c)
    d = extract_duals(c, plan)
    rows, cols = plan.support()
    np.testing.assert_allclose(d.phi[cols] - d.psi[rows], c[rows, cols], atol=1e-8)
    assert d.max_violation(c) <= 1e-9


def test_extract_duals_rejects_suboptimal():
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(NotOptimalError):
        extract_duals(c, TransportPlan.from_permutation([1, 0]))


def test_brute_force_cases():
    assert brute_force_ot(np.zeros((3, 3))) == 0
    c = np.full((3, 3), FORBIDDEN)
    c[0, 2], c[1, 0], c[2, 1] = 1.0, 2.0, 3.0
    assert brute_force_ot(c) == 2.0
    with pytest.raises(ProblemTooLargeError):
        brute_force_ot(np.zeros((9, 9)))


def test_brute_force_vertices_match_lp():
    rng = np.random.default_rng(1)
    c = rng.random((2, 3))
    a = np.array([0.3, 0.7])
    b = np.array([0.2, 0.5, 0.3])
    assert brute_force_ot(c, a, b) == pytest.approx(lp_oracle(c, a, b), abs=1e-12)


def test_brute_force_agrees_on_5x5():
    rng = np.random.default_rng(55)
    for _ in range(20):
        c = rng.random((5, 5))
        assert brute_force_ot(c) == pytest.approx(solve_assignment(c)[1], abs=1e-12)


def test_plan_json_roundtrip():
    p = TransportPlan.from_permutation([2, 0, 1])
    obj = json.loads(p.to_json())
    assert obj == {"form": "permutation", "sigma": [2, 0, 1]}
    assert TransportPlan.from_json(p.to_json()).sigma.tolist() == [2, 0, 1]
    m = TransportPlan.from_matrix([[0.25, 0.25], [0.5, 0.0]])
    obj = json.loads(m.to_json())
    assert obj["rows"] == 2 and obj["cols"] == 2 and obj["data"] == [0.25, 0.25, 0.5, 0.0]
    np.testing.assert_array_equal(TransportPlan.from_json(m.to_json()).dense(), m.dense())


def test_plan_rejects_non_permutation():
    with pytest.raises(ValueError):
        TransportPlan.from_permutation([0, 0, 1])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(0, 10, allow_nan=False)),
       st.permutations(range(5)))
def test_assignment_invariances(c, perm):
    _, cost = solve_assignment(c)
    assert solve_assignment(7.3 * c)[1] == pytest.approx(7.3 * cost, abs=1e-9)
    p = np.array(perm)
    assert solve_assignment(c[np.ix_(p, p)])[1] == pytest.approx(cost, abs=1e-12)
    assert brute_force_ot(c) == pytest.approx(cost, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(0, 5, allow_nan=False)))
def test_weak_duality(c):
    plan, cost, duals = solve_assignment(c, return_duals=True)
    a = np.full(4, 0.25)
    shifted = DualPotentials(duals.psi + 0.1, duals.phi)
    assert shifted.value(a, a) <= cost + 1e-12
    assert abs(duals.value(a, a) - cost) <= 1e-8 * (1 + abs(cost))


# ---------------------------------------------------------------- point-cloud solver

def _dense_cost(za, va, yb, ub, eps):
    return ((za[:, None] - yb[None]) ** 2).sum(-1) + eps * ((va[:, None] - ub[None]) ** 2).sum(-1)


@pytest.mark.parametrize("dims,eps", [((1, 1), 5e-3), ((2, 1), 0.3), ((10, 3), 0.1)])
def test_points_solver_matches_dense(backend, dims, eps):
    rng = np.random.default_rng(sum(dims))
    n = 300
    za = rng.normal(size=(n, dims[0]))
    yb = za.copy()
    va = rng.normal(size=(n, dims[1]))
    ub = rng.uniform(-1, 1, (n, dims[1]))
    c = _dense_cost(za, va, yb, ub, eps)
    r, col = linear_sum_assignment(c)
    plan, cost, (u, v) = solve_assignment_points(za, va, yb, ub, eps, k=4, return_duals=True)
    assert cost == pytest.approx(c[r, col].sum() / n, abs=1e-12)
    assert (c - u[:, None] - v[None, :]).min() >= -1e-9


def test_points_solver_non_quadratic_exponents():
    rng = np.random.default_rng(8)
    n = 150
    za = rng.random((n, 1))
    va, ub = rng.random((n, 1)), rng.random((n, 1))
    c = np.abs(za - za.T) ** 1.5 + 0.2 * np.abs(va - ub.T) ** 3
    r, col = linear_sum_assignment(c)
    _, cost = solve_assignment_points(za, va, za, ub, 0.2, 1.5, 3.0, k=3)
    assert cost == pytest.approx(c[r, col].sum() / n, abs=1e-12)


def test_kernel_backends_agree():
    from condot import _fallback

    try:
        from condot import _kernels
    except ImportError:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(0)
    c = np.ascontiguousarray(rng.integers(0, 4, (40, 40)).astype(float))
    s1, a1, *_ = _kernels.lsap_dense(c)
    s2, a2, *_ = _fallback.lsap_dense(c)
    assert s1 == s2 == 0
    assert a1.tolist() == a2.tolist()
    za, va, yb, ub = (rng.normal(size=(60, 1)) for _ in range(4))
    u, v = 2.0 * rng.random(60), np.zeros(60)
    r1 = _kernels.pricing_scan(za, va, yb, ub, 0.1, 2.0, 2.0, u, v, 1e-12, 5)
    r2 = _fallback.pricing_scan(za, va, yb, ub, 0.1, 2.0, 2.0, u, v, 1e-12, 5)
    assert r1[0].size > 0
    assert sorted(zip(*[x.tolist() for x in r1[:2]])) == sorted(zip(*[x.tolist() for x in r2[:2]]))
