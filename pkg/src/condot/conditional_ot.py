"""Conditional (y-constrained) Kantorovich problems on discrete measures.

The y-block of reference and target atoms must coincide as weighted
multisets.  Atoms are grouped by *exact* coordinate equality, which is
sound because :func:`condot.measures.pair_reference` copies the y-atoms
bitwise; no tolerance-based grouping is offered on purpose.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .measures import EmpiricalMeasure, make_empirical
from .ot_core import (
    FORBIDDEN,
    DualPotentials,
    InfeasibleError,
    TransportPlan,
    extract_duals,
    solve_assignment,
    solve_assignment_points,
    solve_lp,
)

VuCost = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_EPSILONS = (1.0, 1e-1, 1e-2, 5e-3, 1e-3, 1e-4)

#: above this size perturbed problems go to the sparse point-cloud solver
DENSE_MAX_N = 1500


def quadratic_cost(V: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Pairwise ``|v_i - u_j|^2``."""
    V = np.atleast_2d(V)
    U = np.atleast_2d(U)
    return ((V[:, None, :] - U[None, :, :]) ** 2).sum(-1)


def power_cost(q: float) -> VuCost:
    if q == 2.0:
        return quadratic_cost

    def cost(V, U):
        return np.sqrt(quadratic_cost(V, U)) ** q

    return cost


@dataclass(frozen=True)
class PerturbedCostSpec:
    """``|z - y|^p + epsilon |v - u|^q`` with ``p = y_exponent``, ``q = u_exponent``."""

    epsilon: float
    y_exponent: float = 2.0
    u_exponent: float = 2.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be a positive finite number, got {self.epsilon}")
        for name in ("y_exponent", "u_exponent"):
            val = getattr(self, name)
            if not val > 1:
                raise ValueError(f"{name} must exceed 1, got {val}")


def _check_blocks(ref: EmpiricalMeasure, tgt: EmpiricalMeasure):
    if ref.y_dim != tgt.y_dim or ref.y_dim == 0:
        raise ValueError("reference and target must share a nonempty y-block")
    if ref.x.shape[1] != tgt.x.shape[1]:
        raise ValueError(
            f"v-block has dimension {ref.x.shape[1]} but u-block has {tgt.x.shape[1]}"
        )


def build_perturbed_cost(ref: EmpiricalMeasure, tgt: EmpiricalMeasure,
                         spec: PerturbedCostSpec) -> np.ndarray:
    _check_blocks(ref, tgt)
    cy = np.sqrt(quadratic_cost(ref.y, tgt.y))
    cu = np.sqrt(quadratic_cost(ref.x, tgt.x))
    return cy ** spec.y_exponent + spec.epsilon * cu ** spec.u_exponent


@dataclass
class SliceDecomposition:
    """Groups of equal y-atoms and the optimal plan inside each group.

    ``groups[s]`` is ``(y_atom, ref_indices, tgt_indices)``; ``slice_plans[s]``
    couples the group's atoms with weights renormalized to one, and
    ``masses[s]`` is the group's share of the total mass.
    """

    groups: list
    slice_plans: list = field(default_factory=list)
    slice_costs: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    n_ref: int = 0
    n_tgt: int = 0

    @property
    def total_cost(self) -> float:
        return math.fsum(m * c for m, c in zip(self.masses, self.slice_costs))

    def global_plan(self) -> np.ndarray:
        """Dense ``n_ref x n_tgt`` coupling assembled from the slices."""
        P = np.zeros((self.n_ref, self.n_tgt))
        for (_, ri, ti), plan, mass in zip(self.groups, self.slice_plans, self.masses):
            P[np.ix_(ri, ti)] = mass * plan.dense()
        return P

    def permutation(self) -> np.ndarray:
        """Global ``sigma`` (reference atom -> target atom) when every slice is a permutation."""
        sigma = np.full(self.n_ref, -1, dtype=np.int64)
        for (_, ri, ti), plan in zip(self.groups, self.slice_plans):
            if plan.form != "permutation":
                raise ValueError("slice plan is not a permutation")
            sigma[ri] = ti[plan.sigma]
        return sigma

    def to_json(self) -> str:
        out = []
        for (y, ri, ti), plan in zip(self.groups, self.slice_plans):
            entry = {"y": y.tolist(), "ref": ri.tolist(), "tgt": ti.tolist()}
            entry["plan"] = json.loads(plan.to_json())
            out.append(entry)
        return json.dumps({"n_ref": self.n_ref, "n_tgt": self.n_tgt, "groups": out})


def group_by_y(ref: EmpiricalMeasure, tgt: EmpiricalMeasure) -> list:
    """Partition both index sets by exact y-atom; raises if the y-marginals differ."""
    _check_blocks(ref, tgt)
    all_y = np.vstack([ref.y, tgt.y])
    atoms, inverse = np.unique(all_y, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    r_lab, t_lab = inverse[: len(ref)], inverse[len(ref):]
    groups = []
    for g in range(atoms.shape[0]):
        ri = np.flatnonzero(r_lab == g)
        ti = np.flatnonzero(t_lab == g)
        mr = math.fsum(ref.weights[ri])
        mt = math.fsum(tgt.weights[ti])
        if abs(mr - mt) > 1e-12:
            raise InfeasibleError(
                f"y-marginals differ at atom {atoms[g].tolist()}: "
                f"reference mass {mr:.6g} vs target mass {mt:.6g}"
            )
        groups.append((atoms[g], ri, ti))
    return groups


def build_chi_cost(ref: EmpiricalMeasure, tgt: EmpiricalMeasure,
                   base_cost_on_vu: VuCost = quadratic_cost) -> np.ndarray:
    """Base cost on the diagonal ``z == y`` and :data:`FORBIDDEN` everywhere else."""
    _check_blocks(ref, tgt)
    same = np.all(ref.y[:, None, :] == tgt.y[None, :, :], axis=-1)
    if not same.any(1).all() or not same.any(0).all():
        raise InfeasibleError("some atom has no partner with the same y (y-marginals differ)")
    group_by_y(ref, tgt)
    c = np.full(same.shape, FORBIDDEN)
    base = base_cost_on_vu(ref.x, tgt.x)
    c[same] = base[same]
    return c


def _solve_slice(ref, tgt, group, vu_cost):
    _, ri, ti = group
    c = vu_cost(ref.x[ri], tgt.x[ti])
    a = ref.weights[ri]
    b = tgt.weights[ti]
    if ri.size == ti.size and np.all(a == a[0]) and np.all(b == a[0]):
        plan, cost = solve_assignment(c)
    else:
        plan, cost = solve_lp(c, a / a.sum(), b / b.sum())
    return plan, cost


def solve_conditional_kantorovich(ref: EmpiricalMeasure, tgt: EmpiricalMeasure,
                                  vu_cost: VuCost = quadratic_cost, workers: int = 1):
    """Solve one independent OT problem per y-slice.

    Returns ``(SliceDecomposition, total_cost)``.  Slices may be solved in a
    thread pool; results are assembled in slice order regardless.
    """
    groups = group_by_y(ref, tgt)
    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda g: _solve_slice(ref, tgt, g, vu_cost), groups))
    else:
        results = [_solve_slice(ref, tgt, g, vu_cost) for g in groups]
    dec = SliceDecomposition(groups=groups, n_ref=len(ref), n_tgt=len(tgt))
    for g, (plan, cost) in zip(groups, results):
        dec.slice_plans.append(plan)
        dec.slice_costs.append(cost)
        dec.masses.append(math.fsum(ref.weights[g[1]]))
    return dec, dec.total_cost


def solve_perturbed(ref: EmpiricalMeasure, tgt: EmpiricalMeasure, spec: PerturbedCostSpec,
                    *, dense_max_n: int = DENSE_MAX_N, k: int = 64):
    """Unconstrained OT under the epsilon-perturbed cost; returns ``(plan, cost)``.

    Small problems build the dense cost; larger ones use the exact
    point-cloud solver, which never materializes the matrix.
    """
    _check_blocks(ref, tgt)
    n = len(ref)
    if n != len(tgt) or not (ref.is_uniform and tgt.is_uniform):
        raise ValueError("perturbed solve needs equal-size uniform measures")
    if n <= dense_max_n:
        return solve_assignment(build_perturbed_cost(ref, tgt, spec))
    return solve_assignment_points(ref.y, ref.x, tgt.y, tgt.x, spec.epsilon,
                                   spec.y_exponent, spec.u_exponent, k=k)


@dataclass(frozen=True)
class SweepPoint:
    epsilon: float
    plan: TransportPlan
    distance: float
    y_cost: float


def _y_transport_cost(ref, tgt, sigma, p):
    d = np.sqrt(((ref.y - tgt.y[sigma]) ** 2).sum(1)) ** p
    return math.fsum(d) / len(ref)


def epsilon_sweep(ref: EmpiricalMeasure, tgt: EmpiricalMeasure,
                  eps_list: Sequence[float] = DEFAULT_EPSILONS, *,
                  y_exponent: float = 2.0, u_exponent: float = 2.0, workers: int = 1):
    """Distance from each epsilon-optimal map to the conditional optimal map.

    The distance is the weighted L2 gap between the target atoms that the
    two permutations assign to each reference atom.  Also records the
    y-transport part of each epsilon plan.
    """
    dec, _ = solve_conditional_kantorovich(ref, tgt, power_cost(u_exponent))
    sigma_star = dec.permutation()
    w = ref.weights

    def one(eps):
        spec = PerturbedCostSpec(eps, y_exponent, u_exponent)
        plan, _ = solve_perturbed(ref, tgt, spec)
        gap = ((tgt.points[plan.sigma] - tgt.points[sigma_star]) ** 2).sum(1)
        dist = math.sqrt(math.fsum(w * gap))
        return SweepPoint(eps, plan, dist, _y_transport_cost(ref, tgt, plan.sigma, y_exponent))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, eps_list))
    return [one(e) for e in eps_list]


def partial_c_transform_psi(psi, v_atoms, u_atoms, vu_cost: VuCost = quadratic_cost):
    """``psi^c(u) = min_v (psi(v) + c(v, u))`` over the slice's finite v-support."""
    psi = np.asarray(psi, dtype=np.float64).ravel()
    V = np.atleast_2d(np.asarray(v_atoms, dtype=np.float64))
    if psi.size == 0 or V.shape[0] == 0:
        raise ValueError("empty slice")
    c = vu_cost(V, np.atleast_2d(np.asarray(u_atoms, dtype=np.float64)))
    return (psi[:, None] + c).min(0)


def partial_c_transform_phi(phi, u_atoms, v_atoms, vu_cost: VuCost = quadratic_cost):
    """``phi^c(v) = max_u (phi(u) - c(v, u))`` over the slice's finite u-support."""
    phi = np.asarray(phi, dtype=np.float64).ravel()
    U = np.atleast_2d(np.asarray(u_atoms, dtype=np.float64))
    if phi.size == 0 or U.shape[0] == 0:
        raise ValueError("empty slice")
    c = vu_cost(np.atleast_2d(np.asarray(v_atoms, dtype=np.float64)), U)
    return (phi[None, :] - c).max(1)


@dataclass(frozen=True)
class ConditionalDuality:
    """Primal optimum and three dual values recovered slice by slice.

    ``dual_pair`` uses the certified potentials directly; ``dual_psi`` and
    ``dual_phi`` replace one side by its partial c-transform.
    """

    primal: float
    dual_pair: float
    dual_psi: float
    dual_phi: float
    potentials: DualPotentials
    slackness: float
    feasibility: float

    @property
    def gap(self) -> float:
        return self.primal - self.dual_psi


def conditional_duality(ref: EmpiricalMeasure, tgt: EmpiricalMeasure,
                        vu_cost: VuCost = quadratic_cost) -> ConditionalDuality:
    dec, primal = solve_conditional_kantorovich(ref, tgt, vu_cost)
    psi = np.zeros(len(ref))
    phi = np.zeros(len(tgt))
    phi_c = np.zeros(len(tgt))
    psi_c = np.zeros(len(ref))
    slack = 0.0
    feas = -math.inf
    for (_, ri, ti), plan in zip(dec.groups, dec.slice_plans):
        c = vu_cost(ref.x[ri], tgt.x[ti])
        pot = extract_duals(c, plan)
        psi[ri], phi[ti] = pot.psi, pot.phi
        phi_c[ti] = partial_c_transform_psi(pot.psi, ref.x[ri], tgt.x[ti], vu_cost)
        psi_c[ri] = partial_c_transform_phi(pot.phi, tgt.x[ti], ref.x[ri], vu_cost)
        red = pot.phi[None, :] - pot.psi[:, None] - c
        feas = max(feas, float(red.max()))
        rows, cols = plan.support(1e-14)
        if rows.size:
            slack = max(slack, float(np.abs(red[rows, cols]).max()))
    a, b = ref.weights, tgt.weights
    pair = math.fsum(b * phi) - math.fsum(a * psi)
    d_psi = math.fsum(b * phi_c) - math.fsum(a * psi)
    d_phi = math.fsum(b * phi) - math.fsum(a * psi_c)
    return ConditionalDuality(primal, pair, d_psi, d_phi, DualPotentials(psi, phi), slack, feas)


def conditional_duality_gap(ref: EmpiricalMeasure, tgt: EmpiricalMeasure,
                            vu_cost: VuCost = quadratic_cost) -> float:
    return conditional_duality(ref, tgt, vu_cost).gap


def independence_coupling_cost(ref: EmpiricalMeasure, tgt: EmpiricalMeasure,
                               vu_cost: VuCost = quadratic_cost) -> float:
    """Cost of coupling each slice by the product of its conditionals."""
    total = 0.0
    for _, ri, ti in group_by_y(ref, tgt):
        a = ref.weights[ri]
        b = tgt.weights[ti]
        mass = a.sum()
        total += math.fsum((np.outer(a, b / mass) * vu_cost(ref.x[ri], tgt.x[ti])).ravel())
    return total


@dataclass(frozen=True)
class TriangularComposition:
    """Two-stage map: y-marginal OT (``sigma_y``) then the conditional solve."""

    sigma_y: np.ndarray
    sigma: np.ndarray
    stage1_cost: float
    stage2_cost: float
    decomposition: Optional[SliceDecomposition] = None


def triangular_compose(ref: EmpiricalMeasure, tgt: EmpiricalMeasure,
                       vu_cost: VuCost = quadratic_cost) -> TriangularComposition:
    """Compose quadratic OT between the y-marginals with the conditional problem.

    Stage one moves each reference y-atom onto a target y-atom; stage two
    relabels the reference and solves slice by slice.  ``sigma[i]`` is the
    target atom that reference atom ``i`` finally reaches.
    """
    _check_blocks(ref, tgt)
    n = len(ref)
    if n != len(tgt) or not (ref.is_uniform and tgt.is_uniform):
        raise ValueError("triangular composition needs equal-size uniform measures")
    plan_y, cost_y = solve_assignment(quadratic_cost(ref.y, tgt.y))
    sigma_y = plan_y.sigma
    moved = make_empirical(np.hstack([tgt.y[sigma_y], ref.x]), y_dim=ref.y_dim)
    try:
        dec, cost2 = solve_conditional_kantorovich(moved, tgt, vu_cost)
    except InfeasibleError as exc:
        raise InfeasibleError(f"stage-two slices do not balance: {exc}") from exc
    return TriangularComposition(sigma_y, dec.permutation(), cost_y, cost2, dec)
