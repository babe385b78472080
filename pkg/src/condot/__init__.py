"""Conditional optimal transport: exact discrete solvers, plug-in and Monge
conditional maps, and a Darcy-flow inverse problem testbed."""

from ._backend import BACKEND
from .conditional_ot import (
    PerturbedCostSpec,
    SliceDecomposition,
    build_chi_cost,
    build_perturbed_cost,
    conditional_duality_gap,
    epsilon_sweep,
    partial_c_transform_phi,
    partial_c_transform_psi,
    solve_conditional_kantorovich,
    solve_perturbed,
    triangular_compose,
)
from .measures import EmpiricalMeasure, PairedSample, make_empirical, pair_reference
from .ot_core import (
    FORBIDDEN,
    DualPotentials,
    InfeasibleError,
    TransportPlan,
    brute_force_ot,
    extract_duals,
    solve_assignment,
    solve_lp,
    solve_sinkhorn,
)
from .plugin_map import PluginConditionalMap, conditional_sample, fit_plugin

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DualPotentials", "EmpiricalMeasure", "FORBIDDEN", "InfeasibleError",
    "PairedSample", "PerturbedCostSpec", "PluginConditionalMap", "SliceDecomposition",
    "TransportPlan", "brute_force_ot", "build_chi_cost", "build_perturbed_cost",
    "conditional_duality_gap", "conditional_sample", "epsilon_sweep", "extract_duals",
    "fit_plugin", "make_empirical", "pair_reference", "partial_c_transform_phi",
    "partial_c_transform_psi", "solve_assignment", "solve_conditional_kantorovich",
    "solve_lp", "solve_perturbed", "solve_sinkhorn", "triangular_compose",
]
