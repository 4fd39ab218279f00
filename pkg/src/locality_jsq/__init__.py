"""Heterogeneous load balancing under compatibility constraints with JSQ(d)."""

from .core_model import (OccupancyVector, SystemParams, capacity_check,
                         epsilon_bad_dispatchers, gwqd, lqd)
from .graph import CompatibilityGraph, complete_graph, condition1_report, irg_sample, sparsity_probe
from .meanfield import drift, fixed_point, integrate, recursion_verify, tail_decay_check
from .stability import (asymptotic_load_lower_bound, binom_allocation_max, design_p_matrix,
                        rho_exact, subcritical_check)
from .trajectory import Trajectory

__version__ = "0.1.0"

__all__ = [
    "CompatibilityGraph", "OccupancyVector", "SystemParams", "Trajectory",
    "asymptotic_load_lower_bound", "binom_allocation_max", "capacity_check",
    "complete_graph", "condition1_report", "design_p_matrix", "drift",
    "epsilon_bad_dispatchers", "fixed_point", "gwqd", "integrate", "irg_sample", "lqd",
    "recursion_verify", "rho_exact", "sparsity_probe", "subcritical_check",
    "tail_decay_check",
]
