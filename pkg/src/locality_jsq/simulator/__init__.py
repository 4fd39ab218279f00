"""Discrete-event simulation of local JSQ(d), GWSQ(d) and their coupling."""

from ..trajectory import Trajectory
from .coupling import CoupledRun, CouplingViolation, coupled_classes, run_coupled
from .engine import (SimState, SteadyStateEstimate, initial_from_pmf, jsq_d_assign,
                     run_jsq_d, steady_state_estimate)
from .gwsq import assignment_class_pmf, gwsq_d_assign, pseudo_pool
from .levels import LevelIndex

__all__ = [
    "CoupledRun", "CouplingViolation", "LevelIndex", "SimState", "SteadyStateEstimate",
    "Trajectory", "assignment_class_pmf", "coupled_classes", "gwsq_d_assign",
    "initial_from_pmf", "jsq_d_assign", "pseudo_pool", "run_coupled", "run_jsq_d",
    "steady_state_estimate",
]
