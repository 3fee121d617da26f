"""Admission control for loss networks with exponential penalty policies."""

from .core import (
    Deterministic,
    Exponential,
    HeavyTail,
    HyperExponential,
    RequestClass,
    Scenario,
    builtin,
    knapsack,
    load_balancing_alphas,
    load_scenario,
    offered_loads,
    scale_scenario,
    validate_scenario,
)
from .lp import LpSolution, epsilon_zero, solve_knapsack, solve_lp, solve_network_lp, solve_simplex

__all__ = [
    "Deterministic",
    "Exponential",
    "HeavyTail",
    "HyperExponential",
    "LpSolution",
    "RequestClass",
    "Scenario",
    "builtin",
    "epsilon_zero",
    "knapsack",
    "load_balancing_alphas",
    "load_scenario",
    "offered_loads",
    "scale_scenario",
    "solve_knapsack",
    "solve_lp",
    "solve_network_lp",
    "solve_simplex",
    "validate_scenario",
]
