from .baseline import baseline_solve
from .common import LinkTable, SolverError, SolverResult
from .exhaustive import DEFAULT_STATE_CAP, ExhaustiveRefused, exhaustive_solve, state_count
from .heuristic import heuristic_solve
from .hsca import (AugmentedVector, SmoothedObjective, finite_diff_gradient, hsca_solve,
                   smoothed_utility, surrogate_argmin)

SOLVERS = {
    "baseline": baseline_solve,
    "heuristic": heuristic_solve,
    "hsca": hsca_solve,
    "exhaustive": exhaustive_solve,
}

__all__ = ["SOLVERS", "AugmentedVector", "DEFAULT_STATE_CAP", "ExhaustiveRefused", "LinkTable",
           "SmoothedObjective", "SolverError", "SolverResult", "baseline_solve",
           "exhaustive_solve", "finite_diff_gradient", "heuristic_solve", "hsca_solve",
           "smoothed_utility", "state_count", "surrogate_argmin"]
