"""Determinant-maximization SDP solver and the problem builders."""

from .builders import (budget_floor, build_po_problem, build_stationary_problem,
                       build_tv_problem, build_tv_singular_problem, build_vstar_problem,
                       po_reduction)
from .problem import AffineExpr, MaxDetProblem, Variable, smat, svec
from .solver import (INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, MaxDetSolution,
                     SolverSettings, solve)

__all__ = [
    "AffineExpr", "MaxDetProblem", "Variable", "smat", "svec",
    "MaxDetSolution", "SolverSettings", "solve",
    "OPTIMAL", "INFEASIBLE", "NUMERICAL_FAILURE",
    "budget_floor", "build_tv_problem", "build_tv_singular_problem",
    "build_stationary_problem", "build_vstar_problem", "build_po_problem", "po_reduction",
]
