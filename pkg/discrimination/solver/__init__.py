from .backend import external_backend_solve
from .branch_and_bound import BranchAndBound, solve_milp
from .problem import LpSolution, MilpProblem, MilpSolution, ProblemBuilder, SolverParams, Status
from .simplex import DenseSimplex, solve_lp
from .spatial import Product, SpatialBranchAndBound, solve_bilinear

__all__ = [
    "BranchAndBound",
    "DenseSimplex",
    "LpSolution",
    "MilpProblem",
    "MilpSolution",
    "ProblemBuilder",
    "Product",
    "SolverParams",
    "SpatialBranchAndBound",
    "Status",
    "external_backend_solve",
    "solve_bilinear",
    "solve_lp",
    "solve_milp",
]
