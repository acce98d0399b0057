"""Built-in LP/MILP solver: dual simplex, branch and bound, MPS exchange."""

from .bnb import WORKERS_ENV, default_workers, enumerate_binaries, solve_milp
from .mps import check_solution, export_mps, import_solution, read_mps, write_solution
from .problem import MilpProblem, MilpSolution
from .simplex import Basis, DualSimplex, LpNumericalError, LpSolution, solve_lp

__all__ = [
    "MilpProblem",
    "MilpSolution",
    "LpSolution",
    "Basis",
    "DualSimplex",
    "LpNumericalError",
    "solve_lp",
    "solve_milp",
    "enumerate_binaries",
    "default_workers",
    "WORKERS_ENV",
    "export_mps",
    "read_mps",
    "import_solution",
    "write_solution",
    "check_solution",
]
