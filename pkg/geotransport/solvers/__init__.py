from geotransport.solvers.base_solver import BaseSolver, SolveStats, SolverConfig
from geotransport.solvers.exact_solver import ExactFlow, ExactSolver, certify_potentials, solve_exact
from geotransport.solvers.orchestrator import (
    PipelineResult,
    Subproblem,
    best_of_k,
    decompose,
    make_solver,
    run_pipeline,
    solve_all,
)
from geotransport.solvers.sherman_solver import ShermanSolver, kappa_emp, solve_sherman

__all__ = [
    "BaseSolver",
    "ExactFlow",
    "ExactSolver",
    "PipelineResult",
    "ShermanSolver",
    "SolveStats",
    "SolverConfig",
    "Subproblem",
    "best_of_k",
    "certify_potentials",
    "decompose",
    "kappa_emp",
    "make_solver",
    "run_pipeline",
    "solve_all",
    "solve_exact",
    "solve_sherman",
]
