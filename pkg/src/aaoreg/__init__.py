"""All-at-once and reduced regularization for a semilinear inverse source problem.

The model is ``-u'' + xi u^3 = b`` on (0, 1) with homogeneous Dirichlet
conditions; ``b`` is identified from noisy full observations of ``u``.
"""
from .grid_pde import (
    DimensionError,
    Grid1D,
    NonconvergenceReport,
    ProblemInstance,
    SingularOperator,
    count_linear_solves,
    solve_state,
)
from .operators import AaoPoint, DataPair, reduced_eval
from .solvers import RunTrace, SolverConfig, StopReason, irgnm_run, landweber_run, tikhonov_alpha_search, tikhonov_minimize

__all__ = [
    "Grid1D",
    "ProblemInstance",
    "DimensionError",
    "SingularOperator",
    "NonconvergenceReport",
    "count_linear_solves",
    "solve_state",
    "AaoPoint",
    "DataPair",
    "reduced_eval",
    "SolverConfig",
    "StopReason",
    "RunTrace",
    "irgnm_run",
    "landweber_run",
    "tikhonov_minimize",
    "tikhonov_alpha_search",
]
__version__ = "0.1.0"
