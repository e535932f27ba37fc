"""Regularized solvers for the all-at-once and reduced formulations."""
from .common import discrepancy_threshold, linearized_misfit_parts, misfit_parts, misfit_S
from .config import IterRecord, RunTrace, SolverConfig, StopReason
from .irgnm import irgnm_aao_step, irgnm_reduced_step, irgnm_run, sigma_ratio
from .tikhonov import AlphaSearchResult, TikhonovResult, tikhonov_alpha_search, tikhonov_gradient, tikhonov_minimize
from .landweber import aao_step_size, landweber_aao_step, landweber_reduced_step, landweber_run, reduced_step_size

__all__ = [
    "SolverConfig", "StopReason", "IterRecord", "RunTrace",
    "misfit_S", "misfit_parts", "linearized_misfit_parts", "discrepancy_threshold",
    "irgnm_aao_step", "irgnm_reduced_step", "irgnm_run", "sigma_ratio",
    "landweber_aao_step", "landweber_reduced_step", "landweber_run",
    "aao_step_size", "reduced_step_size",
    "TikhonovResult", "AlphaSearchResult", "tikhonov_minimize", "tikhonov_alpha_search", "tikhonov_gradient",
]
