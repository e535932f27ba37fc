"""Tikhonov regularization at a fixed alpha and its a-posteriori alpha search.

The nonlinear functional is minimized by damped Gauss-Newton. At fixed
alpha the Gauss-Newton step anchored at ``x0`` is exactly the IRGNM step,
so both are shared; an Armijo backtracking on the functional supplies the
damping.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grid_pde import (
    NonconvergenceReport,
    ProblemInstance,
    SingularOperator,
    jacobian_at,
    residual_A,
    state_norm_operator,
)
from ..operators import AaoPoint, DataPair, observe, reduced_adjoint_apply
from .common import misfit_parts
from .config import SolverConfig
from .irgnm import _reduced_eval_robust, irgnm_aao_step, irgnm_reduced_step

__all__ = ["TikhonovResult", "AlphaSearchResult", "tikhonov_minimize", "tikhonov_alpha_search", "tikhonov_gradient"]

GRAD_TOL = 1e-9
ARMIJO = 1e-4
MIN_STEP = 2.0**-30
# Relative change of the functional below which it is stationary to rounding.
FLAT_TOL = 1e-14
STALL_TOL = 1e-12
STATIONARY = "stationary to rounding"


@dataclass
class TikhonovResult:
    """Minimizer of the Tikhonov functional at one alpha.

    ``point`` is an :class:`AaoPoint` for the all-at-once functional and the
    parameter array for the reduced one. ``misfit`` is the data part ``S``
    (``1/2 |F(x) - y|^2`` in the reduced case).
    """

    point: object
    alpha: float
    converged: bool
    iterations: int
    grad_norm: float
    value: float
    misfit: float
    message: str = ""


@dataclass
class AlphaSearchResult:
    alpha: float | None
    result: TikhonovResult | None
    index: int
    band_skipped: bool = False
    exhausted: bool = False
    path: list = field(default_factory=list)
    message: str = ""


def _aao_value(p, z, d, alpha, cfg):
    x0, u0 = cfg.start(p.grid)
    g = p.grid
    mm, om = misfit_parts(p, z, d)
    reg = 0.5 * alpha * g.norm(z.x - x0) ** 2
    if cfg.reg_target == "x_and_u":
        du = z.u - u0
        reg += 0.5 * alpha * g.inner(state_norm_operator(g, du, cfg.metric), du)
    return mm + om + reg, mm + om


def tikhonov_gradient(p: ProblemInstance, z: AaoPoint, d: DataPair, alpha: float, cfg: SolverConfig) -> AaoPoint:
    """L2 gradient of the all-at-once Tikhonov functional.

    The model part is ``F'^*(rho (A - y_mod), u - y)``, so the adjoint
    variable ``w = rho (A - y_mod)`` is visible in the x-block:
    ``grad_x = -w + alpha (x - x0)``.
    """
    g = p.grid
    x0, u0 = cfg.start(g)
    J = jacobian_at(p, z.x, z.u)
    w = d.rho * (residual_A(p, z.x, z.u) - d.y_mod)
    gx = J.apply_L_adjoint(w) + alpha * (z.x - x0)
    gu = J.apply_K_adjoint(w) + observe(observe(z.u) - d.y_obs)
    if cfg.reg_target == "x_and_u":
        gu = gu + alpha * state_norm_operator(g, z.u - u0, cfg.metric)
    return AaoPoint(gx, gu)


def tikhonov_minimize(p: ProblemInstance, d: DataPair, alpha: float, cfg: SolverConfig, start=None) -> TikhonovResult:
    """Minimize the Tikhonov functional at fixed ``alpha``.

    Iterates Gauss-Newton steps with Armijo backtracking until the gradient
    norm falls below ``1e-9 * max(1, |grad_0|)`` or ``max_inner`` steps.
    The state block of the gradient carries ``K`` (norm ``~4/h^2``), so its
    rounding floor can sit above that tolerance; a full step that changes
    the functional by less than ``1e-14`` relative also counts as converged,
    as does a stalled line search along a direction whose predicted decrease
    is below ``1e-12`` of the functional value.
    ``start`` defaults to ``(x0, u0)``. A line search that cannot decrease
    the functional ends the run with ``converged=False``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if cfg.formulation == "aao":
        return _minimize_aao(p, d, alpha, cfg, start)
    return _minimize_reduced(p, d, alpha, cfg, start)


def _stall_message(slope, val):
    # A Gauss-Newton direction whose predicted decrease is below rounding
    # of the functional cannot be improved on in floating point.
    if abs(slope) <= STALL_TOL * abs(val):
        return STATIONARY
    return "line search stalled"


def _grad_norm(g, gr):
    if isinstance(gr, AaoPoint):
        return gr.norm(g)
    return g.norm(gr)


def _minimize_aao(p, d, alpha, cfg, start):
    g = p.grid
    if start is None:
        z = AaoPoint(*cfg.start(g))
    else:
        z = start
    val, S = _aao_value(p, z, d, alpha, cfg)
    gn = _grad_norm(g, tikhonov_gradient(p, z, d, alpha, cfg))
    tol = GRAD_TOL * max(1.0, gn)
    it = 0
    msg = ""
    while gn > tol and it < cfg.max_inner:
        gr = tikhonov_gradient(p, z, d, alpha, cfg)
        step = irgnm_aao_step(p, z, d, alpha, cfg) - z
        slope = gr.inner(step, g)
        t = 1.0
        while True:
            trial = z + t * step
            tval, tS = _aao_value(p, trial, d, alpha, cfg)
            if tval <= val + ARMIJO * t * min(slope, 0.0):
                break
            t *= 0.5
            if t < MIN_STEP:
                msg = _stall_message(slope, val)
                break
        if msg:
            break
        flat = val - tval <= FLAT_TOL * abs(val)
        z, val, S = trial, tval, tS
        gn = _grad_norm(g, tikhonov_gradient(p, z, d, alpha, cfg))
        it += 1
        if flat:
            return TikhonovResult(z, alpha, True, it, gn, val, S, STATIONARY)
    return TikhonovResult(z, alpha, gn <= tol or msg == STATIONARY, it, gn, val, S, msg)


def _minimize_reduced(p, d, alpha, cfg, start):
    g = p.grid
    x0, _ = cfg.start(g)
    x = x0.copy() if start is None else np.asarray(start, dtype=float)

    def evaluate(x, u_prev):
        e = _reduced_eval_robust(p, x, u_prev, cfg)
        r = e.value - d.y_obs
        S = 0.5 * g.inner(r, r)
        val = S + 0.5 * alpha * g.norm(x - x0) ** 2
        grad = reduced_adjoint_apply(e, r) + alpha * (x - x0)
        return e, val, S, grad

    try:
        e, val, S, gr = evaluate(x, None)
    except (NonconvergenceReport, SingularOperator) as exc:
        return TikhonovResult(x, alpha, False, 0, np.nan, np.nan, np.nan, str(exc))
    gn = g.norm(gr)
    tol = GRAD_TOL * max(1.0, gn)
    it = 0
    msg = ""
    while gn > tol and it < cfg.max_inner:
        step = irgnm_reduced_step(e, d.y_obs, alpha, cfg) - x
        slope = g.inner(gr, step)
        t = 1.0
        while True:
            try:
                trial = evaluate(x + t * step, e.u)
                if trial[1] <= val + ARMIJO * t * min(slope, 0.0):
                    break
            except (NonconvergenceReport, SingularOperator):
                pass
            t *= 0.5
            if t < MIN_STEP:
                msg = _stall_message(slope, val)
                break
        if msg:
            break
        flat = val - trial[1] <= FLAT_TOL * abs(val)
        e, val, S, gr = trial
        x = e.x
        gn = g.norm(gr)
        it += 1
        if flat:
            return TikhonovResult(x, alpha, True, it, gn, val, S, STATIONARY)
    return TikhonovResult(x, alpha, gn <= tol or msg == STATIONARY, it, gn, val, S, msg)


def tikhonov_alpha_search(p: ProblemInstance, d: DataPair, cfg: SolverConfig) -> AlphaSearchResult:
    """Choose alpha by the two-sided discrepancy band.

    Walks ``alpha_j = alpha0 * alpha_decay**j`` for ``j = 0 .. outer_cap``
    (warm-starting each minimization at the previous minimizer) and returns
    the first ``j`` with ``delta^2/2 <= S <= tau^2 delta^2/2``. When the
    misfit drops past the band in one step, that first ``alpha`` below the
    upper bound is returned with ``band_skipped=True``. If no ``alpha`` on
    the schedule reaches the upper bound, or a reduced state solve fails,
    ``exhausted`` is set and the result is ``None``.
    """
    if not d.delta > 0:
        raise ValueError("alpha search needs a positive noise level")
    lower = 0.5 * d.delta**2
    upper = 0.5 * cfg.tau_sq * d.delta**2
    out = AlphaSearchResult(None, None, -1)
    start = None
    for j in range(cfg.outer_cap + 1):
        alpha = cfg.alpha(j)
        res = tikhonov_minimize(p, d, alpha, cfg, start=start)
        out.path.append((alpha, res.misfit))
        if not np.isfinite(res.misfit):
            out.exhausted, out.message = True, res.message
            return out
        if res.misfit <= upper:
            out.alpha, out.result, out.index = alpha, res, j
            out.band_skipped = res.misfit < lower
            return out
        start = res.point
    out.exhausted = True
    return out
