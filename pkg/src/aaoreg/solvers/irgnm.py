"""Iteratively regularized Gauss-Newton method, all-at-once and reduced.

An all-at-once step minimizes

    rho/2 |A_k + L dx + K du|^2 + 1/2 |u_k + du - y|^2 + alpha/2 |x - x0|^2
    [+ alpha/2 |u - u0|_V^2]

over the joint increment; only the linearized model enters. A reduced step
first solves the nonlinear state equation and then minimizes the linearized
reduced misfit, whose derivative costs a linearized solve per application.
"""
from __future__ import annotations

import logging
import time

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solveh_banded
from scipy.sparse.linalg import LinearOperator, cg

from ..grid_pde import (
    NonconvergenceReport,
    PdeJacobian,
    ProblemInstance,
    SingularOperator,
    _record_solve,
    jacobian_at,
    laplacian_apply,
    residual_A,
)
from ..operators import (
    AaoPoint,
    DataPair,
    ReducedEval,
    observe,
    reduced_adjoint_apply,
    reduced_derivative_apply,
    reduced_eval,
)
from .common import discrepancy_threshold, linearized_misfit_parts, misfit_parts
from .config import IterRecord, RunTrace, SolverConfig, StopReason

__all__ = [
    "irgnm_aao_step",
    "irgnm_reduced_step",
    "sigma_ratio",
    "sigma_ratio_reduced",
    "irgnm_run",
]

log = logging.getLogger(__name__)

DENSE_MAX = 200
ALPHA_BRACKET = (1e-12, 1e12)


def _banded_laplacian_squared(g) -> np.ndarray:
    return PdeJacobian(g, np.full(g.n_interior, 2.0 / g.h**2)).banded_K_squared()


def irgnm_aao_step(
    p: ProblemInstance,
    z_k: AaoPoint,
    d: DataPair,
    alpha: float,
    cfg: SolverConfig,
    J: PdeJacobian | None = None,
) -> AaoPoint:
    """Exact minimizer of the regularized linearized all-at-once misfit.

    The 2x2 block normal equations are reduced to the state block by
    eliminating the parameter increment (``L = -I`` makes that block a
    multiple of the identity), leaving the SPD pentadiagonal system

        (rho alpha / (rho + alpha) K^2 + I [+ alpha R_V]) du = rhs

    which is solved with a banded Cholesky factorization.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    g = p.grid
    rho = d.rho
    x0, u0 = cfg.start(g)
    J = jacobian_at(p, z_k.x, z_k.u) if J is None else J
    A_k = residual_A(p, z_k.x, z_k.u) - d.y_mod

    rhs_x = -rho * J.apply_L_adjoint(A_k) + alpha * (x0 - z_k.x)
    rhs_u = -rho * J.apply_K_adjoint(A_k) - observe(observe(z_k.u) - d.y_obs)

    ab = (rho * alpha / (rho + alpha)) * J.banded_K_squared()
    ab[2] += 1.0
    if cfg.reg_target == "x_and_u":
        if cfg.metric == "h2":
            ab += alpha * _banded_laplacian_squared(g)
            rhs_u -= alpha * laplacian_apply(g, laplacian_apply(g, z_k.u - u0))
        else:
            ab[2] += alpha
            rhs_u -= alpha * (z_k.u - u0)
    # L = -I: L^* K du = -K du
    rhs_u = rhs_u + rho * J.apply_K(rhs_x) / (rho + alpha)

    _record_solve()
    try:
        du = solveh_banded(ab, rhs_u)
    except np.linalg.LinAlgError as exc:
        raise SingularOperator(f"normal equations not positive definite: {exc}") from exc
    dx = (rhs_x + rho * J.apply_K(du)) / (rho + alpha)
    return AaoPoint(z_k.x + dx, z_k.u + du)


def irgnm_reduced_step(e: ReducedEval, y_obs, alpha: float, cfg: SolverConfig, grid=None) -> np.ndarray:
    """Exact minimizer of ``1/2 |F + F'(x - xk) - y|^2 + alpha/2 |x - x0|^2``.

    For grids up to ``DENSE_MAX`` nodes ``F'`` is assembled densely (one
    multi-right-hand-side solve); larger grids use conjugate gradients on
    the normal equations with matrix-free derivative applications.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    g = e.jacobian.grid if grid is None else grid
    n = g.n_interior
    x0, _ = cfg.start(g)
    resid = observe(y_obs) - e.value
    rhs = reduced_adjoint_apply(e, resid) + alpha * (x0 - e.x)
    if n <= DENSE_MAX:
        T = e.jacobian.solve(np.eye(n))
        G = T.T @ T
        G[np.diag_indices_from(G)] += alpha
        try:
            dx = cho_solve(cho_factor(G), rhs)
        except np.linalg.LinAlgError:
            # K nearly singular: T^T T swamps alpha in floating point. Multiply
            # through by K^2 and solve (I + alpha K^2) dx = K r + alpha K^2 (x0 - xk).
            dx = _reduced_step_banded(e.jacobian, resid, alpha, x0 - e.x)
    else:
        op = LinearOperator(
            (n, n),
            matvec=lambda v: reduced_adjoint_apply(e, reduced_derivative_apply(e, v)) + alpha * v,
            dtype=float,
        )
        dx, info = cg(op, rhs, rtol=1e-10, maxiter=10 * n)
        if info != 0:
            log.warning("CG for reduced IRGNM step stopped with info=%d", info)
    return e.x + dx


def _reduced_step_banded(J: PdeJacobian, resid, alpha, anchor):
    ab = alpha * J.banded_K_squared()
    ab[2] += 1.0
    rhs = J.apply_K(resid) + alpha * J.apply_K(J.apply_K(anchor))
    _record_solve()
    return solveh_banded(ab, rhs)


def sigma_ratio(p: ProblemInstance, z_k: AaoPoint, z_next: AaoPoint, d: DataPair, J=None, A_k=None) -> float:
    """Predicted-to-current misfit ratio of an all-at-once step."""
    cur = sum(misfit_parts(p, z_k, d))
    if cur <= 0:
        raise ZeroDivisionError("current misfit is zero; check the discrepancy rule first")
    return sum(linearized_misfit_parts(p, z_k, z_next, d, J=J, A_k=A_k)) / cur


def sigma_ratio_reduced(e: ReducedEval, x_next, y_obs) -> float:
    cur = e.value - y_obs
    denom = float(np.dot(cur, cur))
    if denom <= 0:
        raise ZeroDivisionError("current misfit is zero; check the discrepancy rule first")
    pred = cur + reduced_derivative_apply(e, x_next - e.x)
    return float(np.dot(pred, pred)) / denom


def _sigma_bisection(sigma_of, cfg: SolverConfig):
    """Find alpha with ``sigma_lo <= sigma(alpha) <= sigma_hi``.

    ``sigma`` is nondecreasing in alpha; bisection runs on ``log(alpha)``
    over a fixed bracket. Returns ``(alpha, step, sigma)``.
    """
    lo, hi = np.log(ALPHA_BRACKET[0]), np.log(ALPHA_BRACKET[1])
    step_hi, s_hi = sigma_of(np.exp(hi))
    if s_hi < cfg.sigma_lo:
        return np.exp(hi), step_hi, s_hi
    step_lo, s_lo = sigma_of(np.exp(lo))
    if s_lo > cfg.sigma_hi:
        return np.exp(lo), step_lo, s_lo
    best = (np.exp(hi), step_hi, s_hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        step, s = sigma_of(np.exp(mid))
        best = (np.exp(mid), step, s)
        if s < cfg.sigma_lo:
            lo = mid
        elif s > cfg.sigma_hi:
            hi = mid
        else:
            break
    return best


def irgnm_run(p: ProblemInstance, d: DataPair, cfg: SolverConfig) -> RunTrace:
    """Iterate IRGNM steps until the discrepancy principle or the cap.

    ``alpha_rule="apriori"`` uses ``alpha_k = alpha0 * alpha_decay**k``;
    ``"sigma"`` picks each ``alpha_k`` so the predicted-to-current misfit
    ratio lands in ``[sigma_lo, sigma_hi]`` (falling back to the starting
    point when even that point predicts a ratio below ``sigma_hi``).
    """
    if cfg.formulation == "aao":
        return _irgnm_aao_run(p, d, cfg)
    return _irgnm_reduced_run(p, d, cfg)


def _irgnm_aao_run(p, d, cfg):
    g = p.grid
    x0, u0 = cfg.start(g)
    start = AaoPoint(x0, u0)
    z = start
    thr = discrepancy_threshold(d, cfg.tau_sq, cfg.zero_noise_tol)
    trace = RunTrace(label=cfg.label)
    t0 = time.perf_counter()
    for k in range(cfg.outer_cap + 1):
        mm, om = misfit_parts(p, z, d)
        S = mm + om
        if S <= thr or k == cfg.outer_cap:
            trace.stop_reason = StopReason.DISCREPANCY_MET if S <= thr else StopReason.ITERATION_CAP
            trace.records.append(IterRecord(k, None, mm, om, S, None, time.perf_counter() - t0))
            break
        J = jacobian_at(p, z.x, z.u)
        A_k = residual_A(p, z.x, z.u)
        try:
            if cfg.alpha_rule == "apriori":
                alpha = cfg.alpha(k)
                z_next = irgnm_aao_step(p, z, d, alpha, cfg, J=J)
                sig = sigma_ratio(p, z, z_next, d, J=J, A_k=A_k)
            else:
                if sigma_ratio(p, z, start, d, J=J, A_k=A_k) < cfg.sigma_hi:
                    alpha, z_next = None, start
                    sig = sigma_ratio(p, z, start, d, J=J, A_k=A_k)
                else:
                    def sigma_of(a):
                        step = irgnm_aao_step(p, z, d, a, cfg, J=J)
                        return step, sigma_ratio(p, z, step, d, J=J, A_k=A_k)

                    alpha, z_next, sig = _sigma_bisection(sigma_of, cfg)
        except SingularOperator as exc:
            trace.stop_reason = StopReason.SINGULAR_OPERATOR
            trace.message = str(exc)
            trace.records.append(IterRecord(k, None, mm, om, S, None, time.perf_counter() - t0))
            break
        trace.records.append(IterRecord(k, alpha, mm, om, S, sig, time.perf_counter() - t0))
        z = z_next
    trace.cpu_time = time.perf_counter() - t0
    trace.k_star = k
    trace.x_final, trace.u_final = z.x, z.u
    return trace


def _reduced_eval_robust(p, x, u_prev, cfg):
    """State solve warm-started from the previous state, retried from zero."""
    try:
        return reduced_eval(p, x, u_init=u_prev, tol=cfg.newton_tol, max_newton=cfg.max_newton)
    except NonconvergenceReport:
        if u_prev is None:
            raise
        return reduced_eval(p, x, u_init=None, tol=cfg.newton_tol, max_newton=cfg.max_newton)


def _irgnm_reduced_run(p, d, cfg):
    g = p.grid
    x0, _ = cfg.start(g)
    x = x0
    thr = discrepancy_threshold(d, cfg.tau_sq, cfg.zero_noise_tol)
    trace = RunTrace(label=cfg.label)
    t0 = time.perf_counter()
    u_prev = None
    last_good = None
    for k in range(cfg.outer_cap + 1):
        try:
            e = _reduced_eval_robust(p, x, u_prev, cfg)
        except NonconvergenceReport as exc:
            trace.stop_reason = StopReason.REDUCED_STATE_FAILURE
            trace.message = str(exc)
            break
        last_good = e
        u_prev = e.u
        r = e.value - d.y_obs
        om = 0.5 * g.inner(r, r)
        if om <= thr or k == cfg.outer_cap:
            trace.stop_reason = StopReason.DISCREPANCY_MET if om <= thr else StopReason.ITERATION_CAP
            trace.records.append(IterRecord(k, None, 0.0, om, om, None, time.perf_counter() - t0))
            break
        try:
            if cfg.alpha_rule == "apriori":
                alpha = cfg.alpha(k)
                x_next = irgnm_reduced_step(e, d.y_obs, alpha, cfg)
                sig = sigma_ratio_reduced(e, x_next, d.y_obs)
            elif sigma_ratio_reduced(e, x0, d.y_obs) < cfg.sigma_hi:
                alpha, x_next = None, x0
                sig = sigma_ratio_reduced(e, x0, d.y_obs)
            else:
                def sigma_of(a):
                    step = irgnm_reduced_step(e, d.y_obs, a, cfg)
                    return step, sigma_ratio_reduced(e, step, d.y_obs)

                alpha, x_next, sig = _sigma_bisection(sigma_of, cfg)
        except SingularOperator as exc:
            trace.stop_reason = StopReason.SINGULAR_OPERATOR
            trace.message = str(exc)
            trace.records.append(IterRecord(k, None, 0.0, om, om, None, time.perf_counter() - t0))
            break
        trace.records.append(IterRecord(k, alpha, 0.0, om, om, sig, time.perf_counter() - t0))
        x = x_next
    trace.cpu_time = time.perf_counter() - t0
    trace.k_star = k
    if last_good is not None:
        trace.x_final, trace.u_final = last_good.x, last_good.u
    else:
        trace.x_final, trace.u_final = x, None
    return trace
