"""Landweber iteration, all-at-once and reduced.

The all-at-once step is a gradient step on the joint misfit and applies
only the model residual and its Jacobian; it never solves a model. The
reduced step needs a nonlinear state solve and one adjoint solve.
"""
from __future__ import annotations

import time

import numpy as np

from ..grid_pde import (
    NonconvergenceReport,
    ProblemInstance,
    SingularOperator,
    jacobian_at,
    residual_A,
    state_norm_operator,
    state_riesz_inverse,
)
from ..operators import (
    AaoPoint,
    DataPair,
    ReducedEval,
    aao_jacobian_adjoint_apply,
    observe,
    operator_norm_estimate,
    reduced_adjoint_apply,
    reduced_derivative_apply,
)
from .common import discrepancy_threshold
from .config import IterRecord, RunTrace, SolverConfig, StopReason
from .irgnm import _reduced_eval_robust

__all__ = [
    "landweber_aao_step",
    "landweber_reduced_step",
    "landweber_run",
    "aao_step_size",
    "reduced_step_size",
]

NORM_ITERATIONS = 100


def _aao_gradient(p, z, d, J, A, state_norm):
    w_mod = d.rho * (A - d.y_mod)
    w_obs = observe(z.u) - d.y_obs
    grad = aao_jacobian_adjoint_apply(p, z, (w_mod, w_obs), J=J)
    return AaoPoint(grad.x, state_riesz_inverse(p.grid, grad.u, state_norm))


def landweber_aao_step(p: ProblemInstance, z_k: AaoPoint, d: DataPair, mu: float, state_norm: str = "l2") -> AaoPoint:
    """``z - mu F'(z)^* (rho A(z), C u - y)`` with the gradient taken in X x V."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    J = jacobian_at(p, z_k.x, z_k.u)
    A = residual_A(p, z_k.x, z_k.u)
    return z_k - mu * _aao_gradient(p, z_k, d, J, A, state_norm)


def landweber_reduced_step(e: ReducedEval, y_obs, mu: float) -> np.ndarray:
    """``x - mu F'(x)^* (F(x) - y)``; the state solve is already in ``e``."""
    return e.x - mu * reduced_adjoint_apply(e, e.value - y_obs)


def aao_step_size(p: ProblemInstance, z: AaoPoint, rho: float, c: float = 0.9, state_norm: str = "l2", seed: int = 0) -> float:
    """``c / |diag(sqrt(rho), 1) F'(z)|^2`` from power iteration (applications only)."""
    g = p.grid
    n = g.n_interior
    J = jacobian_at(p, z.x, z.u)
    sr = np.sqrt(rho)

    def apply(v):
        dx, du = v[:n], v[n:]
        return np.concatenate([sr * (J.apply_L(dx) + J.apply_K(du)), observe(du)])

    def adjoint(w):
        w1, w2 = w[:n], w[n:]
        gu = state_riesz_inverse(g, sr * J.apply_K_adjoint(w1) + observe(w2), state_norm)
        return np.concatenate([sr * J.apply_L_adjoint(w1), gu])

    def inner(a, b):
        return float(np.dot(a[:n], b[:n]) + np.dot(a[n:], state_norm_operator(g, b[n:], state_norm)))

    norm = operator_norm_estimate(apply, adjoint, 2 * n, NORM_ITERATIONS, seed=seed, inner=inner)
    return c / norm**2


def reduced_step_size(e: ReducedEval, c: float = 0.9, seed: int = 0) -> float:
    n = e.x.size
    norm = operator_norm_estimate(
        lambda v: reduced_derivative_apply(e, v),
        lambda w: reduced_adjoint_apply(e, w),
        n,
        NORM_ITERATIONS,
        seed=seed,
    )
    return c / norm**2


def landweber_run(p: ProblemInstance, d: DataPair, cfg: SolverConfig) -> RunTrace:
    """Run Landweber until the discrepancy principle holds or ``max_outer``.

    All-at-once runs stop on ``S <= tau^2 delta^2 / 2``; reduced runs on
    ``|F(x) - y| <= tau delta``, the same inequality for the reduced misfit.
    With the safeguarded policy the step is ``mu / |F'|^2``, re-estimated
    every ``mu_reestimate_every`` iterations.
    """
    if cfg.formulation == "aao":
        return _landweber_aao_run(p, d, cfg)
    return _landweber_reduced_run(p, d, cfg)


def _landweber_aao_run(p, d, cfg):
    g = p.grid
    x0, u0 = cfg.start(g)
    z = AaoPoint(x0.copy(), u0.copy())
    thr = discrepancy_threshold(d, cfg.tau_sq, cfg.zero_noise_tol)
    trace = RunTrace(label=cfg.label)
    t0 = time.perf_counter()
    mu = cfg.mu
    for k in range(cfg.outer_cap + 1):
        A = residual_A(p, z.x, z.u)
        r_mod = A - d.y_mod
        r_obs = observe(z.u) - d.y_obs
        mm = 0.5 * d.rho * g.inner(r_mod, r_mod)
        om = 0.5 * g.inner(r_obs, r_obs)
        S = mm + om
        stop = S <= thr or k == cfg.outer_cap or not np.isfinite(S)
        if stop or k % cfg.trace_every == 0:
            trace.records.append(IterRecord(k, None, mm, om, S, None, time.perf_counter() - t0))
        if stop:
            trace.stop_reason = StopReason.DISCREPANCY_MET if S <= thr else StopReason.ITERATION_CAP
            break
        if cfg.mu_policy == "safeguarded" and k % cfg.mu_reestimate_every == 0:
            mu = aao_step_size(p, z, d.rho, cfg.mu, cfg.metric)
        J = jacobian_at(p, z.x, z.u)
        z = z - mu * _aao_gradient(p, z, d, J, A, cfg.metric)
    trace.cpu_time = time.perf_counter() - t0
    trace.k_star = k
    trace.x_final, trace.u_final = z.x, z.u
    return trace


def _landweber_reduced_run(p, d, cfg):
    g = p.grid
    x0, _ = cfg.start(g)
    x = x0.copy()
    thr = discrepancy_threshold(d, cfg.tau_sq, cfg.zero_noise_tol)
    trace = RunTrace(label=cfg.label)
    t0 = time.perf_counter()
    mu = cfg.mu
    u_prev = None
    last_good = None
    for k in range(cfg.outer_cap + 1):
        try:
            e = _reduced_eval_robust(p, x, u_prev, cfg)
        except NonconvergenceReport as exc:
            trace.stop_reason = StopReason.REDUCED_STATE_FAILURE
            trace.message = str(exc)
            break
        last_good, u_prev = e, e.u
        r = e.value - d.y_obs
        om = 0.5 * g.inner(r, r)
        stop = om <= thr or k == cfg.outer_cap
        if stop or k % cfg.trace_every == 0:
            trace.records.append(IterRecord(k, None, 0.0, om, om, None, time.perf_counter() - t0))
        if stop:
            trace.stop_reason = StopReason.DISCREPANCY_MET if om <= thr else StopReason.ITERATION_CAP
            break
        try:
            if cfg.mu_policy == "safeguarded" and k % cfg.mu_reestimate_every == 0:
                mu = reduced_step_size(e, cfg.mu)
            x = landweber_reduced_step(e, d.y_obs, mu)
        except SingularOperator as exc:
            trace.stop_reason = StopReason.SINGULAR_OPERATOR
            trace.message = str(exc)
            break
    trace.cpu_time = time.perf_counter() - t0
    trace.k_star = k
    if last_good is not None:
        trace.x_final, trace.u_final = last_good.x, last_good.u
    return trace
