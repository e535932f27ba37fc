"""Structural diagnostics: range-invariance gap, linear source-condition
elements and empirical convergence rates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid_pde import (
    Grid1D,
    NonconvergenceReport,
    ProblemInstance,
    SingularOperator,
    jacobian_at,
)
from .operators import DataPair
from .solvers import SolverConfig, irgnm_run, landweber_run

__all__ = [
    "RateFit",
    "SourceElements",
    "range_invariance_gap",
    "source_condition_elements_linear",
    "fit_rate",
    "rate_truth",
    "make_rate_run",
]


def range_invariance_gap(p: ProblemInstance, u, u_tilde, state_norm: str = "l2") -> float:
    """Norm of ``R - I`` for the block map relating derivatives at ``u`` and ``u_tilde``.

    With ``L = -I`` the gap is the operator norm of
    ``D = 3 xi diag(u_tilde^2 - u^2)`` from the state space to the parameter
    space. For ``"l2"`` that is ``max |D_ii|``; for ``"h2"`` (state norm
    ``|Delta_h v|``) it is the spectral norm of ``D (-Delta_h)^{-1}``.
    """
    g = p.grid
    g.check(u, u_tilde)
    diag = 3.0 * p.xi * (np.asarray(u_tilde, float) ** 2 - np.asarray(u, float) ** 2)
    if state_norm == "l2":
        return float(np.max(np.abs(diag)))
    if state_norm != "h2":
        raise ValueError(f"unknown state norm {state_norm!r}")
    lap_inv = jacobian_at(ProblemInstance(g, 0.0, g.zeros(), g.zeros()), g.zeros(), g.zeros()).solve(
        np.eye(g.n_interior)
    )
    return float(np.linalg.norm(diag[:, None] * lap_inv, 2))


@dataclass(frozen=True)
class SourceElements:
    v_obs: np.ndarray
    v_mod: np.ndarray
    residual: float

    def __iter__(self):
        return iter((self.v_obs, self.v_mod, self.residual))


def source_condition_elements_linear(p: ProblemInstance, x_dag, x0, u0) -> SourceElements:
    """Source elements of the all-at-once benchmark condition, linear case.

    With ``S = -K^{-1} L = (-Delta_h)^{-1}`` and ``T = I + S^* S`` the
    condition reads ``T (x_dag - x0) = S^* (v_obs + u0 - S x0)``; ``v_obs``
    is its least-squares solution and
    ``v_mod = K^{-*} ((u_dag - u0) - v_obs)`` with ``u_dag = S x_dag``.
    ``residual`` is the grid norm of the mismatch, so rank deficiency is
    reported rather than hidden.
    """
    if p.xi != 0:
        raise ValueError("source elements are only defined for the linear case xi = 0")
    g = p.grid
    g.check(x_dag, x0, u0)
    n = g.n_interior
    J = jacobian_at(p, g.zeros(), g.zeros())
    S = J.solve(np.eye(n))  # symmetric, so S^* = S.T = S
    T = np.eye(n) + S.T @ S
    rhs = T @ (x_dag - x0) - S.T @ (u0 - S @ x0)
    v_obs, *_ = np.linalg.lstsq(S.T, rhs, rcond=None)
    residual = g.norm(S.T @ v_obs - rhs)
    u_dag = S @ x_dag
    v_mod = J.solve((u_dag - u0) - v_obs, trans="T")
    return SourceElements(v_obs, v_mod, residual)


@dataclass
class RateFit:
    """Log-log least-squares fit of error against noise level.

    ``errors`` holds ``nan`` where a run failed; those points are left out
    of the fit.
    """

    deltas: list
    errors: list
    slope: float
    intercept: float = np.nan
    messages: list = field(default_factory=list)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(np.asarray(self.errors, dtype=float))


def fit_rate(run: Callable[[float], float], deltas: Sequence[float]) -> RateFit:
    """Fit the slope of ``log error`` against ``log delta``.

    ``run(delta)`` returns the reconstruction error at noise level
    ``delta``; a solver failure (an exception or a non-finite value) becomes
    a missing point. At least three valid points are required.
    """
    deltas = [float(d) for d in deltas]
    if len(deltas) < 3:
        raise ValueError("need at least 3 noise levels")
    if any(b >= a for a, b in zip(deltas, deltas[1:])) or min(deltas) <= 0:
        raise ValueError("deltas must be positive and strictly decreasing")
    errors, messages = [], []
    for d in deltas:
        try:
            err = float(run(d))
            messages.append("")
        except (NonconvergenceReport, SingularOperator, RuntimeError) as exc:
            err = np.nan
            messages.append(str(exc))
        errors.append(err if np.isfinite(err) and err > 0 else np.nan)
    ok = np.isfinite(errors)
    if ok.sum() < 3:
        raise RuntimeError(f"only {int(ok.sum())} valid points; need 3")
    slope, intercept = np.polyfit(np.log(np.asarray(deltas)[ok]), np.log(np.asarray(errors)[ok]), 1)
    return RateFit(deltas, errors, float(slope), float(intercept), messages)


def rate_truth(grid: Grid1D, kind: str = "source") -> np.ndarray:
    """Ground truth for rate experiments on the linear problem (``x0 = 0``).

    ``"source"``: ``x = c (-Delta_h)^{-1} 1``, so ``x - x0`` lies in the range
    of the adjoint of the linearized forward map. ``"jump"``:
    ``x = c (sin(pi s) + s)``, which does not vanish at ``s = 1`` and so
    violates the condition. In both cases ``c`` makes ``|u_dag| = 1``, so
    noise level ``delta`` is a relative noise level as well.
    """
    s = grid.nodes
    J = jacobian_at(ProblemInstance(grid, 0.0, grid.zeros(), grid.zeros()), grid.zeros(), grid.zeros())
    if kind == "source":
        x = J.solve(np.ones(grid.n_interior))
    elif kind == "jump":
        x = np.sin(np.pi * s) + s
    else:
        raise ValueError(f"unknown truth kind {kind!r}")
    u = J.solve(x)
    return x / grid.norm(u)


def make_rate_run(grid: Grid1D, kind: str = "source", cfg: SolverConfig | None = None, seed: int = 0):
    """Build ``run(delta) -> |x_k* - x_dag|`` for the linear problem.

    Noise is a seeded Gaussian vector rescaled to grid norm ``delta``; the
    same direction is used for every ``delta``.
    """
    cfg = SolverConfig(max_outer=400) if cfg is None else cfg
    x_dag = rate_truth(grid, kind)
    J = jacobian_at(ProblemInstance(grid, 0.0, grid.zeros(), grid.zeros()), grid.zeros(), grid.zeros())
    u_dag = J.solve(x_dag)
    p = ProblemInstance(grid, 0.0, x_dag, u_dag)
    direction = np.random.default_rng(seed).standard_normal(grid.n_interior)
    direction /= grid.norm(direction)
    if cfg.method == "tikhonov":
        raise ValueError("rate runs use an iterative method")
    solver = landweber_run if cfg.method == "landweber" else irgnm_run

    def run(delta: float) -> float:
        d = DataPair(u_dag + delta * direction, delta, rho=cfg.rho)
        trace = solver(p, d, cfg)
        if trace.failed:
            raise RuntimeError(f"run failed: {trace.stop_reason.value}")
        return grid.norm(trace.x_final - x_dag)

    return run

