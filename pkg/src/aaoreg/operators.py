"""Forward operators of the model problem in both views.

All-at-once: the joint map ``(x, u) -> (A(x, u), u)`` with its block
Jacobian ``[[L, K], [0, I]]``. Reduced: ``x -> S(x)`` where ``S`` solves the
state equation, so ``F'(x) = K^{-1}`` (``L = -I`` cancels the minus sign of
the implicit-function derivative).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid_pde import (
    PdeJacobian,
    ProblemInstance,
    jacobian_at,
    residual_A,
    solve_adjoint,
    solve_linearized,
    solve_state,
)

__all__ = [
    "AaoPoint",
    "DataPair",
    "ReducedEval",
    "observe",
    "aao_apply",
    "aao_jacobian_apply",
    "aao_jacobian_adjoint_apply",
    "reduced_eval",
    "reduced_derivative_apply",
    "reduced_adjoint_apply",
    "operator_norm_estimate",
]


@dataclass(frozen=True)
class AaoPoint:
    """Joint unknown ``(x, u)`` with the product inner product."""

    x: np.ndarray
    u: np.ndarray

    def __add__(self, other):
        return AaoPoint(self.x + other.x, self.u + other.u)

    def __sub__(self, other):
        return AaoPoint(self.x - other.x, self.u - other.u)

    def __mul__(self, s):
        return AaoPoint(s * self.x, s * self.u)

    __rmul__ = __mul__

    def inner(self, other, grid) -> float:
        return grid.inner(self.x, other.x) + grid.inner(self.u, other.u)

    def norm(self, grid) -> float:
        return float(np.sqrt(self.inner(self, grid)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.u])

    @classmethod
    def from_flat(cls, v):
        n = v.size // 2
        return cls(v[:n].copy(), v[n:].copy())

    @classmethod
    def zeros(cls, grid):
        return cls(grid.zeros(), grid.zeros())


@dataclass(frozen=True)
class DataPair:
    """Right-hand side ``(y_mod, y_obs)`` with noise bound and model weight.

    The misfit is ``rho/2 |w - y_mod|^2 + 1/2 |y - y_obs|^2``.
    """

    y_obs: np.ndarray
    delta: float
    rho: float = 1.0
    y_mod: np.ndarray | None = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.y_mod is None:
            object.__setattr__(self, "y_mod", np.zeros_like(self.y_obs))


def observe(u) -> np.ndarray:
    """Observation operator (full interior measurements)."""
    return np.asarray(u, dtype=float)


def aao_apply(p: ProblemInstance, z: AaoPoint):
    return residual_A(p, z.x, z.u), observe(z.u)


def aao_jacobian_apply(p: ProblemInstance, z: AaoPoint, d: AaoPoint, J: PdeJacobian | None = None):
    J = jacobian_at(p, z.x, z.u) if J is None else J
    p.grid.check(d.x, d.u)
    return J.apply_L(d.x) + J.apply_K(d.u), observe(d.u)


def aao_jacobian_adjoint_apply(p: ProblemInstance, z: AaoPoint, w, J: PdeJacobian | None = None) -> AaoPoint:
    J = jacobian_at(p, z.x, z.u) if J is None else J
    w_mod, w_obs = w
    p.grid.check(w_mod, w_obs)
    return AaoPoint(J.apply_L_adjoint(w_mod), J.apply_K_adjoint(w_mod) + observe(w_obs))


@dataclass(frozen=True)
class ReducedEval:
    """Snapshot of the reduced forward map at ``x``: ``F(x) = observe(u)``."""

    x: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    jacobian: PdeJacobian = field(repr=False)
    newton_iterations: int = 0

    @property
    def value(self) -> np.ndarray:
        return observe(self.u)


def reduced_eval(p: ProblemInstance, x, u_init=None, tol: float = 1e-10, max_newton: int = 50) -> ReducedEval:
    """Evaluate the parameter-to-observation map at ``x``.

    Raises :class:`~aaoreg.grid_pde.NonconvergenceReport` when the state
    equation cannot be solved, i.e. the reduced map is undefined there.
    """
    x = np.asarray(x, dtype=float)
    u, its = solve_state(p, x, u_init=u_init, tol=tol, max_newton=max_newton, full_output=True)
    return ReducedEval(x, u, jacobian_at(p, x, u), its)


def reduced_derivative_apply(e: ReducedEval, dx) -> np.ndarray:
    # F'(x) dx = -K^{-1} L dx with L = -I
    return observe(solve_linearized(e.jacobian, dx))


def reduced_adjoint_apply(e: ReducedEval, r) -> np.ndarray:
    # F'(x)^* r = -L^* K^{-*} C^* r with L^* = -I
    return solve_adjoint(e.jacobian, observe(r))


def operator_norm_estimate(apply, adjoint, size: int, iterations: int = 100, seed: int = 0, inner=None) -> float:
    """Estimate ``|T|`` by power iteration on ``T^* T``.

    ``apply`` and ``adjoint`` act on flat arrays. ``inner`` is the domain
    inner product that ``adjoint`` is taken against; the Euclidean dot
    product by default (any common weight on domain and range cancels).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    inner = np.dot if inner is None else inner
    v = np.random.default_rng(seed).standard_normal(size)
    v /= np.sqrt(inner(v, v))
    lam = 0.0
    for _ in range(iterations):
        w = adjoint(apply(v))
        lam = max(lam, float(inner(v, w)))
        nw = np.sqrt(max(float(inner(w, w)), 0.0))
        if nw == 0.0:
            break
        v = w / nw
    return float(np.sqrt(lam))
