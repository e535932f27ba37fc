from __future__ import annotations

import numpy as np

from ..grid_pde import PdeJacobian, ProblemInstance, jacobian_at, residual_A
from ..operators import AaoPoint, DataPair, observe

__all__ = ["misfit_S", "misfit_parts", "discrepancy_threshold", "linearized_misfit_parts"]


def misfit_parts(p: ProblemInstance, z: AaoPoint, d: DataPair):
    """Return ``(model_misfit, obs_misfit)`` of ``F(z)`` against ``(y_mod, y_obs)``."""
    g = p.grid
    model = residual_A(p, z.x, z.u) - d.y_mod
    obs = observe(z.u) - d.y_obs
    return 0.5 * d.rho * g.inner(model, model), 0.5 * g.inner(obs, obs)


def misfit_S(p: ProblemInstance, z: AaoPoint, d: DataPair) -> float:
    """``rho/2 |A(x, u) - y_mod|^2 + 1/2 |C u - y_obs|^2``."""
    mm, om = misfit_parts(p, z, d)
    return mm + om


def linearized_misfit_parts(p, z_k: AaoPoint, z: AaoPoint, d: DataPair, J: PdeJacobian | None = None, A_k=None):
    """Misfit of the linearization of ``F`` at ``z_k`` evaluated at ``z``."""
    g = p.grid
    J = jacobian_at(p, z_k.x, z_k.u) if J is None else J
    A_k = residual_A(p, z_k.x, z_k.u) if A_k is None else A_k
    model = A_k + J.apply_L(z.x - z_k.x) + J.apply_K(z.u - z_k.u) - d.y_mod
    obs = observe(z_k.u) + observe(z.u - z_k.u) - d.y_obs
    return 0.5 * d.rho * g.inner(model, model), 0.5 * g.inner(obs, obs)


def discrepancy_threshold(d: DataPair, tau_sq: float, zero_noise_tol: float = 1e-12) -> float:
    """Stopping level ``tau^2 delta^2 / 2`` for the misfit ``S``.

    With exact data the level would be zero; ``zero_noise_tol`` replaces it.
    """
    if d.delta > 0:
        return 0.5 * tau_sq * d.delta**2
    return zero_noise_tol


def as_array(v):
    return np.asarray(v, dtype=float)
