"""Quick invariant checks behind ``aaoreg selftest``.

Each check compares an implementation against an independent dense or
finite-difference computation and returns ``(name, ok, detail)``.
"""
from __future__ import annotations

import numpy as np

from .grid_pde import Grid1D, ProblemInstance, count_linear_solves, jacobian_at, residual_A
from .operators import (
    AaoPoint,
    DataPair,
    aao_jacobian_adjoint_apply,
    aao_jacobian_apply,
    reduced_adjoint_apply,
    reduced_derivative_apply,
    reduced_eval,
)
from .solvers import (
    SolverConfig,
    irgnm_aao_step,
    irgnm_reduced_step,
    landweber_aao_step,
    landweber_reduced_step,
)

__all__ = ["run_checks"]


def _instance(n=20, xi=0.0, seed=0):
    g = Grid1D(n)
    rng = np.random.default_rng(seed)
    s = g.nodes
    b = np.sin(np.pi * s) * 5
    return ProblemInstance(g, xi, b, g.zeros()), rng


def check_stencil():
    g = Grid1D(30)
    s = g.nodes
    p = ProblemInstance(g, 0.0, g.zeros(), g.zeros())
    err = np.max(np.abs(residual_A(p, np.full(g.n_interior, 2.0), s * (1 - s))))
    return "quadratic stencil exactness", err < 1e-10, f"max residual {err:.1e}"


def check_adjoints():
    p, rng = _instance(40, xi=7.0)
    g = p.grid
    n = g.n_interior
    worst = 0.0
    for _ in range(100):
        z = AaoPoint(rng.standard_normal(n), rng.standard_normal(n))
        d = AaoPoint(rng.standard_normal(n), rng.standard_normal(n))
        w = (rng.standard_normal(n), rng.standard_normal(n))
        Td = aao_jacobian_apply(p, z, d)
        lhs = g.inner(Td[0], w[0]) + g.inner(Td[1], w[1])
        rhs = d.inner(aao_jacobian_adjoint_apply(p, z, w), g)
        scale = d.norm(g) * np.sqrt(g.inner(w[0], w[0]) + g.inner(w[1], w[1]))
        worst = max(worst, abs(lhs - rhs) / scale)
    e = reduced_eval(p, p.b_true)
    for _ in range(100):
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        lhs = g.inner(reduced_derivative_apply(e, a), b)
        rhs = g.inner(a, reduced_adjoint_apply(e, b))
        worst = max(worst, abs(lhs - rhs) / (g.norm(a) * g.norm(b)))
    return "adjoint identities", worst <= 1e-10, f"max relative defect {worst:.1e}"


def check_jacobian_fd():
    p, rng = _instance(40, xi=3.0)
    n = p.grid.n_interior
    x, u, v = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n)
    eps = 1e-7
    fd = (residual_A(p, x, u + eps * v) - residual_A(p, x, u)) / eps
    an = jacobian_at(p, x, u).apply_K(v)
    rel = np.linalg.norm(fd - an) / np.linalg.norm(an)
    return "model Jacobian vs finite differences", rel <= 1e-5, f"relative error {rel:.1e}"


def _dense_laplacian(g):
    n = g.n_interior
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / g.h**2


def check_linear_oracles():
    p, rng = _instance(20, xi=0.0)
    g = p.grid
    n = g.n_interior
    K = _dense_laplacian(g)
    T = np.linalg.inv(K)
    y = T @ p.b_true + 0.01 * rng.standard_normal(n)
    d = DataPair(y, 0.01)
    cfg = SolverConfig()
    alpha = 0.3
    z_k = AaoPoint(rng.standard_normal(n), rng.standard_normal(n))
    # stacked least squares for the linearized all-at-once step
    M = np.block([[-np.eye(n), K], [np.zeros((n, n)), np.eye(n)], [np.sqrt(alpha) * np.eye(n), np.zeros((n, n))]])
    A_k = K @ z_k.u - z_k.x
    rhs = np.concatenate([-A_k, y - z_k.u, -np.sqrt(alpha) * z_k.x])
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    step = irgnm_aao_step(p, z_k, d, alpha, cfg)
    e1 = max(np.max(np.abs(step.x - z_k.x - sol[:n])), np.max(np.abs(step.u - z_k.u - sol[n:])))
    x_k = rng.standard_normal(n)
    e = reduced_eval(p, x_k)
    ref = np.linalg.solve(T.T @ T + alpha * np.eye(n), T.T @ y)
    e2 = np.max(np.abs(irgnm_reduced_step(e, y, alpha, cfg) - ref))
    mu = 1e-9
    lw = landweber_aao_step(p, z_k, d, mu)
    w1 = A_k
    e3 = max(np.max(np.abs(lw.x - (z_k.x + mu * w1))), np.max(np.abs(lw.u - (z_k.u - mu * (K @ w1 + z_k.u - y)))))
    mu_r = 50.0
    e4 = np.max(np.abs(landweber_reduced_step(e, y, mu_r) - (x_k - mu_r * T.T @ (T @ x_k - y))))
    worst = max(e1, e2, e3, e4)
    return "linear-case dense oracles", worst <= 1e-8, f"max deviation {worst:.1e}"


def check_landweber_purity():
    p, rng = _instance(40, xi=2.0)
    n = p.grid.n_interior
    z = AaoPoint(rng.standard_normal(n), rng.standard_normal(n))
    d = DataPair(rng.standard_normal(n), 0.1)
    with count_linear_solves() as c:
        for _ in range(10):
            z = landweber_aao_step(p, z, d, 1e-10, "l2")
            z = landweber_aao_step(p, z, d, 1e-3, "h2")
    return "all-at-once Landweber solves no linear system", c.count == 0, f"{c.count} solves"


CHECKS = (check_stencil, check_adjoints, check_jacobian_fd, check_linear_oracles, check_landweber_purity)


def run_checks():
    out = []
    for check in CHECKS:
        try:
            out.append(check())
        except Exception as exc:  # a crash is a failed check
            out.append((check.__name__, False, f"{type(exc).__name__}: {exc}"))
    return out
