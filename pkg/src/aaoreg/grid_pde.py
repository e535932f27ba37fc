"""Finite-difference discretization of the semilinear Dirichlet problem

    -u'' + xi * u**3 = b   on (0, 1),    u(0) = u(1) = 0,

on a uniform grid of interior nodes.

Grid functions are plain float arrays of length ``n_interior``; the grid
carries the h-weighted inner product that makes discrete norms approximate
L2(0, 1).
"""
from __future__ import annotations

import contextlib
import contextvars
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.fft import dst
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.linalg.lapack import dgttrf, dgttrs

__all__ = [
    "Grid1D",
    "ProblemInstance",
    "PdeJacobian",
    "NonconvergenceReport",
    "SingularOperator",
    "DimensionError",
    "laplacian_apply",
    "residual_A",
    "jacobian_at",
    "solve_state",
    "solve_linearized",
    "solve_adjoint",
    "count_linear_solves",
    "dirichlet_eigenvalues",
    "state_riesz_inverse",
    "state_norm_operator",
]

PIVOT_TOL = 1e-14


class DimensionError(ValueError):
    """A grid function does not match the grid it is used on."""


class SingularOperator(ArithmeticError):
    """The linearized state operator lost invertibility."""


class NonconvergenceReport(RuntimeError):
    """The nonlinear state solve did not converge.

    This is an expected outcome for strongly negative ``xi``: the reduced
    formulation is undefined at that parameter. The last Newton iterate and
    its residual norm are kept for reporting.
    """

    def __init__(self, message, last_iterate, residual_norm, iterations):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm
        self.iterations = iterations


# Instrumentation: active solve counters for the current context.
_counters: contextvars.ContextVar[tuple] = contextvars.ContextVar("_counters", default=())


class _SolveCounter:
    def __init__(self):
        self.count = 0


@contextlib.contextmanager
def count_linear_solves():
    """Count tridiagonal/banded linear solves performed inside the block.

    >>> with count_linear_solves() as c:
    ...     pass
    >>> c.count
    0
    """
    counter = _SolveCounter()
    token = _counters.set(_counters.get() + (counter,))
    try:
        yield counter
    finally:
        _counters.reset(token)


def _record_solve(n=1):
    for c in _counters.get():
        c.count += n


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on (0, 1) with ``n_interior`` unknowns."""

    n_interior: int = 99

    def __post_init__(self):
        if self.n_interior < 2:
            raise ValueError("n_interior must be at least 2")

    @property
    def h(self) -> float:
        return 1.0 / (self.n_interior + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n_interior + 1)

    @classmethod
    def from_spacing(cls, h: float) -> "Grid1D":
        return cls(int(round(1.0 / h)) - 1)

    def check(self, *fs):
        for f in fs:
            if np.shape(f) != (self.n_interior,):
                raise DimensionError(
                    f"grid function of shape {np.shape(f)} on grid with {self.n_interior} nodes"
                )

    def inner(self, f, g) -> float:
        return self.h * float(np.dot(f, g))

    def norm(self, f) -> float:
        return float(np.sqrt(self.inner(f, f)))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_interior)


@dataclass(frozen=True)
class ProblemInstance:
    """Model problem data: grid, nonlinearity strength and ground truth."""

    grid: Grid1D
    xi: float
    b_true: np.ndarray = field(repr=False)
    u_true: np.ndarray = field(repr=False)


def laplacian_apply(g: Grid1D, f) -> np.ndarray:
    """Apply the Dirichlet second-difference operator ``-Delta_h``."""
    g.check(f)
    f = np.asarray(f, dtype=float)
    out = 2.0 * f
    out[1:] -= f[:-1]
    out[:-1] -= f[1:]
    return out / g.h**2


def dirichlet_eigenvalues(g: Grid1D) -> np.ndarray:
    """Eigenvalues of ``-Delta_h``, ascending; eigenvectors are sin(j pi s)."""
    j = np.arange(1, g.n_interior + 1)
    return (2.0 - 2.0 * np.cos(j * np.pi * g.h)) / g.h**2


def state_riesz_inverse(g: Grid1D, f, state_norm: str = "l2") -> np.ndarray:
    """Map an L2 gradient of a state-space functional to its gradient in V.

    ``"l2"`` is the identity. ``"h2"`` uses ``<u, v>_V = <Delta_h u, Delta_h v>``
    and inverts ``Delta_h^2`` spectrally with a type-I sine transform, so no
    linear system is solved.
    """
    if state_norm == "l2":
        return np.asarray(f, dtype=float)
    if state_norm != "h2":
        raise ValueError(f"unknown state norm {state_norm!r}")
    coef = dst(np.asarray(f, dtype=float), type=1, norm="ortho")
    return dst(coef / dirichlet_eigenvalues(g) ** 2, type=1, norm="ortho")


def state_norm_operator(g: Grid1D, v, state_norm: str = "l2") -> np.ndarray:
    """Apply the Gram operator ``R`` of the state norm (``|v|_V^2 = <R v, v>``)."""
    if state_norm == "l2":
        return np.asarray(v, dtype=float)
    if state_norm != "h2":
        raise ValueError(f"unknown state norm {state_norm!r}")
    return laplacian_apply(g, laplacian_apply(g, v))


def residual_A(p: ProblemInstance, x, u) -> np.ndarray:
    """Model residual ``-Delta_h u + xi u^3 - x``."""
    p.grid.check(x, u)
    u = np.asarray(u, dtype=float)
    return laplacian_apply(p.grid, u) + p.xi * u**3 - x


@dataclass(frozen=True)
class PdeJacobian:
    """Derivatives of the model residual at a point.

    ``K = -Delta_h + 3 xi diag(u^2)`` is the state derivative; the parameter
    derivative is ``L = -I``. ``K`` is stored by its tridiagonal bands and
    factorized lazily.
    """

    grid: Grid1D
    diag: np.ndarray = field(repr=False)

    @property
    def offdiag(self) -> float:
        return -1.0 / self.grid.h**2

    def apply_K(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = self.diag * v
        out[1:] += self.offdiag * v[:-1]
        out[:-1] += self.offdiag * v[1:]
        return out

    # K is symmetric, so its adjoint with respect to the grid inner product is itself.
    apply_K_adjoint = apply_K

    @staticmethod
    def apply_L(dx) -> np.ndarray:
        return -np.asarray(dx, dtype=float)

    apply_L_adjoint = apply_L

    def dense_K(self) -> np.ndarray:
        n = self.grid.n_interior
        off = np.full(n - 1, self.offdiag)
        return np.diag(self.diag) + np.diag(off, 1) + np.diag(off, -1)

    def banded_K_squared(self) -> np.ndarray:
        """Upper banded storage (3 x n) of ``K @ K`` for ``solveh_banded``."""
        d, o = self.diag, self.offdiag
        n = d.size
        ab = np.zeros((3, n))
        main = d**2 + 2 * o**2
        main[0] -= o**2
        main[-1] -= o**2
        ab[2] = main
        ab[1, 1:] = o * (d[:-1] + d[1:])
        ab[0, 2:] = o**2
        return ab

    @cached_property
    def _lu(self):
        n = self.grid.n_interior
        scale = np.abs(self.diag).max() + 2 * abs(self.offdiag)
        if n < 3:
            # the LAPACK tridiagonal wrapper mis-sizes its arguments for n = 2
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)
                lu, piv = lu_factor(self.dense_K(), check_finite=False)
            if np.min(np.abs(np.diag(lu))) <= PIVOT_TOL * scale:
                return None
            return lu, piv
        off = np.full(n - 1, self.offdiag)
        dl, d, du, du2, ipiv, info = dgttrf(off, self.diag, off)
        if info != 0 or np.min(np.abs(d)) <= PIVOT_TOL * scale:
            return None
        return dl, d, du, du2, ipiv

    def solve(self, rhs, trans="N") -> np.ndarray:
        lu = self._lu
        if lu is None:
            raise SingularOperator("state operator K is numerically singular")
        rhs = np.asarray(rhs, dtype=float)
        _record_solve()
        if len(lu) == 2:
            sol = lu_solve(lu, rhs.reshape(self.grid.n_interior, -1), trans=0 if trans == "N" else 1)
            return sol.reshape(rhs.shape)
        sol, info = dgttrs(*lu, rhs.reshape(self.grid.n_interior, -1), trans=trans)
        if info != 0:
            raise SingularOperator(f"dgttrs failed with info={info}")
        return sol.reshape(rhs.shape)


def jacobian_at(p: ProblemInstance, x, u) -> PdeJacobian:
    p.grid.check(x, u)
    u = np.asarray(u, dtype=float)
    diag = 2.0 / p.grid.h**2 + 3.0 * p.xi * u**2
    return PdeJacobian(p.grid, diag)


def solve_linearized(J: PdeJacobian, rhs) -> np.ndarray:
    """Solve ``K v = rhs``; raises :class:`SingularOperator` on a tiny pivot."""
    J.grid.check(rhs)
    return J.solve(rhs)


def solve_adjoint(J: PdeJacobian, rhs) -> np.ndarray:
    """Solve ``K^* w = rhs`` (the transpose solve; equal to the forward solve here)."""
    J.grid.check(rhs)
    return J.solve(rhs, trans="T")


def solve_state(
    p: ProblemInstance,
    x,
    u_init=None,
    tol: float = 1e-10,
    max_newton: int = 50,
    full_output: bool = False,
):
    """Solve ``A(x, u) = 0`` for the state by damped Newton.

    Backtracking halves the step until the residual norm satisfies the
    Armijo decrease ``|r(u + t d)| <= (1 - 1e-4 t) |r(u)|``; a step below
    ``2**-20`` counts as a stall.

    Parameters
    ----------
    p : ProblemInstance
    x : array
        Source term.
    u_init : array, optional
        Starting guess, zero by default.
    tol : float
        Target for the grid norm of the model residual.
    max_newton : int
        Newton iteration cap.
    full_output : bool
        If true, return ``(u, iterations)``.

    Raises
    ------
    NonconvergenceReport
        If the iteration cap is hit, the line search stalls or ``K`` becomes
        singular along the way.
    """
    g = p.grid
    u = g.zeros() if u_init is None else np.array(u_init, dtype=float)
    g.check(x, u)
    r = residual_A(p, x, u)
    rnorm = g.norm(r)
    it = 0
    while rnorm > tol:
        if it >= max_newton:
            raise NonconvergenceReport(
                f"Newton did not converge in {max_newton} iterations (|r| = {rnorm:.3e})",
                u, rnorm, it,
            )
        try:
            d = solve_linearized(jacobian_at(p, x, u), -r)
        except SingularOperator as exc:
            raise NonconvergenceReport(f"singular Jacobian: {exc}", u, rnorm, it) from exc
        t = 1.0
        while True:
            u_trial = u + t * d
            r_trial = residual_A(p, x, u_trial)
            rn_trial = g.norm(r_trial)
            if np.isfinite(rn_trial) and rn_trial <= (1.0 - 1e-4 * t) * rnorm:
                break
            t *= 0.5
            if t < 2.0**-20:
                raise NonconvergenceReport(
                    f"line search stalled (|r| = {rnorm:.3e})", u, rnorm, it
                )
        u, r, rnorm = u_trial, r_trial, rn_trial
        it += 1
    if full_output:
        return u, it
    return u
