from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["SolverConfig", "StopReason", "IterRecord", "RunTrace"]

METHODS = ("tikhonov", "irgnm", "landweber")
FORMULATIONS = ("aao", "reduced")
REG_TARGETS = ("x_only", "x_and_u")
ALPHA_RULES = ("apriori", "sigma")
MU_POLICIES = ("safeguarded", "fixed")
STATE_NORMS = ("l2", "h2")
DEFAULT_CAPS = {"irgnm": 200, "landweber": 2_000_000, "tikhonov": 60}


class StopReason(str, enum.Enum):
    DISCREPANCY_MET = "discrepancy_met"
    ITERATION_CAP = "iteration_cap"
    REDUCED_STATE_FAILURE = "reduced_state_failure"
    SINGULAR_OPERATOR = "singular_operator"

    @property
    def is_failure(self) -> bool:
        return self in (StopReason.REDUCED_STATE_FAILURE, StopReason.SINGULAR_OPERATOR)


@dataclass(frozen=True)
class SolverConfig:
    """Settings for one regularized solve.

    Defaults follow the numerical protocol of the comparison experiments:
    ``alpha_k = 10 * 0.7**k``, zero starting values, ``tau**2 = 4``.
    ``x0``/``u0`` of ``None`` mean the zero function.

    ``mu`` is the constant step for ``mu_policy="fixed"`` and the safety
    factor ``c`` of ``c / |F'|^2`` for ``"safeguarded"``.

    ``max_outer`` and ``state_norm`` left as ``None`` take per-method
    defaults (see :attr:`outer_cap` and :attr:`metric`): Landweber runs get
    a cap of 2e6 and the H2-type state metric, everything else 200 and L2.
    """

    method: str = "irgnm"
    formulation: str = "aao"
    reg_target: str = "x_only"
    rho: float = 1.0
    tau_sq: float = 4.0
    alpha0: float = 10.0
    alpha_decay: float = 0.7
    alpha_rule: str = "apriori"
    sigma_lo: float = 0.5
    sigma_hi: float = 0.9
    mu_policy: str = "safeguarded"
    mu: float = 0.9
    mu_reestimate_every: int = 10_000
    max_outer: int | None = None
    max_inner: int = 50
    newton_tol: float = 1e-10
    max_newton: int = 50
    state_norm: str | None = None
    zero_noise_tol: float = 1e-12
    trace_every: int = 1
    x0: np.ndarray | None = field(default=None, repr=False)
    u0: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        checks = [
            (self.method in METHODS, f"method must be one of {METHODS}"),
            (self.formulation in FORMULATIONS, f"formulation must be one of {FORMULATIONS}"),
            (self.reg_target in REG_TARGETS, f"reg_target must be one of {REG_TARGETS}"),
            (self.alpha_rule in ALPHA_RULES, f"alpha_rule must be one of {ALPHA_RULES}"),
            (self.mu_policy in MU_POLICIES, f"mu_policy must be one of {MU_POLICIES}"),
            (self.state_norm is None or self.state_norm in STATE_NORMS, f"state_norm must be one of {STATE_NORMS}"),
            (self.rho > 0, "rho must be positive"),
            (self.tau_sq > 1, "tau_sq must exceed 1"),
            (self.alpha0 > 0, "alpha0 must be positive"),
            (0 < self.alpha_decay < 1, "alpha_decay must lie in (0, 1)"),
            (self.mu > 0, "mu must be positive"),
            (self.max_outer is None or self.max_outer >= 0, "max_outer must be nonnegative"),
            (self.max_inner >= 1, "max_inner must be positive"),
            (self.newton_tol > 0, "newton_tol must be positive"),
            (self.trace_every >= 1, "trace_every must be positive"),
        ]
        if self.alpha_rule == "sigma":
            checks.append((0 < self.sigma_lo < self.sigma_hi < 1, "need 0 < sigma_lo < sigma_hi < 1"))
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def outer_cap(self) -> int:
        if self.max_outer is not None:
            return self.max_outer
        return DEFAULT_CAPS[self.method]

    @property
    def metric(self) -> str:
        if self.state_norm is not None:
            return self.state_norm
        return "h2" if self.method == "landweber" else "l2"

    @property
    def label(self) -> str:
        return f"{self.method}-{self.formulation}"

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)

    def start(self, grid):
        x0 = grid.zeros() if self.x0 is None else np.asarray(self.x0, dtype=float)
        u0 = grid.zeros() if self.u0 is None else np.asarray(self.u0, dtype=float)
        grid.check(x0, u0)
        return x0, u0

    def alpha(self, k: int) -> float:
        return self.alpha0 * self.alpha_decay**k


@dataclass
class IterRecord:
    k: int
    alpha: float | None
    model_misfit: float
    obs_misfit: float
    misfit: float
    sigma: float | None
    time: float


@dataclass
class RunTrace:
    """Outcome of an iterative run.

    ``misfit`` values are ``rho/2 |A|^2 + 1/2 |u - y|^2`` (model part zero in
    the reduced formulation). ``k_star`` is the index of the returned iterate.
    """

    label: str
    records: list[IterRecord] = field(default_factory=list)
    stop_reason: StopReason | None = None
    k_star: int = 0
    x_final: np.ndarray | None = field(default=None, repr=False)
    u_final: np.ndarray | None = field(default=None, repr=False)
    cpu_time: float = 0.0
    message: str = ""

    @property
    def failed(self) -> bool:
        return self.stop_reason is not None and self.stop_reason.is_failure

    @property
    def final_misfit(self) -> float:
        return self.records[-1].misfit if self.records else float("nan")

    def relative_error(self, b_true, grid) -> float:
        return grid.norm(self.x_final - b_true) / grid.norm(b_true)
