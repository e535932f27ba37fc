"""Data synthesis, comparison tables and artifact files.

A table row compares the all-at-once and the reduced variant of one method
at one value of ``xi``. Runs that end in a failure mode (the state equation
could not be solved, or the linearized operator became singular) are shown
as ``"-"``; nothing computed by a failed run is reported.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .grid_pde import Grid1D, NonconvergenceReport, ProblemInstance, laplacian_apply, solve_state
from .operators import DataPair
from .solvers import RunTrace, SolverConfig, irgnm_run, landweber_run

__all__ = [
    "ExperimentSpec",
    "ReportRow",
    "ground_truth",
    "synthesize_data",
    "run_cells",
    "run_table",
    "rows_from_cells",
    "emit_csv",
    "read_csv",
    "emit_plot_data",
    "table1_spec",
    "table2_spec",
    "TABLE1_XI",
    "TABLE1_TAU_SQ",
    "TABLE2_XI",
    "TABLE2_TAU_SQ",
    "FAIL",
]

FAIL = "-"
TRUTHS = ("sin", "sin_plus_s")
DEFAULT_TRUTH_SCALE = 22.0

TABLE1_XI = (0.0, 10.0, 100.0, 1000.0, -0.5, -1.0, -10.0, -100.0, -1000.0)
TABLE1_TAU_SQ = (4.0, 20.0, 20.0, 20.0, 4.0, 4.0, 4.0, 4.0, 4.0)
TABLE2_XI = (0.5, 5.0, 10.0, -0.5, -1.0)
TABLE2_TAU_SQ = (4.0,) * 5


def ground_truth(grid: Grid1D, kind: str = "sin", scale: float = DEFAULT_TRUTH_SCALE) -> np.ndarray:
    """Source term ``b``: ``scale * sin(pi s)`` or ``scale * (sin(pi s) + s)``."""
    s = grid.nodes
    if kind == "sin":
        return scale * np.sin(np.pi * s)
    if kind == "sin_plus_s":
        return scale * (np.sin(np.pi * s) + s)
    raise ValueError(f"unknown ground truth {kind!r}; choose from {TRUTHS}")


def _manufactured_state(grid: Grid1D, kind: str, scale: float) -> np.ndarray:
    # Exact continuous solution of -u'' = b for the selected b.
    s = grid.nodes
    u = np.sin(np.pi * s) / np.pi**2
    if kind == "sin_plus_s":
        u = u + (s - s**3) / 6.0
    return scale * u


@dataclass(frozen=True)
class ExperimentSpec:
    """One comparison experiment.

    ``tau_sqs`` pairs with ``xis``. All rows use the same noise direction
    (drawn from ``seed``), rescaled per ``xi`` to ``noise_level * |u_dag|``.
    """

    xis: tuple = TABLE1_XI
    tau_sqs: tuple = TABLE1_TAU_SQ
    solver_matrix: tuple = ()
    n_interior: int = 99
    truth: str = "sin"
    truth_scale: float = DEFAULT_TRUTH_SCALE
    noise_level: float = 0.01
    seed: int = 0
    timing: bool = False
    name: str = "table"

    def __post_init__(self):
        if len(self.xis) != len(self.tau_sqs):
            raise ValueError("xis and tau_sqs must have equal length")
        if self.noise_level < 0:
            raise ValueError("noise_level must be nonnegative")
        if self.truth not in TRUTHS:
            raise ValueError(f"truth must be one of {TRUTHS}")
        if any(t <= 1 for t in self.tau_sqs):
            raise ValueError("tau_sq must exceed 1")

    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.n_interior)


@dataclass
class ReportRow:
    """One table row; ``None`` marks a variant without a result."""

    xi: float
    tau_sq: float
    it_aao: int | None
    it_red: int | None
    cpu_aao_s: float | None
    cpu_red_s: float | None
    relerr_aao: float | None
    relerr_red: float | None


CSV_HEADER = [f.name for f in fields(ReportRow)]


def synthesize_data(spec: ExperimentSpec, xi: float, rho: float = 1.0):
    """Return ``(ProblemInstance, DataPair)`` at nonlinearity ``xi``.

    The state is computed from the selected ``b`` by the Newton solver. If
    that fails (``xi`` too negative), the exact linear-case solution is
    used as the true state and ``b`` is redefined from it nodewise, which
    needs no nonlinear solve. The noise has norm exactly
    ``noise_level * |u_dag|`` and ``delta`` is that norm.
    """
    g = spec.grid
    b = ground_truth(g, spec.truth, spec.truth_scale)
    p = ProblemInstance(g, float(xi), b, g.zeros())
    try:
        u = solve_state(p, b)
    except NonconvergenceReport:
        u = _manufactured_state(g, spec.truth, spec.truth_scale)
        b = laplacian_apply(g, u) + xi * u**3
    p = ProblemInstance(g, float(xi), b, u)
    if spec.noise_level == 0:
        return p, DataPair(u.copy(), 0.0, rho=rho)
    e = np.random.default_rng(spec.seed).standard_normal(g.n_interior)
    e *= spec.noise_level * g.norm(u) / g.norm(e)
    y = u + e
    # delta is the realized noise norm, so |y - u_dag| <= delta holds exactly.
    return p, DataPair(y, g.norm(y - u), rho=rho)


def _solve(p: ProblemInstance, d: DataPair, cfg: SolverConfig) -> RunTrace:
    if cfg.method == "irgnm":
        return irgnm_run(p, d, cfg)
    if cfg.method == "landweber":
        return landweber_run(p, d, cfg)
    raise ValueError("tables compare iterative methods (irgnm, landweber)")


def _cell(args):
    spec, xi, tau_sq, cfg = args
    p, d = synthesize_data(spec, xi, rho=cfg.rho)
    trace = _solve(p, d, cfg.with_(tau_sq=tau_sq))
    err = None if trace.failed or trace.x_final is None else trace.relative_error(p.b_true, p.grid)
    return {"trace": trace, "relerr": err, "b_true": p.b_true}


def run_cells(spec: ExperimentSpec, jobs: int = 1) -> dict:
    """Run every (xi, config) cell; returns ``{(row, config_index): result}``.

    With ``jobs > 1`` cells run in worker processes; results are keyed so
    assembly order never depends on completion order.
    """
    tasks = [
        ((i, j), (spec, xi, tau, cfg))
        for i, (xi, tau) in enumerate(zip(spec.xis, spec.tau_sqs))
        for j, cfg in enumerate(spec.solver_matrix)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_cell, [t for _, t in tasks]))
    else:
        results = [_cell(t) for _, t in tasks]
    return {key: res for (key, _), res in zip(tasks, results)}


def rows_from_cells(spec: ExperimentSpec, cells: dict) -> list[ReportRow]:
    if not spec.solver_matrix:
        return []
    idx = {}
    for j, cfg in enumerate(spec.solver_matrix):
        idx.setdefault(cfg.formulation, j)
    rows = []
    for i, (xi, tau) in enumerate(zip(spec.xis, spec.tau_sqs)):
        vals = {}
        for form, tag in (("aao", "aao"), ("reduced", "red")):
            j = idx.get(form)
            res = cells.get((i, j)) if j is not None else None
            if res is None or res["relerr"] is None:
                vals[tag] = (None, None, None)
                continue
            tr = res["trace"]
            cpu = round(tr.cpu_time, 2) if spec.timing else math.nan
            vals[tag] = (tr.k_star, cpu, res["relerr"])
        rows.append(
            ReportRow(
                float(xi), float(tau),
                vals["aao"][0], vals["red"][0],
                vals["aao"][1], vals["red"][1],
                vals["aao"][2], vals["red"][2],
            )
        )
    return rows


def run_table(spec: ExperimentSpec, jobs: int = 1) -> list[ReportRow]:
    """Run the comparison and return one row per ``xi`` (empty without solvers)."""
    if not spec.solver_matrix:
        return []
    return rows_from_cells(spec, run_cells(spec, jobs))


def _fmt(v) -> str:
    if v is None:
        return FAIL
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def emit_csv(rows, path) -> Path:
    """Write rows as CSV (header always present, LF line endings, UTF-8)."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc
    return path


def _parse(name, text):
    if text == FAIL:
        return None
    if name.startswith("it_"):
        return int(text)
    return float(text)


def read_csv(path) -> list[ReportRow]:
    """Parse a file written by :func:`emit_csv` back into rows."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [ReportRow(*[_parse(n, t) for n, t in zip(header, line)]) for line in reader]


def emit_plot_data(grid: Grid1D, series: dict, path) -> Path:
    """Write whitespace-separated ``s b`` series, one block per name.

    Blocks start with ``# name`` and are separated by a blank line. A
    ``None`` series (failed run) is written as a header with no points.
    """
    path = Path(path)
    lines = []
    for name, values in series.items():
        if lines:
            lines.append("")
        if values is None:
            lines.append(f"# {name} (no result)")
            continue
        grid.check(values)
        lines.append(f"# {name}")
        lines.extend(f"{s:.17g} {v:.17g}" for s, v in zip(grid.nodes, values))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write plot data to {path}: {exc}") from exc
    return path


def plot_series(spec: ExperimentSpec, cells: dict, row: int) -> dict:
    """Series ``b_true``, ``b_aao``, ``b_red`` for one row of a run."""
    out = {"b_true": None, "b_aao": None, "b_red": None}
    for (i, j), res in cells.items():
        if i != row:
            continue
        out["b_true"] = res["b_true"]
        tag = "b_aao" if spec.solver_matrix[j].formulation == "aao" else "b_red"
        out[tag] = None if res["relerr"] is None else res["trace"].x_final
    return out


def table1_spec(**kw) -> ExperimentSpec:
    """IRGNM comparison with the a-priori schedule ``alpha_k = 10 * 0.7**k``."""
    base = kw.pop("base", SolverConfig(method="irgnm"))
    kw.setdefault("solver_matrix", (base.with_(formulation="aao"), base.with_(formulation="reduced")))
    kw.setdefault("name", "table1")
    return ExperimentSpec(**kw)


def table2_spec(**kw) -> ExperimentSpec:
    """Landweber comparison with safeguarded step sizes."""
    base = kw.pop("base", SolverConfig(method="landweber"))
    kw.setdefault("xis", TABLE2_XI)
    kw.setdefault("tau_sqs", TABLE2_TAU_SQ)
    kw.setdefault("solver_matrix", (base.with_(formulation="aao"), base.with_(formulation="reduced")))
    kw.setdefault("name", "table2")
    return ExperimentSpec(**kw)


def default_output_dir() -> Path:
    return Path(os.environ.get("AAOREG_OUTPUT_DIR", "."))
