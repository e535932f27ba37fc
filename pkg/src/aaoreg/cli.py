"""Command-line front end.

Subcommands: ``run``, ``table1``, ``table2``, ``rate``, ``diag``, ``selftest``.
Settings come from ``--key=value`` flags and, optionally, a ``--config``
file of ``key = value`` lines (``#`` starts a comment); flags win.
Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import harness
from .diagnostics import fit_rate, make_rate_run, range_invariance_gap, source_condition_elements_linear
from .grid_pde import Grid1D, ProblemInstance
from .solvers import SolverConfig, irgnm_run, landweber_run, tikhonov_alpha_search
from .solvers.config import METHODS

SUBCOMMANDS = ("run", "table1", "table2", "rate", "diag", "selftest")


def _floats(text):
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (converter, help)
KEYS = {
    "xi": (_floats, "nonlinearity strength(s), comma separated"),
    "tau_sq": (_floats, "discrepancy factor tau^2 (one value or one per xi)"),
    "seed": (int, "noise seed"),
    "n_interior": (int, "number of interior grid nodes"),
    "method": (str, "METHOD-FORMULATION, e.g. irgnm-aao, landweber-reduced"),
    "reg_target": (str, "x_only or x_and_u"),
    "rho": (float, "model-misfit weight"),
    "alpha0": (float, "initial regularization parameter"),
    "alpha_decay": (float, "geometric decay of alpha"),
    "alpha_rule": (str, "apriori or sigma"),
    "sigma_lo": (float, "lower bound of the sigma rule"),
    "sigma_hi": (float, "upper bound of the sigma rule"),
    "mu_policy": (str, "safeguarded or fixed"),
    "mu": (float, "Landweber step (fixed) or safety factor (safeguarded)"),
    "mu_reestimate_every": (int, "iterations between step-size estimates"),
    "max_outer": (int, "outer iteration cap"),
    "max_inner": (int, "inner iteration cap"),
    "newton_tol": (float, "state solver tolerance"),
    "state_norm": (str, "l2 or h2"),
    "truth": (str, "ground truth: sin or sin_plus_s"),
    "truth_scale": (float, "amplitude of the ground truth"),
    "noise_level": (float, "relative noise level"),
    "deltas": (_floats, "noise levels for the rate fit"),
    "kind": (str, "rate truth: source or jump"),
    "output_dir": (str, "output directory (default $AAOREG_OUTPUT_DIR or .)"),
    "jobs": (int, "parallel workers for table cells"),
    "timing": (_bool, "report wall-clock times (makes CSV output run-dependent)"),
}

CONFIG_FIELDS = (
    "reg_target", "rho", "alpha0", "alpha_decay", "alpha_rule", "sigma_lo", "sigma_hi",
    "mu_policy", "mu", "mu_reestimate_every", "max_outer", "max_inner", "newton_tol", "state_norm",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aaoreg", description="All-at-once vs reduced regularization experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="file of `key = value` lines")
        for key, (_, text) in KEYS.items():
            flag = "--" + key.replace("_", "-")
            if key == "timing":
                sp.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None, help=text)
            else:
                sp.add_argument(flag, dest=key, default=None, help=text)
    return parser


def read_config(path) -> dict:
    """Parse ``key = value`` lines; unknown keys are rejected."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected `key = value`")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise UsageError(f"{path}:{no}: unknown key {key!r}; valid keys: {', '.join(KEYS)}")
        out[key] = value
    return out


def resolve(args) -> dict:
    raw = read_config(args.config) if args.config else {}
    for key in KEYS:
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    opts = {}
    for key, value in raw.items():
        conv = KEYS[key][0]
        try:
            opts[key] = value if isinstance(value, bool) else conv(value)
        except ValueError as exc:
            raise UsageError(f"invalid value for {key}: {value!r} ({exc})") from exc
    return opts


def _solver_config(opts, method=None, formulation="aao") -> SolverConfig:
    kw = {k: opts[k] for k in CONFIG_FIELDS if k in opts}
    if method is not None:
        kw["method"] = method
    kw["formulation"] = formulation
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _parse_method(text):
    parts = text.split("-")
    if len(parts) != 2 or parts[0] not in METHODS or parts[1] not in ("aao", "reduced"):
        raise UsageError(f"method must be METHOD-FORMULATION with METHOD in {METHODS}, got {text!r}")
    return parts[0], parts[1]


def _spec_kw(opts) -> dict:
    kw = {}
    for key in ("seed", "n_interior", "truth", "truth_scale", "noise_level"):
        if key in opts:
            kw[key] = opts[key]
    return kw


def _output_dir(opts) -> Path:
    return Path(opts["output_dir"]) if "output_dir" in opts else harness.default_output_dir()


def _table_axes(opts, xis_default, taus_default):
    xis = tuple(opts.get("xi", xis_default))
    if "tau_sq" in opts:
        taus = opts["tau_sq"]
        if len(taus) == 1:
            taus = taus * len(xis)
        if len(taus) != len(xis):
            raise UsageError("give one tau_sq or one per xi")
    else:
        lookup = dict(zip(xis_default, taus_default))
        taus = [lookup.get(x, 4.0) for x in xis]
    return xis, tuple(float(t) for t in taus)


def cmd_table(opts, which, out):
    if "method" in opts:
        raise UsageError(f"{which} fixes the method; drop --method")
    if which == "table1":
        xis, taus = _table_axes(opts, harness.TABLE1_XI, harness.TABLE1_TAU_SQ)
        make, base = harness.table1_spec, _solver_config(opts, "irgnm")
    else:
        xis, taus = _table_axes(opts, harness.TABLE2_XI, harness.TABLE2_TAU_SQ)
        make, base = harness.table2_spec, _solver_config(opts, "landweber")
    try:
        spec = make(base=base, xis=xis, tau_sqs=taus, timing=opts.get("timing", False), **_spec_kw(opts))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    cells = harness.run_cells(spec, jobs=opts.get("jobs", 1))
    rows = harness.rows_from_cells(spec, cells)
    outdir = _output_dir(opts)
    path = harness.emit_csv(rows, outdir / f"{which}.csv")
    for i, xi in enumerate(spec.xis):
        harness.emit_plot_data(spec.grid, harness.plot_series(spec, cells, i), outdir / f"{which}_xi{xi:g}.dat")
    out.write(path.read_text(encoding="utf-8"))
    return 0


RUN_HEADER = ["method", "xi", "tau_sq", "stop_reason", "k_star", "misfit", "relerr", "cpu_s", "alpha"]


def cmd_run(opts, out):
    method, form = _parse_method(opts.get("method", "irgnm-aao"))
    cfg = _solver_config(opts, method, form)
    xis = opts.get("xi", [0.0])
    if len(xis) != 1:
        raise UsageError("run takes a single xi")
    tau = opts.get("tau_sq", [4.0])
    if len(tau) != 1:
        raise UsageError("run takes a single tau_sq")
    cfg = cfg.with_(tau_sq=tau[0])
    try:
        spec = harness.ExperimentSpec(xis=(xis[0],), tau_sqs=(tau[0],), **_spec_kw(opts))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    p, d = harness.synthesize_data(spec, xis[0], rho=cfg.rho)
    alpha = ""
    if method == "tikhonov":
        res = tikhonov_alpha_search(p, d, cfg)
        if res.result is None:
            row = [cfg.label, xis[0], tau[0], "exhausted", "-", "-", "-", "-", "-"]
        else:
            x = res.result.point.x if form == "aao" else res.result.point
            relerr = p.grid.norm(x - p.b_true) / p.grid.norm(p.b_true)
            stop = "band_skipped" if res.band_skipped else "discrepancy_band"
            row = [cfg.label, xis[0], tau[0], stop, res.index, res.result.misfit, relerr, "-", res.alpha]
    else:
        tr = (irgnm_run if method == "irgnm" else landweber_run)(p, d, cfg)
        if tr.failed:
            row = [cfg.label, xis[0], tau[0], tr.stop_reason.value, "-", "-", "-", "-", alpha]
        else:
            cpu = f"{tr.cpu_time:.2f}" if opts.get("timing", False) else "nan"
            row = [cfg.label, xis[0], tau[0], tr.stop_reason.value, tr.k_star, tr.final_misfit,
                   tr.relative_error(p.b_true, p.grid), cpu, alpha]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RUN_HEADER)
    w.writerow(row)
    return 0


def cmd_rate(opts, out):
    method, form = _parse_method(opts.get("method", "irgnm-aao"))
    cfg = _solver_config(opts, method, form)
    if "max_outer" not in opts:
        cfg = cfg.with_(max_outer=400)
    deltas = opts.get("deltas", [1e-2, 1e-3, 1e-4, 1e-5])
    grid = Grid1D(opts.get("n_interior", 99))
    try:
        fit = fit_rate(make_rate_run(grid, opts.get("kind", "source"), cfg, seed=opts.get("seed", 0)), deltas)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["delta", "error"])
    for dl, e in zip(fit.deltas, fit.errors):
        w.writerow([repr(dl), "-" if not np.isfinite(e) else repr(e)])
    out.write(f"# slope {fit.slope:.6f}\n")
    return 0


def cmd_diag(opts, out):
    try:
        spec = harness.ExperimentSpec(**_spec_kw(opts))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    g = spec.grid
    norm = opts.get("state_norm", "l2")
    for xi in opts.get("xi", [1.0, 10.0, 100.0]):
        p, d = harness.synthesize_data(spec, xi)
        gap_data = range_invariance_gap(p, p.u_true, d.y_obs, norm)
        gap_zero = range_invariance_gap(p, g.zeros(), p.u_true, norm)
        out.write(f"xi={xi:g} gap(u_dag, y_obs)={gap_data:.6e} gap(0, u_dag)={gap_zero:.6e}\n")
    lin = ProblemInstance(g, 0.0, g.zeros(), g.zeros())
    for kind in harness.TRUTHS:
        x_dag = harness.ground_truth(g, kind, spec.truth_scale)
        v_obs, v_mod, res = source_condition_elements_linear(lin, x_dag, g.zeros(), g.zeros())
        out.write(
            f"truth={kind} |v_obs|={g.norm(v_obs):.6e} |v_mod|={g.norm(v_mod):.6e} residual={res:.3e}\n"
        )
    return 0


def cmd_selftest(opts, out):
    from .selftest import run_checks

    results = run_checks()
    for name, ok, detail in results:
        out.write(f"{'PASS' if ok else 'FAIL'} {name}: {detail}\n")
    return 0 if all(ok for _, ok, _ in results) else 2


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = resolve(args)
        if args.command in ("table1", "table2"):
            return cmd_table(opts, args.command, out)
        handler = {"run": cmd_run, "rate": cmd_rate, "diag": cmd_diag, "selftest": cmd_selftest}[args.command]
        return handler(opts, out)
    except UsageError as exc:
        print(f"aaoreg: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure of a computation or of I/O
        print(f"aaoreg: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
