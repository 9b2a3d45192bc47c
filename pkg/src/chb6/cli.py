"""Command-line entry point: simulate | optimize | verify | sweep-kappa.

Exit codes: 0 ok, 1 verify failure, 2 config error, 3 solver failure,
4 optimizer failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from chb6 import __version__
from chb6 import control as ctl
from chb6.config import ConfigError, RunConfig
from chb6.io import fmt, write_csv, write_field
from chb6.state import SolverError, StateTrajectory, diagnostics, solve_state

log = logging.getLogger("chb6")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER, EXIT_OPTIMIZER = 0, 1, 2, 3, 4
SERIES_COLUMNS = ["step", "t", "energy", "mean", "max_abs_phi", "v_norm", "mean_ode_residual"]
OPTIMIZE_COLUMNS = ["iter", "cost_total", "tracking_v", "tracking_phi", "terminal", "tikhonov", "sparsity", "residual", "alpha", "sparsity_fraction"]
SPARSITY_COLUMNS = ["kappa", "sparsity_fraction", "control_norm", "v_adj_norm", "pointwise_max_v_adj", "criterion_checked", "criterion_pass", "iterations", "reason"]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([fmt(x) for x in row])
    return buf.getvalue()


def series_csv_text(traj: StateTrajectory) -> str:
    d = diagnostics(traj)
    rows = zip(*(d[c] for c in SERIES_COLUMNS))
    return _csv_text(SERIES_COLUMNS, ([int(r[0])] + list(r[1:]) for r in rows))


def optimize_csv_text(rep: ctl.OptimizeReport) -> str:
    rows = ([i, c] + parts.as_list() + [r, a, s] for i, c, parts, r, a, s in rep.rows())
    return _csv_text(OPTIMIZE_COLUMNS, rows)


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("CHB6_OUT", "runs"))


def _metadata(cfg_raw: dict, command: str, seed: int, extra: dict | None = None) -> dict:
    meta = {
        "command": command,
        "config": cfg_raw,
        "seed": seed,
        "versions": {"chb6": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
    }
    meta.update(extra or {})
    return meta


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def _plots_simulate(out: Path, grid_dim: int, snapshots: list[str]) -> None:
    lines = [
        "# gnuplot script; run from this directory",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 800,500",
        "set output 'energy.png'",
        "plot 'series.csv' using 2:3 with lines title 'energy'",
        "set output 'mass.png'",
        "plot 'series.csv' using 2:4 with lines title 'mean(phi)'",
    ]
    if snapshots and grid_dim == 2:
        lines.append("# field slices: convert a snapshot with chb6.io.read_field, e.g. to a matrix text file")
        lines += [f"# snapshot {s}" for s in snapshots]
    (out / "plots.gp").write_text("\n".join(lines) + "\n")


def _plots_optimize(out: Path) -> None:
    lines = [
        "# gnuplot script; run from this directory",
        "set datafile separator ','",
        "set terminal pngcairo size 800,500",
        "set logscale y",
        "set output 'convergence.png'",
        "plot 'optimize.csv' using 1:2 with lines title 'cost', '' using 1:8 with lines title 'residual'",
        "unset logscale y",
        "set output 'sparsity.png'",
        "plot 'optimize.csv' using 1:10 with lines title 'sparsity fraction'",
    ]
    (out / "plots.gp").write_text("\n".join(lines) + "\n")


# -- commands --------------------------------------------------------------------


def run_simulate(cfg: RunConfig, out: Path, base_dir: Path | None = None) -> Path:
    from chb6.state import Control

    phi0 = cfg.initial_field(base_dir)
    g = Control.zeros(cfg.grid, cfg.time)
    traj = solve_state(cfg.grid, cfg.time, cfg.phys, g, phi0)
    out.mkdir(parents=True, exist_ok=True)
    (out / "series.csv").write_text(series_csv_text(traj))
    every = int(cfg.options.get("snapshot_every") or 0)
    snaps = []
    if every > 0:
        for n in range(0, traj.n_steps + 1, every):
            stem = out / "snapshots" / f"phi_{n:06d}"
            write_field(stem, cfg.grid, traj.phi[n], step=n, t=n * cfg.time.dt, field="phi")
            snaps.append(str(stem.relative_to(out)) + ".json")
    _write_json(out / "metadata.json", _metadata(cfg.raw, "simulate", cfg.seed, {"snapshots": snaps}))
    _plots_simulate(out, cfg.grid.dim, snaps)
    return out


def _problem(cfg: RunConfig, base_dir: Path | None, kappa: float | None = None) -> ctl.Problem:
    cp = cfg.require_control()
    if cp.beta[3] <= 0:
        raise ConfigError("optimize needs control.beta[3] > 0")
    prob = ctl.Problem(cfg.grid, cfg.time, cfg.phys, cp, cfg.targets(base_dir), cfg.initial_field(base_dir))
    return prob if kappa is None else prob.with_kappa(kappa)


def _write_optimize(out: Path, prob: ctl.Problem, rep: ctl.OptimizeReport, cfg: RunConfig) -> ctl.SparsityReport:
    out.mkdir(parents=True, exist_ok=True)
    (out / "optimize.csv").write_text(optimize_csv_text(rep))
    index = []
    for n in range(prob.time.n_steps):
        stem = out / "control" / f"g_{n:06d}"
        write_field(stem, prob.grid, rep.control.values[n], interval=n, t0=n * prob.time.dt, t1=(n + 1) * prob.time.dt)
        index.append({"interval": n, "file": f"control/g_{n:06d}.json"})
    _write_json(out / "control" / "index.json", {"n_steps": prob.time.n_steps, "T": prob.time.T, "files": index})
    sr = ctl.sparsity_report(rep.control, rep.adjoint, prob.ctrl)
    sr_d = dict(sr.__dict__)
    sr_d["projection_residual"] = ctl.projection_residual(rep.control, rep.adjoint, prob.ctrl)
    sr_d["iterations"] = rep.iterations
    sr_d["reason"] = rep.reason
    _write_json(out / "sparsity.json", sr_d)
    _write_json(out / "metadata.json", _metadata(cfg.raw, "optimize", cfg.seed, {"kappa": prob.ctrl.kappa}))
    _plots_optimize(out)
    return sr


def _optimize_kwargs(cfg: RunConfig) -> dict:
    o = cfg.optimize
    return {"tol_rel": float(o["tol_rel"]), "max_iter": int(o["max_iter"]), "alpha0": o["alpha0"]}


def run_optimize(cfg: RunConfig, out: Path, base_dir: Path | None = None) -> Path:
    prob = _problem(cfg, base_dir)
    rep = ctl.optimize(prob.zero_control(), prob, **_optimize_kwargs(cfg))
    _write_optimize(out, prob, rep, cfg)
    return out


def run_sweep(cfg: RunConfig, out: Path, base_dir: Path | None = None) -> Path:
    kappas = cfg.optimize.get("kappa_sweep")
    if not kappas:
        raise ConfigError("missing required key 'optimize.kappa_sweep'")
    base = _problem(cfg, base_dir)
    rows = []
    for i, kappa in enumerate(kappas):
        prob = base.with_kappa(float(kappa))
        rep = ctl.optimize(prob.zero_control(), prob, **_optimize_kwargs(cfg))
        sr = _write_optimize(out / f"kappa_{i:03d}", prob, rep, cfg)
        rows.append([float(kappa), sr.sparsity_fraction, rep.control.norm(), sr.v_adj_norm, sr.pointwise_max_v_adj,
                     sr.criterion_checked, sr.criterion_pass, rep.iterations, rep.reason])
    write_csv(out / "sparsity_table.csv", SPARSITY_COLUMNS, rows)
    _write_json(out / "metadata.json", _metadata(cfg.raw, "sweep-kappa", cfg.seed, {"kappas": list(kappas)}))
    return out


def run_verify(args, out: Path, echo=print) -> int:
    from chb6.verify import VerifySettings, run_battery

    settings = VerifySettings(seed=int(args.seed or 0), mutate=args.mutate)
    if args.config:
        cfg = RunConfig.load(args.config, {"seed": args.seed})
        settings.n = cfg.grid.sizes[0]
        settings.nt = cfg.time.n_steps
        settings.seed = cfg.seed
    only = [s for part in (args.only or []) for s in part.split(",") if s]
    try:
        report = run_battery(settings, only or None, echo=echo)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "verify.csv", ["check", "value", "threshold", "pass", "seconds"],
              ([c.name, c.value, c.threshold, c.passed, c.seconds] for c in report.checks))
    _write_json(out / "verify.json", report.as_dict())
    for c in report.checks:
        if c.name == "taylor":
            rows = ([d, e, r, c.detail["slopes"][d]] for d, rem in enumerate(c.detail["remainders"])
                    for e, r in zip(c.detail["eps"], rem))
            write_csv(out / "taylor.csv", ["direction", "epsilon", "remainder", "slope"], rows)
        elif c.name == "duality":
            write_csv(out / "duality.csv", ["measure", "value"], sorted(c.detail.items()))
    return EXIT_OK if report.passed else EXIT_VERIFY


# -- argument handling -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chb6", description="Sparse optimal control of Brinkman/sixth-order Cahn-Hilliard flow.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "optimize", "verify", "sweep-kappa"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "verify", help="JSON run configuration")
        p.add_argument("--out", help="output directory (default $CHB6_OUT/<command> or runs/<command>)")
        p.add_argument("--seed", type=int, help="override options.seed")
        p.add_argument("--threads", type=int, default=None, help="FFT worker count (1 gives reproducible output)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            p.add_argument("--only", action="append", help="run only the named check(s); repeatable or comma separated")
            p.add_argument("--mutate", action="store_true", help="use the sign-flipped transpose fixture (must fail)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    import scipy.fft

    workers = args.threads if args.threads is not None else 1
    out = Path(args.out) if args.out else _out_root(args) / args.command
    try:
        with scipy.fft.set_workers(workers):
            if args.command == "verify":
                return run_verify(args, out)
            overrides = {"seed": args.seed}
            cfg = RunConfig.load(args.config, overrides)
            base_dir = Path(args.config).resolve().parent
            if args.command == "simulate":
                run_simulate(cfg, out, base_dir)
            elif args.command == "optimize":
                run_optimize(cfg, out, base_dir)
            else:
                run_sweep(cfg, out, base_dir)
            print(out)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ctl.LineSearchError as exc:
        print(f"optimizer failure: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
