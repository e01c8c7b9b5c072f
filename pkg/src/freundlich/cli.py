"""Batch runner: `freundlich <command> --config FILE --out DIR [--seed N]`.

The config is flat `key = value` text, one assignment per line, `#` starts
a comment. Field-valued keys (control, target, direction) accept a number
(constant field), a manufactured name (`sine`, `plateau`; `random` for
directions) or a path to a field dump.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .adjoint_optimizer import (
    ControlProblem,
    bouligand_gap,
    kkt_residual,
    projected_gradient_solve,
    reduced_gradient,
)
from .grid import h01_norm, hminus1_norm, make_grid, read_field, write_field
from .linsolve import ConvergenceError
from .sensitivity import (
    apply_S_prime,
    build_sensitivity,
    dead_zone_decay_study,
    frechet_remainder_study,
)
from .state_solver import METHODS, StateProblem, dead_zone, manufactured_instance, solve_state
from .verify import run_suite

EXIT_CONFIG, EXIT_IO, EXIT_CONVERGENCE, EXIT_VERIFY = 2, 3, 4, 5

DEFAULTS = {
    "dim": 1,
    "n": 64,
    "alpha": 0.5,
    "nu": 1e-2,
    "tol": 1e-10,
    "max_iter": 200_000,
    "seed": 0,
    "method": "accel_prox",
    "control": "0",
    "direction": "1",
    "target": "sine",
    "u_a": "-inf",
    "u_b": "inf",
    "taus": "1e-1,1e-2,1e-3,1e-4",
    "ns": "64,128,256",
    "instance": "sine",
    "eps_dead": "default",
}


class ConfigError(ValueError):
    pass


def parse_config(text):
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in cfg:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        cfg[key] = value
    return cfg


def _typed(raw):
    """Merge with defaults and convert scalar entries; field sources stay strings."""
    merged = {k: str(v) for k, v in DEFAULTS.items()}
    merged.update(raw)
    cfg = dict(merged)
    try:
        for key in ("dim", "n", "max_iter", "seed"):
            cfg[key] = int(merged[key])
        for key in ("alpha", "nu", "tol"):
            cfg[key] = float(merged[key])
        cfg["taus"] = [float(t) for t in merged["taus"].split(",")]
        cfg["ns"] = [int(t) for t in merged["ns"].split(",")]
        cfg["eps_dead"] = None if merged["eps_dead"] == "default" else float(merged["eps_dead"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["dim"] not in (1, 2) or cfg["n"] < 2:
        raise ConfigError("need dim in {1, 2} and n >= 2")
    if not 0 < cfg["alpha"] < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg["nu"] <= 0 or cfg["tol"] <= 0 or cfg["max_iter"] < 1:
        raise ConfigError("nu, tol and max_iter must be positive")
    if cfg["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    if any(t <= 0 for t in cfg["taus"]) or any(a <= b for a, b in zip(cfg["taus"], cfg["taus"][1:])):
        raise ConfigError("taus must be positive and strictly decreasing")
    if cfg["eps_dead"] is not None and cfg["eps_dead"] < 0:
        raise ConfigError("eps_dead must be nonnegative")
    return cfg


def _field(spec, grid, cfg, rng, kind):
    try:
        value = float(spec)
    except ValueError:
        pass
    else:
        if math.isnan(value):
            raise ConfigError(f"{kind}: NaN is not a field value")
        return np.full(grid.m, value)
    if spec == "sine":
        if kind == "control" and grid.dim == 1:
            return manufactured_instance("sine", grid, cfg["alpha"])[0]
        if grid.dim == 1:
            return grid.nodal(lambda x: np.sin(np.pi * x))
        return grid.nodal(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    if spec == "plateau":
        if grid.dim != 1:
            raise ConfigError("the plateau instance is one-dimensional")
        return manufactured_instance("plateau", grid, cfg["alpha"])[0]
    if spec == "random":
        return rng.standard_normal(grid.m)
    try:
        fgrid, values = read_field(spec)
    except OSError as exc:
        raise OSError(f"{kind}: cannot read field file {spec!r}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{kind}: {exc}") from None
    if fgrid != grid:
        raise ConfigError(f"{kind}: field file lives on dim={fgrid.dim}, n={fgrid.n}")
    return values


def _fmt(v):
    if isinstance(v, bool):
        return "pass" if v else "fail"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Run:
    def __init__(self, command, cfg, out):
        self.command = command
        self.cfg = cfg
        self.out = Path(out)
        self.grid = make_grid(cfg["dim"], cfg["n"])
        self.rng = np.random.default_rng(cfg["seed"])
        self.lines = [("command", command), ("dim", cfg["dim"]), ("n", cfg["n"]), ("alpha", cfg["alpha"]), ("seed", cfg["seed"])]

    def report(self, key, value):
        self.lines.append((key, value))

    def dump(self, name, values):
        write_field(self.out / name, self.grid, values)

    def finish(self):
        text = "".join(f"{k}: {_fmt(v)}\n" for k, v in self.lines)
        (self.out / "report.txt").write_text(text, encoding="utf-8")
        sys.stdout.write(text)


def cmd_solve(run):
    cfg, g = run.cfg, run.grid
    u = _field(cfg["control"], g, cfg, run.rng, "control")
    prob = StateProblem(g, cfg["alpha"], u)
    y, rep = solve_state(prob, cfg["method"], cfg["tol"], cfg["max_iter"])
    mask, frac = dead_zone(g, y, cfg["eps_dead"])
    run.report("method", rep.method)
    run.report("iterations", rep.iterations)
    run.report("pde_residual", rep.residual)
    run.report("energy", rep.energy)
    run.report("dead_zone_fraction", frac)
    run.report("state_h01_norm", h01_norm(g, y))
    run.report("state_max_abs", float(np.max(np.abs(y))))
    run.dump("state.csv", y)
    return 0


def cmd_differentiate(run):
    cfg, g = run.cfg, run.grid
    u = _field(cfg["control"], g, cfg, run.rng, "control")
    h = _field(cfg["direction"], g, cfg, run.rng, "direction")
    y, rep = solve_state(StateProblem(g, cfg["alpha"], u), cfg["method"], min(cfg["tol"], 1e-12), cfg["max_iter"], polish=True)
    sys_ = build_sensitivity(g, y, cfg["alpha"], cfg["eps_dead"])
    d = apply_S_prime(sys_, h)
    run.report("pde_residual", rep.residual)
    run.report("dead_zone_fraction", dead_zone(g, y, cfg["eps_dead"])[1])
    run.report("derivative_h01_norm", h01_norm(g, d))
    run.report("direction_hminus1_norm", hminus1_norm(g, h))
    run.report("derivative_bounded_by_data", bool(h01_norm(g, d) <= hminus1_norm(g, h) * (1 + 1e-10)))
    run.report("derivative_vanishes_on_dead_zone", bool(np.all(d[sys_.mask] == 0.0)))
    run.dump("state.csv", y)
    run.dump("derivative.csv", d)
    return 0


def cmd_optimize(run):
    cfg, g = run.cfg, run.grid
    y_d = _field(cfg["target"], g, cfg, run.rng, "target")
    u_a = _field(cfg["u_a"], g, cfg, run.rng, "u_a")
    u_b = _field(cfg["u_b"], g, cfg, run.rng, "u_b")
    try:
        cp = ControlProblem(g, cfg["alpha"], y_d, cfg["nu"], u_a, u_b, cfg["eps_dead"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    u0 = _field(cfg["control"], g, cfg, run.rng, "control")
    u, hist = projected_gradient_solve(cp, u0, tol=cfg["tol"], max_iter=min(cfg["max_iter"], 10_000))
    res, comps = kkt_residual(cp, u)
    run.report("iterations", hist.iterations)
    run.report("converged", "yes" if hist.converged else "no")
    run.report("objective", hist.objective[-1])
    run.report("kkt_residual", res)
    run.report("state_residual", comps["state"])
    run.report("adjoint_residual", comps["adjoint"])
    run.report("projection_residual", comps["projection"])
    run.report("bouligand_gap", bouligand_gap(cp, u, 200, cfg["seed"]))
    run.report("objective_nonincreasing", bool(np.all(np.diff(hist.objective) <= 0)))
    _, p, y = reduced_gradient(cp, u)
    run.dump("control.csv", u)
    run.dump("state.csv", y)
    run.dump("adjoint.csv", p)
    with open(run.out / "history.csv", "w", encoding="utf-8") as fh:
        hist.to_csv(fh)
    if not hist.converged:
        run.report("error", hist.message)
        return EXIT_CONVERGENCE
    return 0


def cmd_verify(run):
    cfg = run.cfg
    results = run_suite(cfg["dim"], cfg["n"], cfg["alpha"], cfg["seed"])
    for name, ok, detail in results:
        run.report(name, ok)
    with open(run.out / "verify_details.txt", "w", encoding="utf-8") as fh:
        for name, ok, detail in results:
            fh.write(f"{name}: {'pass' if ok else 'fail'} ({detail})\n")
    failed = sum(not ok for _, ok, _ in results)
    run.report("failed", failed)
    return EXIT_VERIFY if failed else 0


def _write_table(run, table):
    with open(run.out / "table.csv", "w", encoding="utf-8") as fh:
        table.to_csv(fh)


def cmd_study(run, kind):
    cfg, g = run.cfg, run.grid
    run.report("study", kind)
    if kind == "convergence":
        return _study_convergence(run)
    if cfg["instance"] == "plateau" and "control" not in cfg.get("_given", ()):
        u = _field("plateau", g, cfg, run.rng, "control")
    else:
        u = _field(cfg["control"], g, cfg, run.rng, "control")
    h = _field(cfg["direction"], g, cfg, run.rng, "direction")
    prob = StateProblem(g, cfg["alpha"], u)
    if kind == "frechet":
        table = frechet_remainder_study(prob, h, cfg["taus"], cfg["eps_dead"])
        vals = table.values
        run.report("strictly_decreasing", bool(np.all(np.diff(vals) < 0)))
        run.report("remainder_ratio", float(vals[-1] / vals[0]) if vals[0] > 0 else 0.0)
    else:
        zone = None
        if cfg["instance"] == "plateau" and g.dim == 1:
            zone = g.coords[:, 0] <= 0.5  # exact zero set of the manufactured state
        table = dead_zone_decay_study(prob, h, cfg["taus"], zone=zone)
        run.report("status", table.status)
        if table.rows:
            run.report("slope", table.meta["slope"])
            run.report("bound_slope", table.meta["bound_slope"])
    _write_table(run, table)
    return 0


def _study_convergence(run):
    cfg = run.cfg
    name = cfg["instance"]
    if name not in ("sine", "plateau"):
        raise ConfigError("convergence studies need instance = sine or plateau")
    hs, errs = [], []
    with open(run.out / "table.csv", "w", encoding="utf-8") as fh:
        fh.write("h,error\n")
        for n in cfg["ns"]:
            g = make_grid(1, n)
            u, y_exact = manufactured_instance(name, g, cfg["alpha"])
            y, _ = solve_state(StateProblem(g, cfg["alpha"], u), cfg["method"], cfg["tol"], cfg["max_iter"])
            err = float(np.max(np.abs(y - y_exact)))
            hs.append(g.h)
            errs.append(err)
            fh.write(f"{g.h!r},{err!r}\n")
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0]) if len(hs) > 1 else math.nan
    run.report("instance", name)
    run.report("fitted_order", order)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="freundlich", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "differentiate", "optimize", "verify"):
        sub.add_parser(name)
    st = sub.add_parser("study")
    st.add_argument("kind", choices=("frechet", "deadzone", "convergence"))
    for p in sub.choices.values():
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = {}
        if args.config:
            raw = parse_config(Path(args.config).read_text(encoding="utf-8"))
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        cfg = _typed(raw)
        cfg["_given"] = tuple(raw)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out)
        if args.command == "study":
            status = cmd_study(run, args.kind)
        else:
            status = {"solve": cmd_solve, "differentiate": cmd_differentiate, "optimize": cmd_optimize, "verify": cmd_verify}[
                args.command
            ](run)
        run.finish()
        return status
    except ValueError as exc:  # ConfigError and rejected inputs alike
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
