"""Command-line front end: ``python -m kenergy <command> [options]``.

Each command writes ``<command>.json`` (the report) and, where there is a
series, ``<command>.csv`` into ``--out``; without ``--out`` the JSON report
goes to stdout.  Exit codes: 0 ok, 1 invariant violation or computation
error, 2 usage error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from kenergy import io
from kenergy.convex_core import (
    DEFAULT_N_1D,
    GridConvexFn,
    PwaConvexFn,
    counterexample_direction,
    legendre,
    phi0,
    sample_on,
    second_derivative_decompose,
    u0,
)
from kenergy.energy import entropy_dual, linear_part, mabuchi, slope_estimate
from kenergy.errors import ConfigError, KEnergyError
from kenergy.geodesic import counterexample_phi, geodesic_between, is_torus_orbit, ray
from kenergy.polytope import as_polytope
from kenergy.stability import (
    align_mod_affine,
    certify_unique,
    minimize_F,
    stability_margin,
)

COMMANDS = ("transform", "geodesic", "counterexample", "energy", "slope", "stability", "minimize", "certify")
CURVE_POINTS = 257
SMALL_GRID = 1024
# M(0) = -3/2 to 1e-4 needs the finer grid: the end cells cost O(h log 1/h)
COUNTEREXAMPLE_GRID = 2**16


@dataclass
class RunConfig:
    command: str
    grid: int = DEFAULT_N_1D
    window: Optional[tuple] = None
    convention: str = "donaldson"
    seed: int = 0
    out: Optional[Path] = None
    tmax: float = 1.0
    steps: int = 11
    t_list: tuple = (10.0, 100.0, 1000.0)
    polytope: str = "unit-interval"
    function: str = "u0"
    input: Optional[Path] = None
    pair: str = "minimizer"
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.grid < 8:
            raise ConfigError("--grid must be at least 8")
        if self.window is not None and not self.window[0] < self.window[1]:
            raise ConfigError("--window needs lo < hi")
        if self.tmax <= 0 or self.steps < 2:
            raise ConfigError("--tmax must be positive and --steps at least 2")
        if any(t <= 0 for t in self.t_list):
            raise ConfigError("--t-list entries must be positive")
        if self.threads < 1:
            raise ConfigError("KENERGY_THREADS must be a positive integer")


# ---------------------------------------------------------------------------
# inputs

NAMED_FUNCTIONS = {
    "u0": u0,
    "quadratic": lambda y: 0.5 * y * y,
    "u0+quadratic": lambda y: u0(y) + 0.15 * y * y,
}


def _load_u(cfg: RunConfig) -> GridConvexFn:
    if cfg.input is not None:
        f = io.read_function(cfg.input)
        if isinstance(f, PwaConvexFn):
            P = as_polytope(cfg.polytope)
            return f.sample(P.bounds[0] if P.dim == 1 else P.bounds, cfg.grid)
        return f
    if cfg.function not in NAMED_FUNCTIONS:
        raise ConfigError(f"unknown --function {cfg.function!r}; choose from {sorted(NAMED_FUNCTIONS)}")
    P = as_polytope(cfg.polytope)
    if P.dim != 1:
        raise ConfigError("named functions live on an interval; pass --input for 2-D data")
    return GridConvexFn.from_function(NAMED_FUNCTIONS[cfg.function], P.bounds[0], cfg.grid)


def _curve_rows(f: GridConvexFn, n: int = CURVE_POINTS):
    idx = np.unique(np.linspace(0, f.values.size - 1, n).round().astype(int))
    return f.nodes[idx], f.values[idx]


# ---------------------------------------------------------------------------
# commands: each returns (report, csv columns, csv rows, ok)

def cmd_transform(cfg: RunConfig):
    u = _load_u(cfg)
    phi = legendre(u, n_out=cfg.grid, domain_out=cfg.window)
    xs, vals = _curve_rows(phi)
    report = {"input_domain": u.domain, "output_domain": phi.domain, "grid_size": cfg.grid,
              "tail_slopes": phi.tail_slopes}
    if cfg.input is None and cfg.function == "u0":
        inner = (xs > -10) & (xs < 10)
        report["max_error_vs_phi0"] = float(np.max(np.abs(vals[inner] - phi0(xs[inner]))))
    return report, ("x", "phi"), zip(xs, vals), True


def cmd_geodesic(cfg: RunConfig):
    u = _load_u(cfg)
    v = sample_on(counterexample_direction(), u)
    ts = np.linspace(0.0, cfg.tmax, cfg.steps)
    rows, worst = [], 0.0
    for t in ts:
        phi = legendre(u.replace_values(u.values + t * v.values), n_out=cfg.grid, domain_out=cfg.window)
        xs, vals = _curve_rows(phi)
        rows.extend((t, x, p) for x, p in zip(xs, vals))
        if cfg.input is None and cfg.function == "u0":
            worst = max(worst, float(np.max(np.abs(vals - counterexample_phi(t, xs)))))
    report = {"t": ts, "points_per_curve": CURVE_POINTS, "direction": "max(0, y - 1/2)"}
    if cfg.input is None and cfg.function == "u0":
        report["max_error_vs_closed_form"] = worst
    return report, ("t", "x", "phi"), rows, True


def cmd_counterexample(cfg: RunConfig):
    P = as_polytope("unit-interval")
    u = GridConvexFn.from_function(u0, P.bounds[0], cfg.grid)
    kink = counterexample_direction()
    v = sample_on(kink, u)
    ts = np.linspace(0.0, cfg.tmax, cfg.steps)
    rows, M = [], []
    for t in ts:
        ut = u.replace_values(u.values + t * v.values)
        lin, ent = linear_part(ut, P, cfg.convention), entropy_dual(ut, P)
        atoms = second_derivative_decompose(ut).atoms
        loc, mass = (atoms[0] if atoms else (float("nan"), 0.0))
        M.append(lin + ent)
        rows.append((t, lin + ent, lin, ent, loc, mass))
    M = np.array(M)
    dt = ts[1] - ts[0]
    second = float(np.max(np.abs(np.diff(M, 2)))) if M.size > 2 else 0.0
    slope = float((M[-1] - M[0]) / (ts[-1] - ts[0]))
    orbit = is_torus_orbit(geodesic_between(u, u.replace_values(u.values + v.values)))
    L_v = linear_part(kink, P, cfg.convention)
    ok = second <= 1e-6 and abs(slope - L_v) <= 1e-4 and not orbit
    report = {"max_second_difference": second, "dt": dt, "slope": slope, "L_of_direction": L_v,
              "orbit": orbit, "entropy_spread": float(np.ptp([r[3] for r in rows])), "ok": ok}
    return report, ("t", "M", "linear_part", "entropy", "atom_location", "atom_mass"), rows, ok


def cmd_energy(cfg: RunConfig):
    u = _load_u(cfg)
    rep = mabuchi(u, cfg.polytope, cfg.convention)
    return rep.to_record(), None, None, True


def cmd_slope(cfg: RunConfig):
    P = as_polytope("unit-interval")
    u = GridConvexFn.from_function(u0, P.bounds[0], cfg.grid)
    direction = cfg.extra.get("ray", "quadratic")
    if direction == "quadratic":
        v = GridConvexFn.from_function(lambda y: 0.5 * y * y, P.bounds[0], cfg.grid)
    elif direction == "kink":
        v = sample_on(counterexample_direction(), u)
    else:
        raise ConfigError(f"unknown --ray {direction!r}")
    res = slope_estimate(ray(u, v), P, cfg.convention, cfg.t_list)
    report = {"limit_prediction": res.limit_prediction, "sandwich_ok": res.sandwich_ok, "ray": direction}
    rows = zip(res.times, res.estimates, res.energies, res.corrections, res.correction_bounds)
    return report, ("t", "M_over_t", "M", "correction", "correction_bound"), rows, res.sandwich_ok


def cmd_stability(cfg: RunConfig):
    P = as_polytope(cfg.polytope)
    rep = stability_margin(P, cfg.convention, seed=cfg.seed, workers=cfg.threads)
    report = rep.to_record()
    rows = [(i, lin, nrm, r) for i, (lin, nrm, r) in enumerate(zip(rep.linear_parts, rep.norms, rep.ratios))]
    return report, ("index", "L", "relative_norm", "ratio"), rows, rep.delta_estimate > 0


def cmd_minimize(cfg: RunConfig):
    res = minimize_F("unit-interval", cfg.convention, cfg.grid, full_output=True)
    scale = 1.0 if cfg.convention == "donaldson" else 2.0
    _, err = align_mod_affine(res.u, lambda y: scale * u0(y))
    report = {"iterations": res.iterations, "grad_norm": res.grad_norm, "final_objective": res.objective_history[-1],
              "reference": f"{scale:g} * u0", "aligned_error_on_[0.05,0.95]": err,
              "monotone": bool(np.all(np.diff(res.objective_history) <= 1e-12 * abs(res.objective_history[0])))}
    ys, vals = _curve_rows(res.u)
    return report, ("y", "u"), zip(ys, vals), report["monotone"] and res.u.is_convex()


def cmd_certify(cfg: RunConfig):
    P = as_polytope("unit-interval")
    # the continuum minimiser: u0 under donaldson, 2 u0 under paper-lemma
    scale = 1.0 if cfg.convention == "donaldson" else 2.0
    u = GridConvexFn.from_function(lambda y: scale * u0(y), P.bounds[0], cfg.grid)
    if cfg.pair == "affine":
        other = u.replace_values(u.values + 0.3 * u.nodes - 1.0)
    elif cfg.pair == "kink":
        other = u.replace_values(u.values + sample_on(counterexample_direction(), u).values)
    elif cfg.pair == "minimizer":
        other = minimize_F(P, cfg.convention, cfg.grid)
    else:
        raise ConfigError(f"unknown --pair {cfg.pair!r}")
    cert = certify_unique(u, other, P, cfg.convention)
    report = cert.to_record()
    report["pair"] = cfg.pair
    report["passed"] = cert.passed
    rows = [(s, ok, r) for s, ok, r in cert.stages]
    return report, ("stage", "passed", "residual"), rows, True


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# ---------------------------------------------------------------------------
# argument handling

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kenergy", description="Toric K-energy computations.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=int, default=None,
                        help=f"grid size N (default {DEFAULT_N_1D}; {SMALL_GRID} for minimize and certify, "
                             f"{COUNTEREXAMPLE_GRID} for counterexample)")
    common.add_argument("--window", type=float, nargs=2, default=None, metavar=("LO", "HI"),
                        help="dual window for transforms (default: slope range of the input)")
    common.add_argument("--convention", choices=("donaldson", "paper-lemma"), default="donaldson")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--polytope", default="unit-interval")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("transform", "geodesic", "energy"):
            sp.add_argument("--function", default="u0", help=f"one of {sorted(NAMED_FUNCTIONS)}")
            sp.add_argument("--input", type=Path, default=None, help="JSON function record")
        if name in ("geodesic", "counterexample"):
            sp.add_argument("--tmax", type=float, default=1.0)
            sp.add_argument("--steps", type=int, default=11)
        if name == "slope":
            sp.add_argument("--t-list", type=float, nargs="+", default=[10.0, 100.0, 1000.0])
            sp.add_argument("--ray", choices=("quadratic", "kink"), default="quadratic")
        if name == "certify":
            sp.add_argument("--pair", choices=("affine", "kink", "minimizer"), default="minimizer")
    return p


def _threads() -> int:
    raw = os.environ.get("KENERGY_THREADS", "1")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"KENERGY_THREADS={raw!r} is not an integer") from None


def _default_grid(command: str) -> int:
    if command in ("minimize", "certify"):
        return SMALL_GRID
    if command == "counterexample":
        return COUNTEREXAMPLE_GRID
    return DEFAULT_N_1D


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(
        command=ns.command,
        grid=ns.grid or _default_grid(ns.command), window=tuple(ns.window) if ns.window else None, convention=ns.convention,
        seed=ns.seed, out=ns.out, polytope=ns.polytope, threads=_threads(),
    )
    for name in ("tmax", "steps", "function", "input", "pair"):
        if hasattr(ns, name):
            setattr(cfg, name, getattr(ns, name))
    if hasattr(ns, "t_list"):
        cfg.t_list = tuple(ns.t_list)
    if hasattr(ns, "ray"):
        cfg.extra["ray"] = ns.ray
    return cfg


def run(cfg: RunConfig) -> int:
    cfg.validate()
    try:
        report, cols, rows, ok = HANDLERS[cfg.command](cfg)
    except ConfigError:
        raise
    except KEnergyError as exc:
        report = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("stage", "grad_norm", "diagnostics"):
            if hasattr(exc, attr):
                report[attr] = getattr(exc, attr)
        cols, rows, ok = None, None, False
    report = {"command": cfg.command, "convention": cfg.convention, "grid": cfg.grid,
              "seed": cfg.seed, "ok": bool(ok), "result": report}
    if cfg.out is None:
        sys.stdout.write(io.dumps(report))
    else:
        cfg.out.mkdir(parents=True, exist_ok=True)
        io.write_json(cfg.out / f"{cfg.command}.json", report)
        if cols is not None:
            io.write_csv(cfg.out / f"{cfg.command}.csv", cols, rows, cfg.convention)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return run(config_from_args(ns))
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"kenergy: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
