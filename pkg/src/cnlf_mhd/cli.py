"""Command line runner: config parsing, experiments and output files.

Config files hold one ``section.key = value`` per line; ``#`` starts a
comment.  Example::

    experiment.kind = convergence
    physics.nu = 0.001
    physics.sigma = 1000
    mesh.resolutions = 8, 16, 24, 32
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .problems import convergence_study, hartmann_problem, manufactured_problem, Problem
from .sparse_linalg import SolverError
from .spaces import DofMap, evaluate_at_points
from .stepper import CNLFSolver, SchemeConfig

log = logging.getLogger(__name__)

THREADS_ENV = "CNLF_MHD_THREADS"
KINDS = ("convergence", "hartmann", "single")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    kind: str = "single"
    nu: float = 1.0
    mu: float = 1.0
    sigma: float = 1.0
    G: float = 1.0
    T: float = 1.0
    dt: float | None = None          # fixed step; otherwise dt = dt_over_h * h
    dt_over_h: float = 0.1
    n: int = 8
    resolutions: tuple = (8, 16, 24, 32)
    magnetic_space: str = "mini"
    solver: str = "reuse"
    tolerance: float = 1e-10
    max_iterations: int = 500
    steady_tol: float = 1e-6
    stop_rule: str = "velocity+magnetic"
    problem: str = "manufactured"    # for single runs: manufactured or zero
    out: str = "out"
    vtk: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment.kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("nu", "mu", "sigma", "T", "dt_over_h", "tolerance", "steady_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n < 1 or any(r < 1 for r in self.resolutions):
            raise ConfigError("mesh resolutions must be positive integers")
        if self.magnetic_space not in ("mini", "p1"):
            raise ConfigError(f"space.magnetic must be mini or p1, got {self.magnetic_space!r}")
        if self.problem not in ("manufactured", "zero"):
            raise ConfigError(f"run.problem must be manufactured or zero, got {self.problem!r}")

    def step(self, n: int) -> float:
        return self.dt if self.dt is not None else self.dt_over_h / n

    def scheme(self, n: int | None = None, T: float | None = None) -> SchemeConfig:
        n = self.n if n is None else n
        dt = self.step(n)
        T = self.T if T is None else T
        # snap T to a whole number of steps
        T = max(1, round(T / dt)) * dt
        return SchemeConfig(
            nu=self.nu, mu=self.mu, sigma=self.sigma, dt=dt, T=T, n=n, dt_over_h=self.dt_over_h,
            magnetic_space=self.magnetic_space, solver=self.solver, tolerance=self.tolerance,
            max_iterations=self.max_iterations, stop_rule=self.stop_rule,
            steady_tol=self.steady_tol if self.kind == "hartmann" else None,
        )


# key in file -> (field, converter)
def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


KEYS = {
    "experiment.kind": ("kind", str),
    "physics.nu": ("nu", float),
    "physics.mu": ("mu", float),
    "physics.sigma": ("sigma", float),
    "physics.G": ("G", float),
    "time.T": ("T", float),
    "time.dt": ("dt", float),
    "time.dt_over_h": ("dt_over_h", float),
    "mesh.n": ("n", int),
    "mesh.resolutions": ("resolutions", _ints),
    "space.magnetic": ("magnetic_space", str),
    "solver.method": ("solver", str),
    "solver.tolerance": ("tolerance", float),
    "solver.max_iterations": ("max_iterations", int),
    "steady.tol": ("steady_tol", float),
    "steady.rule": ("stop_rule", str),
    "run.problem": ("problem", str),
    "run.seed": ("seed", int),
    "output.dir": ("out", str),
    "output.vtk": ("vtk", _bool),
}

PRESETS = {
    "table1": {"kind": "convergence", "nu": 1.0, "mu": 1.0, "sigma": 1.0},
    "table2": {"kind": "convergence", "nu": 0.01, "mu": 1.0, "sigma": 100.0},
    "table3": {"kind": "convergence", "nu": 0.001, "mu": 1.0, "sigma": 1000.0},
    "table4": {"kind": "convergence", "nu": 0.002, "mu": 1.0, "sigma": 2000.0},
    "hartmann-ha1": {"kind": "hartmann", "nu": 1.0, "mu": 1.0, "sigma": 1.0, "n": 24,
                     "dt_over_h": 1.0 / 9.0, "T": 400.0},
    "hartmann-ha10": {"kind": "hartmann", "nu": 0.1, "mu": 1.0, "sigma": 10.0, "n": 24,
                      "dt_over_h": 1.0 / 9.0, "T": 400.0},
}


def parse_config(text: str, preset: str | None = None) -> RunConfig:
    """Parse config text on top of the defaults (and ``preset``, if given)."""
    values = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name, conv = KEYS[key]
        try:
            values[name] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    assert set(values) <= known
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# Output

def write_vtk(mesh: Mesh, fields_: dict, path) -> None:
    """Legacy ASCII unstructured grid with vertex data.

    ``fields_`` maps names to (dofmap, coefficients) pairs or to plain arrays
    of vertex values, shape (V,) or (components, V).
    """
    V, T = mesh.num_vertices, mesh.num_triangles
    lines = ["# vtk DataFile Version 3.0", "cnlf_mhd fields", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {V} double"]
    lines += [f"{x:.16g} {y:.16g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {T} {4 * T}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {T}")
    lines += ["5"] * T
    if fields_:
        lines.append(f"POINT_DATA {V}")
    for name, data in fields_.items():
        if isinstance(data, tuple) and isinstance(data[0], DofMap):
            dm, coeffs = data
            if len(coeffs) != dm.num_global:
                raise ValueError(f"field {name!r} has {len(coeffs)} coefficients, expected {dm.num_global}")
            vals = dm.vertex_values(coeffs)
        else:
            vals = np.atleast_2d(np.asarray(data, dtype=float))
        if vals.shape[-1] != V:
            raise ValueError(f"field {name!r} does not have one value per vertex")
        if vals.shape[0] == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.16g}" for v in vals[0]]
        else:
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.16g} {b:.16g} 0" for a, b in vals[:2].T]
    Path(path).write_text("\n".join(lines) + "\n")


def _final_fields_vtk(solver: CNLFSolver, state, path):
    ctx = solver.ctx
    data = {"velocity": (ctx.velocity, state.u)}
    if state.p is not None:
        data["pressure"] = (ctx.pressure, state.p)
    if solver.coupled:
        data["magnetic"] = (ctx.magnetic, state.H)
    write_vtk(solver.mesh, data, path)


# ---------------------------------------------------------------------------
# Experiments

def zero_problem() -> Problem:
    from .problems import BoundaryRecipe, _zeros2
    from .mesh import UNIT_SQUARE
    return Problem("zero", UNIT_SQUARE, BoundaryRecipe(), u0=_zeros2, H0=_zeros2)


def hartmann_slice(solver: CNLFSolver, state, x: float = 5.0):
    """Centreline values ``y_k = -1 + 0.1 k`` of u1 and H1, numerical and exact."""
    y = -1.0 + 0.1 * np.arange(21)
    pts = np.column_stack([np.full_like(y, x), y])
    ctx, exact = solver.ctx, solver.problem.exact
    u1 = evaluate_at_points(solver.mesh, ctx.velocity, state.u, pts)[0]
    h1 = evaluate_at_points(solver.mesh, ctx.magnetic, state.H, pts)[0]
    return y, u1, exact.velocity(pts[:, 0], y)[0], h1, exact.magnetic(pts[:, 0], y)[0]


def slice_errors(y, u1, u1_exact, h1, h1_exact):
    """Max slice errors relative to the max exact magnitudes."""
    return (float(np.max(np.abs(u1 - u1_exact)) / np.max(np.abs(u1_exact))),
            float(np.max(np.abs(h1 - h1_exact)) / np.max(np.abs(h1_exact))))


def run_experiment(config: RunConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if config.kind == "convergence":
            scheme = config.scheme(config.resolutions[0])
            if config.dt is not None:
                log.warning("time.dt is ignored by convergence studies; dt = dt_over_h * h")
            table = convergence_study(scheme, config.resolutions,
                                      manufactured_problem(config.nu, config.mu, config.sigma))
            table.write_csv(out / "convergence.csv")
            if not table.complete:
                log.error("study stopped early: %s", table.failure)
                return 2
            return 0

        if config.kind == "hartmann":
            problem = hartmann_problem(config.nu, config.mu, config.sigma, config.G)
            solver = CNLFSolver(problem, config.scheme())
            result = solver.run()
            cols = hartmann_slice(solver, result.state)
            with open(out / "hartmann_slice.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["y", "u1_h", "u1", "H1_h", "H1"])
                for row in zip(*cols):
                    w.writerow([f"{v:.12e}" for v in row])
            eu, eh = slice_errors(*cols)
            (out / "hartmann_summary.txt").write_text(
                f"steps {result.steps}\nt {result.state.t:.12g}\nsteady {result.steady}\n"
                f"u1_rel_error {eu:.6e}\nH1_rel_error {eh:.6e}\n")
            result.log.write_csv(out / "energy_log.csv")
            if config.vtk:
                _final_fields_vtk(solver, result.state, out / "fields.vtk")
            if not result.steady:
                log.error("no steady state within T=%g", config.T)
                return 3
            return 0

        problem = (manufactured_problem(config.nu, config.mu, config.sigma) if config.problem == "manufactured"
                   else zero_problem())
        solver = CNLFSolver(problem, config.scheme())
        result = solver.run()
        result.log.write_csv(out / "energy_log.csv")
        if config.vtk:
            _final_fields_vtk(solver, result.state, out / "fields.vtk")
        if result.errors is not None:
            (out / "errors.txt").write_text(
                "".join(f"{k} {v:.12e}\n" for k, v in zip(("u_l2", "u_h1", "p_l2", "H_l2", "H_h1"),
                                                          result.errors.as_tuple())))
        return 0
    except (SolverError, FloatingPointError) as exc:
        log.error("run failed: %s", exc)
        return 2


# ---------------------------------------------------------------------------
# Entry point

def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(value))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cnlf-mhd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a config file")
    run_p.add_argument("--config", required=True, help="config file, '-' for stdin")
    run_p.add_argument("--preset", choices=sorted(PRESETS))
    run_p.add_argument("--out", help="output directory (overrides output.dir)")
    ver_p = sub.add_parser("verify", help="run an acceptance suite")
    ver_p.add_argument("--suite", required=True, choices=("properties", "tables"))
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        if args.command == "run":
            text = sys.stdin.read() if args.config == "-" else Path(args.config).read_text()
            try:
                config = parse_config(text, args.preset)
            except ConfigError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return 1
            if args.out:
                config = replace(config, out=args.out)
            return run_experiment(config)
        from .acceptance import run_suite
        results = run_suite(args.suite, echo=True)
        return 0 if all(r.passed for r in results) else 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
