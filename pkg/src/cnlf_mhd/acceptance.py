"""Acceptance checks, one function per criterion, plus the finite-difference
oracles they rely on.

Each check returns a :class:`Criterion` with a pass flag, the measured
quantities and the wall time.  :func:`run_suite` groups them into the
``properties`` suite (fast) and the ``tables`` suite (refinement studies and
the Hartmann benchmark).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import forms
from .cli import hartmann_slice, slice_errors, zero_problem
from .forms import FormContext
from .mesh import build_rect_mesh
from .problems import (ALL_TAGS, BoundaryRecipe, HartmannProblem, ManufacturedSolution, Problem, _zeros2,
                       convergence_study, hartmann_problem, manufactured_problem)
from .spaces import BasisKind, build_dofmap
from .stepper import CNLFSolver, SchemeConfig

# Errors at 1/h = 8, 16, 24, 32 of the unit-parameter manufactured run:
# u L2, u H1, p L2, B L2, B H1.
REFERENCE_TABLE1 = {
    8: (0.00427603, 0.103026, 0.0256856, 0.00100479, 0.0295769),
    16: (0.00106969, 0.0515209, 0.0076434, 0.000239404, 0.0147887),
    24: (0.000475199, 0.0343395, 0.0037971, 0.000102137, 0.00985905),
    32: (0.000267202, 0.0257507, 0.00232872, 5.56424e-05, 0.00739424),
}
STIFF_REGIMES = {"table2": (0.01, 100.0), "table3": (0.001, 1000.0), "table4": (0.002, 2000.0)}
RESOLUTIONS = (8, 16, 24, 32)


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict, repr=False)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        crit = fn(*args, **kwargs)
        crit.seconds = time.perf_counter() - start
        return crit
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# Finite-difference oracles

FD_STEP = 1e-5
# Second differences lose digits as eps / h^2; a wider step keeps them well
# below the 1e-5 acceptance level.
FD_STEP2 = 1e-4


def _d(f, x, y, t, axis, h=FD_STEP):
    if axis == 0:
        return (f(x + h, y, t) - f(x - h, y, t)) / (2 * h)
    if axis == 1:
        return (f(x, y + h, t) - f(x, y - h, t)) / (2 * h)
    return (f(x, y, t + h) - f(x, y, t - h)) / (2 * h)


def _laplacian(f, x, y, t, h=FD_STEP2):
    c = f(x, y, t)
    return (f(x + h, y, t) + f(x - h, y, t) + f(x, y + h, t) + f(x, y - h, t) - 4 * c) / h**2


def mhd_residual(u, p, H, x, y, t, nu, mu, sigma, steady=False):
    """Strong-form residuals (f, g) of given fields ``u(x, y, t)`` etc.

    f = u_t - nu lap u + (u . grad) u + grad p + mu H x curl H
    g = mu H_t + curl curl H / sigma - mu curl(u x H)
    with the 2D conventions of :mod:`cnlf_mhd.forms`.
    """
    uv, hv = u(x, y, t), H(x, y, t)
    du_dx, du_dy = _d(u, x, y, t, 0), _d(u, x, y, t, 1)
    dh_dx, dh_dy = _d(H, x, y, t, 0), _d(H, x, y, t, 1)
    curl_h = dh_dx[1] - dh_dy[0]
    f = (-nu * _laplacian(u, x, y, t) + uv[0] * du_dx + uv[1] * du_dy
         + np.array([_d(p, x, y, t, 0), _d(p, x, y, t, 1)])
         + mu * np.array([hv[1] * curl_h, -hv[0] * curl_h]))

    def curl_of(fn):
        def c(x, y, t):
            d_dx, d_dy = _d(fn, x, y, t, 0), _d(fn, x, y, t, 1)
            return d_dx[1] - d_dy[0]
        return c

    def cross(x, y, t):
        a, b = u(x, y, t), H(x, y, t)
        return a[0] * b[1] - a[1] * b[0]

    # curl of a scalar s is (d_y s, -d_x s)
    cc = curl_of(H)
    cc_vec = np.array([_d(cc, x, y, t, 1, FD_STEP2), -_d(cc, x, y, t, 0, FD_STEP2)])
    cr_vec = np.array([_d(cross, x, y, t, 1), -_d(cross, x, y, t, 0)])
    g = cc_vec / sigma - mu * cr_vec
    if not steady:
        f = f + _d(u, x, y, t, 2)
        g = g + mu * _d(H, x, y, t, 2)
    return f, g


def _context(n, magnetic="mini", nu=1.0, mu=1.0, sigma=1.0):
    mesh = build_rect_mesh(n, n)
    vel = build_dofmap(mesh, "velocity", BasisKind.P1_BUBBLE, 2, ALL_TAGS)
    pre = build_dofmap(mesh, "pressure", BasisKind.P1, 1)
    mag = build_dofmap(mesh, "magnetic", BasisKind(magnetic), 2)
    return FormContext(mesh, vel, pre, mag, nu, mu, sigma)


# ---------------------------------------------------------------------------
# Criteria

@_timed
def check_skew_symmetry(samples=20, n=8, seed=0) -> Criterion:
    rng = np.random.default_rng(seed)
    ctx = _context(n)
    vel = ctx.velocity
    worst = 0.0
    for _ in range(samples):
        w = rng.standard_normal(vel.num_global)
        x = np.where(vel.dirichlet_mask, 0.0, rng.standard_normal(vel.num_global))
        N = forms.assemble_convection(ctx, w).matrix
        worst = max(worst, abs(x @ (N @ x)) / (np.linalg.norm(w) * np.linalg.norm(x) ** 2))
    return Criterion(1, "skew-symmetric convection", worst <= 1e-11,
                     f"max |x^T N(w) x| / (|w||x|^2) = {worst:.2e} (limit 1e-11)", data={"worst": worst})


@_timed
def check_lorentz_induction(samples=20, n=8, seed=1) -> Criterion:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for magnetic in ("mini", "p1"):
        ctx = _context(n, magnetic, mu=1.7)
        vel, mag = ctx.velocity, ctx.magnetic
        for _ in range(samples):
            H = rng.standard_normal(mag.num_global)
            x = np.where(vel.dirichlet_mask, 0.0, rng.standard_normal(vel.num_global))
            y = rng.standard_normal(mag.num_global)
            L = forms.assemble_lorentz(ctx, H).matrix
            C = forms.assemble_induction(ctx, H).matrix
            scale = np.linalg.norm(H) * np.linalg.norm(x) * np.linalg.norm(y)
            worst = max(worst, abs(x @ (L @ y) + y @ (C @ x)) / scale)
    return Criterion(2, "Lorentz/induction cancellation", worst <= 1e-11,
                     f"max |x^T L y + y^T C x| / scale = {worst:.2e} (limit 1e-11)", data={"worst": worst})


@_timed
def check_forcing_oracle(points=100, seed=2) -> Criterion:
    rng = np.random.default_rng(seed)
    worst_ms = 0.0
    for nu, mu, sigma in ((1.0, 1.0, 1.0), (0.01, 1.0, 100.0), (0.002, 1.3, 2000.0)):
        ms = ManufacturedSolution(nu, mu, sigma)
        x, y, t = rng.random(points), rng.random(points), rng.random(points)
        f_fd, g_fd = mhd_residual(ms.velocity, ms.pressure, ms.magnetic, x, y, t, nu, mu, sigma)
        worst_ms = max(worst_ms, np.max(np.abs(f_fd - ms.forcing_f(x, y, t))),
                       np.max(np.abs(g_fd - ms.forcing_g(x, y, t))))
    worst_h = 0.0
    for nu, mu, sigma, G in ((1.0, 1.0, 1.0, 1.0), (0.1, 1.0, 10.0, 1.0), (0.5, 2.0, 3.0, 0.7)):
        hp = HartmannProblem(nu, mu, sigma, G, p0=0.3)
        x, y = 10 * rng.random(points), -0.99 + 1.98 * rng.random(points)
        f, g = mhd_residual(lambda x, y, t: hp.velocity(x, y), lambda x, y, t: hp.pressure(x, y),
                            lambda x, y, t: hp.magnetic(x, y), x, y, 0.0, nu, mu, sigma, steady=True)
        worst_h = max(worst_h, np.max(np.abs(f)), np.max(np.abs(g)))
    ok = worst_ms <= 1e-5 and worst_h <= 1e-5
    return Criterion(3, "forcing and Hartmann oracles", ok,
                     f"manufactured max dev {worst_ms:.1e}, Hartmann residual {worst_h:.1e} (limit 1e-5)",
                     data={"manufactured": worst_ms, "hartmann": worst_h})


def _decreasing(errors):
    cols = np.array([e.as_tuple() for e in errors])
    return bool(np.all(np.diff(cols, axis=0) < 0))


def table1_study(resolutions=RESOLUTIONS):
    cfg = SchemeConfig(nu=1.0, mu=1.0, sigma=1.0, T=1.0, dt=0.1 / resolutions[0], dt_over_h=0.1)
    return convergence_study(cfg, resolutions, keep_results=True)


@_timed
def check_table1(study=None) -> Criterion:
    study = study or table1_study()
    if not study.complete:
        return Criterion(4, "unit-parameter convergence", False, f"study failed: {study.failure}")
    orders = np.array(study.orders)
    l2_ok = bool(np.all((orders[:, [0, 3]] >= 1.8) & (orders[:, [0, 3]] <= 2.3)))
    h1_ok = bool(np.all((orders[:, [1, 4]] >= 0.85) & (orders[:, [1, 4]] <= 1.15)))
    ratios = [np.array(e.as_tuple()) / np.array(REFERENCE_TABLE1[n])
              for n, e in zip(study.resolutions, study.errors) if n in REFERENCE_TABLE1]
    ratios = np.array(ratios)
    mag_ok = bool(np.all((ratios >= 0.5) & (ratios <= 2.0)))
    dec = _decreasing(study.errors)
    detail = (f"L2 orders u {orders[:, 0].min():.3f}..{orders[:, 0].max():.3f}, "
              f"B {orders[:, 3].min():.3f}..{orders[:, 3].max():.3f}; "
              f"H1 orders u {orders[:, 1].min():.3f}..{orders[:, 1].max():.3f}, "
              f"B {orders[:, 4].min():.3f}..{orders[:, 4].max():.3f}; "
              f"error ratio to reference {ratios.min():.2f}..{ratios.max():.2f}; decreasing {dec}")
    return Criterion(4, "unit-parameter convergence", l2_ok and h1_ok and mag_ok and dec, detail,
                     data={"orders": orders, "ratios": ratios})


@_timed
def check_stiff_regimes(resolutions=RESOLUTIONS) -> Criterion:
    parts, ok, data = [], True, {}
    for name, (nu, sigma) in STIFF_REGIMES.items():
        cfg = SchemeConfig(nu=nu, mu=1.0, sigma=sigma, T=1.0, dt=0.1 / resolutions[0], dt_over_h=0.1)
        study = convergence_study(cfg, resolutions, keep_results=True)
        if not study.complete:
            ok = False
            parts.append(f"{name} failed: {study.failure}")
            continue
        finite = all(np.all(np.isfinite(np.array(r.log.rows))) for r in study.results)
        dec = _decreasing(study.errors)
        last = study.orders[-1][0] if study.orders else float("nan")
        ok &= finite and dec and last >= 1.5
        data[name] = study
        parts.append(f"{name} finest u L2 order {last:.2f}, decreasing {dec}, finite {finite}")
    return Criterion(5, "stiff regimes", ok, "; ".join(parts), data=data)


@_timed
def check_hartmann(n=12, tolerance=0.03, budget=300.0, T=200.0) -> Criterion:
    dt = 1.0 / (9 * n)
    cfg = SchemeConfig(nu=1.0, mu=1.0, sigma=1.0, n=n, dt=dt, T=round(T / dt) * dt, steady_tol=1e-6)
    start = time.perf_counter()
    solver = CNLFSolver(hartmann_problem(1.0, 1.0, 1.0, 1.0), cfg)
    result = solver.run()
    wall = time.perf_counter() - start
    eu, eh = slice_errors(*hartmann_slice(solver, result.state))
    ok = result.steady and eu <= tolerance and eh <= tolerance and (budget is None or wall <= budget)
    limit = "" if budget is None else f", budget {budget:.0f}s"
    detail = (f"h=1/{n}: steady {result.steady} after {result.steps} steps (t={result.state.t:.1f}), "
              f"slice error u1 {100 * eu:.2f}%, H1 {100 * eh:.2f}% (limit {100 * tolerance:g}%), "
              f"wall {wall:.0f}s{limit}")
    return Criterion(6, "Hartmann channel", ok, detail, data={"u": eu, "H": eh, "wall": wall,
                                                              "steps": result.steps})


def _velocity_only_problem():
    """Manufactured velocity data with no magnetic field anywhere."""
    ms = ManufacturedSolution()
    recipe = BoundaryRecipe(velocity_values=ms.velocity, magnetic_values=None)
    return Problem("no-field", manufactured_problem().rect, recipe,
                   u0=lambda x, y: ms.velocity(x, y, 0.0), H0=_zeros2, f=ms.forcing_f, g=None)


@_timed
def check_null_preservation(steps=50, n=8) -> Criterion:
    cfg = SchemeConfig(n=n, dt=0.1 / n, T=steps * 0.1 / n)
    solver = CNLFSolver(zero_problem(), cfg)
    worst_zero = 0.0

    def watch(state, info):
        nonlocal worst_zero
        worst_zero = max(worst_zero, np.max(np.abs(state.u)), np.max(np.abs(state.H)), np.max(np.abs(state.p)))

    solver.run(watch)

    problem = _velocity_only_problem()
    coupled_u, h_max = [], [0.0]

    def keep(state, info):
        coupled_u.append(state.u.copy())
        h_max[0] = max(h_max[0], np.max(np.abs(state.H)))

    CNLFSolver(problem, cfg).run(keep)
    plain_u = []
    CNLFSolver(problem, replace(cfg, coupled=False)).run(lambda s, i: plain_u.append(s.u.copy()))
    diff = max(np.max(np.abs(a - b)) for a, b in zip(coupled_u, plain_u))
    ok = worst_zero <= 1e-12 and h_max[0] <= 1e-12 and diff <= 1e-12 and len(coupled_u) == len(plain_u) == steps
    detail = (f"zero data max |field| {worst_zero:.1e}; zero-field run max |H| {h_max[0]:.1e}, "
              f"velocity vs decoupled {diff:.1e} over {steps} steps (limit 1e-12)")
    return Criterion(7, "null preservation", ok, detail)


@_timed
def check_incompressibility(study=None) -> Criterion:
    study = study or table1_study()
    if not study.results:
        return Criterion(8, "discrete incompressibility", False, "no runs available")
    worst = max(float(np.max(r.log.column("div_residual"))) for r in study.results)
    return Criterion(8, "discrete incompressibility", worst <= 1e-9,
                     f"max (div u~, q) residual over all steps {worst:.1e} (limit 1e-9)")


def run_suite(name: str, echo: bool = False, full_hartmann: bool = False) -> list[Criterion]:
    """Run the ``properties`` or ``tables`` suite and return its criteria."""
    def emit(c):
        if echo:
            print(c.line(), flush=True)
        return c

    if name == "properties":
        return [emit(check()) for check in
                (check_skew_symmetry, check_lorentz_induction, check_forcing_oracle, check_null_preservation)]
    if name == "tables":
        study = table1_study()
        out = [emit(check_table1(study)), emit(check_incompressibility(study)), emit(check_stiff_regimes()),
               emit(check_hartmann())]
        if full_hartmann:
            out.append(emit(check_hartmann(n=24, tolerance=0.01, budget=None)))
        return out
    raise ValueError(f"unknown suite {name!r}")
