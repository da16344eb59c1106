"""Test problems: a smooth manufactured solution and Hartmann channel flow.

Also holds the error norms and the refinement study driver.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .forms import FormContext, cell_coefficients, field_at_quadrature
from .mesh import BoundaryTag, Rect, UNIT_SQUARE
from .spaces import make_quadrature

ALL_TAGS = frozenset(BoundaryTag)
WALLS = frozenset({BoundaryTag.BOTTOM, BoundaryTag.TOP})
INLET_OUTLET = frozenset({BoundaryTag.LEFT, BoundaryTag.RIGHT})

ERROR_NORM_DEGREE = 10


@dataclass(frozen=True)
class BoundaryRecipe:
    """Boundary conditions of one problem.

    Dirichlet tags are given per vector component.  ``*_values(x, y, t)``
    return (2, n) arrays; ``None`` means homogeneous data.  ``traction`` is the
    prescribed normal stress ``p_d`` on ``traction_tags``.
    """

    velocity_tags: tuple = (ALL_TAGS, ALL_TAGS)
    magnetic_tags: tuple = (ALL_TAGS, ALL_TAGS)
    velocity_values: Optional[Callable] = None
    magnetic_values: Optional[Callable] = None
    traction: Optional[Callable] = None
    traction_tags: frozenset = frozenset()
    zero_mean_pressure: bool = True

    def __post_init__(self):
        for c, tags in enumerate(self.velocity_tags):
            clash = set(tags) & set(self.traction_tags)
            if clash:
                raise ValueError(f"velocity component {c} is both Dirichlet and traction on {sorted(clash)}")
        if self.traction is None and self.traction_tags:
            raise ValueError("traction tags given without a traction function")


@dataclass(frozen=True)
class Problem:
    name: str
    rect: Rect
    boundary: BoundaryRecipe
    u0: Callable
    H0: Callable
    f: Optional[Callable] = None
    g: Optional[Callable] = None
    exact: object = None
    # when False the initial magnetic projection ignores the boundary data
    constrain_initial_magnetic: bool = True


def _zeros2(x, y, *args):
    x = np.asarray(x, dtype=float)
    return np.zeros((2,) + x.shape)


# ---------------------------------------------------------------------------
# Manufactured solution

@dataclass(frozen=True)
class ManufacturedSolution:
    """Smooth polynomial/trigonometric solution on the unit square.

    u = ((y + y^4) cos t, (x + x^2) cos t), p = (2x - 1)(2y - 1) cos t,
    H = ((sin y + y) cos t, (sin x + x^2) cos t).
    """

    nu: float = 1.0
    mu: float = 1.0
    sigma: float = 1.0

    def velocity(self, x, y, t):
        c = np.cos(t)
        return np.array([(y + y**4) * c, (x + x**2) * c])

    def velocity_grad(self, x, y, t):
        c = np.cos(t)
        z = np.zeros_like(np.asarray(x, dtype=float) + np.asarray(y, dtype=float))
        return np.array([[z, (1 + 4 * y**3) * c + z], [(1 + 2 * x) * c + z, z]])

    def pressure(self, x, y, t):
        return (2 * x - 1) * (2 * y - 1) * np.cos(t)

    def magnetic(self, x, y, t):
        c = np.cos(t)
        return np.array([(np.sin(y) + y) * c, (np.sin(x) + x**2) * c])

    def magnetic_grad(self, x, y, t):
        c = np.cos(t)
        z = np.zeros_like(np.asarray(x, dtype=float) + np.asarray(y, dtype=float))
        return np.array([[z, (np.cos(y) + 1) * c + z], [(np.cos(x) + 2 * x) * c + z, z]])

    def forcing_f(self, x, y, t):
        nu, mu = self.nu, self.mu
        c, s = np.cos(t), np.sin(t)
        h1 = (np.sin(y) + y) * c
        h2 = (np.sin(x) + x**2) * c
        curl_h = (np.cos(x) + 2 * x - np.cos(y) - 1) * c
        f1 = (-(y + y**4) * s - nu * 12 * y**2 * c + (x + x**2) * (1 + 4 * y**3) * c**2
              + 2 * (2 * y - 1) * c + mu * h2 * curl_h)
        f2 = (-(x + x**2) * s - nu * 2 * c + (y + y**4) * (1 + 2 * x) * c**2
              + 2 * (2 * x - 1) * c - mu * h1 * curl_h)
        return np.array([f1, f2])

    def forcing_g(self, x, y, t):
        mu, sigma = self.mu, self.sigma
        c, s = np.cos(t), np.sin(t)
        # d/dy and d/dx of the scalar u x H
        dy_cross = c**2 * ((1 + 4 * y**3) * (np.sin(x) + x**2) - (x + x**2) * (np.cos(y) + 1))
        dx_cross = c**2 * ((y + y**4) * (np.cos(x) + 2 * x) - (1 + 2 * x) * (np.sin(y) + y))
        g1 = -mu * (np.sin(y) + y) * s + np.sin(y) * c / sigma - mu * dy_cross
        g2 = -mu * (np.sin(x) + x**2) * s + (np.sin(x) - 2) * c / sigma + mu * dx_cross
        return np.array([g1, g2])


def manufactured_forcing(point, t, nu, mu, sigma):
    """(f, g) of the manufactured solution at ``point = (x, y)``."""
    if min(nu, mu, sigma) <= 0:
        raise ValueError("nu, mu and sigma must be positive")
    ms = ManufacturedSolution(nu, mu, sigma)
    x, y = point
    return ms.forcing_f(x, y, t), ms.forcing_g(x, y, t)


def manufactured_problem(nu=1.0, mu=1.0, sigma=1.0) -> Problem:
    ms = ManufacturedSolution(nu, mu, sigma)
    recipe = BoundaryRecipe(
        velocity_tags=(ALL_TAGS, ALL_TAGS),
        magnetic_tags=(ALL_TAGS, ALL_TAGS),
        velocity_values=ms.velocity,
        magnetic_values=ms.magnetic,
        zero_mean_pressure=True,
    )
    return Problem(
        "manufactured", UNIT_SQUARE, recipe,
        u0=lambda x, y: ms.velocity(x, y, 0.0),
        H0=lambda x, y: ms.magnetic(x, y, 0.0),
        f=ms.forcing_f, g=ms.forcing_g, exact=ms,
    )


# ---------------------------------------------------------------------------
# Hartmann flow

def hartmann_number(nu, mu, sigma) -> float:
    return math.sqrt(sigma * mu**2 / nu)


def hartmann_profiles(y, G, nu, mu, Ha):
    """Streamwise velocity and induced magnetic field across the channel."""
    if Ha <= 0:
        raise ValueError("Hartmann number must be positive")
    y = np.asarray(y, dtype=float)
    u1 = G / (nu * Ha * np.tanh(Ha)) * (1.0 - np.cosh(y * Ha) / np.cosh(Ha))
    h1 = G / mu * (np.sinh(y * Ha) / np.sinh(Ha) - y)
    return u1, h1


@dataclass(frozen=True)
class HartmannProblem:
    nu: float = 1.0
    mu: float = 1.0
    sigma: float = 1.0
    G: float = 1.0
    p0: float = 0.0
    rect: Rect = field(default_factory=lambda: Rect(0.0, 10.0, -1.0, 1.0))

    @property
    def Ha(self) -> float:
        return hartmann_number(self.nu, self.mu, self.sigma)

    def _dprofiles(self, y):
        Ha, G = self.Ha, self.G
        du1 = -G / (self.nu * np.tanh(Ha)) * np.sinh(y * Ha) / np.cosh(Ha)
        dh1 = G / self.mu * (Ha * np.cosh(y * Ha) / np.sinh(Ha) - 1.0)
        return du1, dh1

    def velocity(self, x, y, t=None):
        u1, _ = hartmann_profiles(y, self.G, self.nu, self.mu, self.Ha)
        return np.array([u1 + 0 * x, 0 * u1 + 0 * x])

    def velocity_grad(self, x, y, t=None):
        du1, _ = self._dprofiles(np.asarray(y, dtype=float))
        z = 0 * du1 + 0 * x
        return np.array([[z, du1 + z], [z, z]])

    def magnetic(self, x, y, t=None):
        _, h1 = hartmann_profiles(y, self.G, self.nu, self.mu, self.Ha)
        return np.array([h1 + 0 * x, np.ones_like(h1) + 0 * x])

    def magnetic_grad(self, x, y, t=None):
        _, dh1 = self._dprofiles(np.asarray(y, dtype=float))
        z = 0 * dh1 + 0 * x
        return np.array([[z, dh1 + z], [z, z]])

    def pressure(self, x, y, t=None):
        _, h1 = hartmann_profiles(y, self.G, self.nu, self.mu, self.Ha)
        return -self.G * x - 0.5 * self.mu * h1**2 + self.p0


def hartmann_boundary(hp: HartmannProblem) -> BoundaryRecipe:
    """No-slip walls, traction inlet/outlet, tangential magnetic data everywhere.

    The tangential component of H is H1 on the walls and H2 on the inlet and
    outlet; corner vertices end up with both components fixed.
    """
    return BoundaryRecipe(
        velocity_tags=(WALLS, WALLS),
        magnetic_tags=(WALLS, INLET_OUTLET),
        velocity_values=None,
        magnetic_values=lambda x, y, t: hp.magnetic(x, y),
        traction=lambda x, y, t: hp.pressure(x, y),
        traction_tags=INLET_OUTLET,
        zero_mean_pressure=False,
    )


def hartmann_problem(nu=1.0, mu=1.0, sigma=1.0, G=1.0, p0=0.0) -> Problem:
    hp = HartmannProblem(nu, mu, sigma, G, p0)
    return Problem(
        "hartmann", hp.rect, hartmann_boundary(hp),
        u0=_zeros2, H0=_zeros2, exact=hp, constrain_initial_magnetic=False,
    )


# ---------------------------------------------------------------------------
# Errors

@dataclass(frozen=True)
class ErrorReport:
    u_l2: float
    u_h1: float
    p_l2: float
    H_l2: float
    H_h1: float

    def as_tuple(self):
        return (self.u_l2, self.u_h1, self.p_l2, self.H_l2, self.H_h1)


def observed_order(e_coarse, e_fine, h_coarse, h_fine) -> float:
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def _vector_errors(ctx, dofmap, coeffs, exact_val, exact_grad, t, rule):
    tab = ctx.tab(dofmap, rule)
    vals, grads = field_at_quadrature(tab, cell_coefficients(dofmap, coeffs))
    x, y = tab.points[..., 0], tab.points[..., 1]
    ev = np.moveaxis(np.asarray(exact_val(x, y, t)), 0, -1)               # (T, q, 2)
    eg = np.moveaxis(np.asarray(exact_grad(x, y, t)), (0, 1), (-2, -1))    # (T, q, 2, 2)
    l2 = np.sqrt(np.sum(tab.weights * np.sum((vals - ev) ** 2, axis=-1)))
    h1 = np.sqrt(np.sum(tab.weights * np.sum((grads - eg) ** 2, axis=(-2, -1))))
    return float(l2), float(h1)


def pressure_error(ctx: FormContext, p_coeffs, exact_pressure, t, zero_mean=True, rule=None) -> float:
    rule = rule or make_quadrature(ERROR_NORM_DEGREE)
    tab = ctx.tab(ctx.pressure, rule)
    ph = np.einsum("qa,ta->tq", tab.values, np.asarray(p_coeffs)[ctx.pressure.cell_dofs])
    diff = ph - exact_pressure(tab.points[..., 0], tab.points[..., 1], t)
    if zero_mean:
        diff = diff - np.sum(tab.weights * diff) / np.sum(tab.weights)
    return float(np.sqrt(np.sum(tab.weights * diff**2)))


def error_norms(ctx: FormContext, state, exact, t=None, pressure_time=None, zero_mean=True) -> ErrorReport:
    """L2 and H1-seminorm errors of ``state`` against ``exact`` at time ``t``.

    ``state`` needs ``u``, ``p`` and ``H`` coefficient attributes; the pressure
    is compared at ``pressure_time`` (default ``t``).
    """
    rule = make_quadrature(ERROR_NORM_DEGREE)
    t = getattr(state, "t", 0.0) if t is None else t
    pt = getattr(state, "p_time", t) if pressure_time is None else pressure_time
    u_l2, u_h1 = _vector_errors(ctx, ctx.velocity, state.u, exact.velocity, exact.velocity_grad, t, rule)
    h_l2, h_h1 = _vector_errors(ctx, ctx.magnetic, state.H, exact.magnetic, exact.magnetic_grad, t, rule)
    p_l2 = pressure_error(ctx, state.p, exact.pressure, pt, zero_mean, rule)
    return ErrorReport(u_l2, u_h1, p_l2, h_l2, h_h1)


# ---------------------------------------------------------------------------
# Refinement studies

ERROR_HEADER = ["1/h", "||u_h-u||_0", "||grad(u_h-u)||_0", "||p_h^1-p||_0", "||B_h-B||_0", "||grad(B_h-B)||_0"]
ORDER_HEADER = ["1/h", "u_order_L2", "u_order_H1", "p_order_L2", "B_order_L2", "B_order_H1"]


@dataclass
class StudyTable:
    resolutions: list
    errors: list              # ErrorReport per completed resolution
    orders: list              # tuple of five orders per consecutive pair
    complete: bool = True
    failure: str = ""
    results: list = field(default_factory=list, repr=False)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ERROR_HEADER)
            for n, e in zip(self.resolutions, self.errors):
                w.writerow([n] + [f"{v:.6e}" for v in e.as_tuple()])
            w.writerow(ORDER_HEADER)
            for n, o in zip(self.resolutions[1:], self.orders):
                w.writerow([n] + [f"{v:.6f}" for v in o])
            if not self.complete:
                w.writerow([f"# incomplete: {self.failure}"])


def convergence_study(config, resolutions, problem: Problem | None = None, keep_results=False) -> StudyTable:
    """Run the scheme at each resolution with dt = h * config.dt_over_h.

    ``config`` is a :class:`~cnlf_mhd.stepper.SchemeConfig` template; its
    ``n`` and ``dt`` fields are overridden per resolution.
    """
    from dataclasses import replace

    from .sparse_linalg import SolverError
    from .stepper import CNLFSolver

    resolutions = list(resolutions)
    if resolutions != sorted(resolutions):
        raise ValueError("resolutions must be ascending")
    if problem is None:
        problem = manufactured_problem(config.nu, config.mu, config.sigma)
    table = StudyTable([], [], [])
    for n in resolutions:
        cfg = replace(config, n=n, dt=config.dt_over_h / n)
        try:
            result = CNLFSolver(problem, cfg).run()
        except (SolverError, FloatingPointError) as exc:
            table.complete = False
            table.failure = f"n={n}: {exc}"
            break
        table.resolutions.append(n)
        table.errors.append(result.errors)
        if keep_results:
            table.results.append(result)
    for i in range(1, len(table.errors)):
        hc, hf = 1.0 / table.resolutions[i - 1], 1.0 / table.resolutions[i]
        table.orders.append(tuple(
            observed_order(a, b, hc, hf) for a, b in zip(table.errors[i - 1].as_tuple(), table.errors[i].as_tuple())
        ))
    return table
