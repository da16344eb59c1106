"""Crank-Nicolson leap-frog time integration of the MHD system.

Every step solves one linear system in (u, p, H): the nonlinear terms are
linearised around known fields, so the leap-frog step couples
``u^{n+1}, p^n, H^{n+1}`` through averages ``(x^{n+1} + x^{n-1}) / 2``.
The first step is a backward-Euler step with explicit nonlinear terms, the
second a Crank-Nicolson step with extrapolated frozen fields.
"""

from __future__ import annotations

import csv
import logging
import math
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import forms
from .forms import FormContext, FrozenFieldForm, cell_coefficients
from .mesh import build_rect_mesh
from .problems import ErrorReport, Problem, error_norms
from .sparse_linalg import (BlockSystem, DirichletPlan, LinearSolver, SolveReport, SolverError, SparsePattern,
                            add_mean_constraint, apply_dirichlet, factorize)
from .spaces import BasisKind, build_dofmap

log = logging.getLogger(__name__)
_REFRESH_AFTER = 3


@dataclass(frozen=True)
class SchemeConfig:
    nu: float = 1.0
    mu: float = 1.0
    sigma: float = 1.0
    dt: float = 0.0125
    T: float = 1.0
    n: int = 8                      # cells per unit length, h = 1/n
    dt_over_h: float = 0.1          # used by refinement studies
    magnetic_space: str = "mini"    # "mini" or "p1"
    solver: str = "reuse"           # "reuse", "direct" or "gmres"
    tolerance: float = 1e-10
    max_iterations: int = 500
    coupled: bool = True            # False drops the magnetic field (Navier-Stokes only)
    steady_tol: Optional[float] = None
    stop_rule: str = "velocity+magnetic"   # or "velocity"
    max_steps: Optional[int] = None

    def __post_init__(self):
        for name in ("nu", "mu", "sigma", "dt", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.dt > self.T * (1 + 1e-12):
            raise ValueError("dt must not exceed T")
        if abs(self.num_steps * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.magnetic_space not in ("mini", "p1"):
            raise ValueError(f"unknown magnetic space {self.magnetic_space!r}")
        if self.stop_rule not in ("velocity+magnetic", "velocity"):
            raise ValueError(f"unknown stop rule {self.stop_rule!r}")

    @property
    def num_steps(self) -> int:
        return max(1, round(self.T / self.dt))


@dataclass
class State:
    u_prev: np.ndarray
    u_curr: np.ndarray
    H_prev: Optional[np.ndarray]
    H_curr: Optional[np.ndarray]
    p: Optional[np.ndarray]
    n: int
    t: float
    p_time: float = 0.0

    @property
    def u(self):
        return self.u_curr

    @property
    def H(self):
        return self.H_curr


@dataclass
class StepInfo:
    residual: float
    div_residual: float
    iterations: int
    factorized: bool
    increment_u: float
    increment_h: float
    stop_rule: str = "velocity+magnetic"

    @property
    def increment(self) -> float:
        """Increment read by the steady-state stop rule."""
        if self.stop_rule == "velocity":
            return self.increment_u
        return self.increment_u + self.increment_h


@dataclass
class EnergyLog:
    """Per-step norms of the discrete solution."""

    rows: list = field(default_factory=list)
    columns = ("step", "t", "u_l2", "grad_u_l2", "H_l2", "curl_H_l2", "residual", "div_residual")

    def append(self, row) -> None:
        if not all(math.isfinite(v) for v in row[2:]):
            raise FloatingPointError(f"non-finite norms at step {row[0]}: {row}")
        self.rows.append(tuple(row))

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([r[0]] + [f"{v:.12e}" for v in r[1:]])


@dataclass
class RunResult:
    state: State
    log: EnergyLog
    errors: Optional[ErrorReport]
    steps: int
    steady: bool
    wall_time: float
    factorizations: int


class CNLFSolver:
    """Owns the discretisation of one problem at one resolution."""

    def __init__(self, problem: Problem, config: SchemeConfig):
        self.problem = problem
        self.config = config
        rect = problem.rect
        nx = round(config.n * (rect.x1 - rect.x0))
        ny = round(config.n * (rect.y1 - rect.y0))
        self.mesh = build_rect_mesh(nx, ny, rect)
        bc = problem.boundary
        self.bc = bc
        vel = build_dofmap(self.mesh, "velocity", BasisKind.P1_BUBBLE, 2, bc.velocity_tags)
        pre = build_dofmap(self.mesh, "pressure", BasisKind.P1, 1)
        mag = build_dofmap(self.mesh, "magnetic", BasisKind(config.magnetic_space), 2, bc.magnetic_tags)
        self.ctx = FormContext(self.mesh, vel, pre, mag, config.nu, config.mu, config.sigma)
        self.coupled = config.coupled
        self.dt = config.dt
        self.linear_solver = LinearSolver(config.solver, config.tolerance, config.max_iterations)

        ctx = self.ctx
        tu, th = ctx.tab(vel), ctx.tab(mag)

        # global operators for norms and projections
        self.M_u = forms.assemble_mass(ctx, vel).matrix
        self.K_u = forms.assemble_stiffness(ctx, vel, 1.0).matrix
        self.D = forms.assemble_div(ctx).matrix
        self.M_h = forms.assemble_mass(ctx, mag).matrix
        self.C_h = forms.assemble_curlcurl(ctx, 1.0).matrix
        self.p_weights = forms.pressure_weights(ctx)

        self.elements = _ElementSystem(self)
        self._history = []
        self._kind = None
        self._preconditioner = None
        nl = vel.basis.num_local
        ntri = self.mesh.num_triangles
        # frozen-field forms, linear in the frozen coefficients
        self._convection = FrozenFieldForm(lambda c: forms.convection_local(tu, c)[:, :nl, :nl], ntri, 2, nl)
        if self.coupled:
            mu = config.mu
            self._lorentz = FrozenFieldForm(lambda c: forms.lorentz_local(tu, th, c, mu), ntri, 2,
                                            mag.basis.num_local)

    # -- helpers ------------------------------------------------------------

    def _velocity_bc(self, t):
        vel = self.ctx.velocity
        f = self.bc.velocity_values
        vals = np.zeros(vel.num_global) if f is None else vel.interpolate(self.mesh, f, t)
        return vel.dirichlet_mask, vals

    def _magnetic_bc(self, t):
        mag = self.ctx.magnetic
        f = self.bc.magnetic_values
        vals = np.zeros(mag.num_global) if f is None else mag.interpolate(self.mesh, f, t)
        return mag.dirichlet_mask, vals

    def _velocity_load(self, t):
        vel = self.ctx.velocity
        out = np.zeros(vel.num_global)
        if self.problem.f is not None:
            out += forms.assemble_load(self.ctx, vel, self.problem.f, t)
        if self.bc.traction is not None:
            out += forms.assemble_boundary_traction(self.ctx, self.bc.traction, self.bc.traction_tags, t)
        return out

    def _magnetic_load(self, t):
        if self.problem.g is None:
            return np.zeros(self.ctx.magnetic.num_global)
        return forms.assemble_load(self.ctx, self.ctx.magnetic, self.problem.g, t)

    def _check(self, *arrays):
        for a in arrays:
            if a is not None and not np.all(np.isfinite(a)):
                raise FloatingPointError("non-finite values in the discrete state")

    # -- initial data -------------------------------------------------------

    def project_initial(self) -> State:
        """Constrained L2 projections of the initial velocity and magnetic field.

        The velocity goes to the discretely divergence-free subspace (mass
        matrix plus a pressure multiplier); the magnetic field is a plain L2
        projection.
        """
        ctx, prob = self.ctx, self.problem
        vel = ctx.velocity
        rhs_u = forms.assemble_load(ctx, vel, prob.u0)
        npre = ctx.pressure.num_global
        A = BlockSystem.from_blocks(
            {("u", "u"): self.M_u, ("u", "p"): -self.D.T.tocsr(), ("p", "u"): -self.D},
            {"u": vel.num_global, "p": npre},
            {"u": rhs_u, "p": np.zeros(npre)},
        )
        if self.bc.zero_mean_pressure:
            A = add_mean_constraint(A, self.p_weights)
        mask, vals = vel.dirichlet_mask, vel.interpolate(self.mesh, prob.u0)
        A = apply_dirichlet(A, {"u": (mask, vals)})
        solver = LinearSolver("direct", self.config.tolerance)
        x, _ = solver.solve(A)
        u0 = x[A.block_slice("u")]

        H0 = None
        if self.coupled:
            mag = ctx.magnetic
            rhs_h = forms.assemble_load(ctx, mag, prob.H0)
            B = BlockSystem(self.M_h.copy(), rhs_h, {"H": mag.num_global})
            if prob.constrain_initial_magnetic and mag.dirichlet_mask.any():
                B = apply_dirichlet(B, {"H": (mag.dirichlet_mask, mag.interpolate(self.mesh, prob.H0))})
            H0, _ = solver.solve(B)
        self._check(u0, H0)
        return State(u0, u0, H0, H0, None, 0, 0.0, 0.0)

    # -- one linear step ----------------------------------------------------

    def _advance(self, u_old, h_old, adv, h_frozen, inv_dt, theta, implicit, cont_old, t_new, f_load, g_load):
        """Solve for (u_new, p, H_new).

        Linear terms act on ``theta * new + (1 - theta) * old``; the time
        derivative is ``inv_dt * (new - old)``.  With ``implicit`` the
        convection, Lorentz and induction terms act on the same average with
        frozen fields ``adv`` and ``h_frozen``; otherwise they are evaluated
        entirely at ``adv``/``h_frozen`` and moved to the right-hand side.
        The continuity row reads ``-div(u_new + cont_old * u_old) = 0``.
        """
        vel, mag = self.ctx.velocity, self.ctx.magnetic
        es = self.elements
        conv = self._convection(cell_coefficients(vel, adv))
        lor = self._lorentz(cell_coefficients(mag, h_frozen)) if self.coupled else None
        bc = {"u": self._velocity_bc(t_new)[1]}
        if self.coupled:
            bc["H"] = self._magnetic_bc(t_new)[1]
        tf = theta if implicit else 0.0
        kind = (inv_dt, theta, implicit)
        if kind != self._kind:
            # a factorization from another kind of step is a poor preconditioner
            self.linear_solver.reset()
            self._preconditioner = None
            self._history = []
            self._kind = kind
        loads = np.zeros(es.full_size)
        loads[:es.Nu] = f_load
        if self.coupled:
            loads[es.Nu + es.Np:es.Nu + es.Np + es.Nh] = g_load

        if self.linear_solver.method == "reuse":
            A0, R = es.full_operators(inv_dt, theta, cont_old)
            F = es.frozen_matrix(conv, lor)
            x_old = es.join(u_old, h_old)
            rhs = R @ x_old + loads
            if implicit:
                rhs -= (1 - theta) * (F @ x_old)

                def A(x):
                    return A0 @ x + tf * (F @ x)
            else:
                rhs -= F @ es.join(adv, h_frozen)
                A = A0.__matmul__
            y, report = self._solve_full(A, rhs, bc, (inv_dt, tf, theta, conv, lor))
            recover = es.split
        else:
            rhs = es.old_level(inv_dt, theta, u_old, h_old, cont_old) + loads[:es.Nu + es.Np + es.Nh]
            if implicit:
                rhs -= (1 - theta) * es.frozen_apply(conv, lor, u_old, h_old)
            else:
                rhs -= es.frozen_apply(conv, lor, adv, h_frozen)
            system, recover = es.condense(inv_dt, tf, theta, conv, lor, rhs, bc)
            y, report = self.linear_solver.solve(system, self._extrapolate())
        self._history = (self._history + [y])[-3:]
        u_new, p, h_new = recover(y)
        self._check(u_new, p, h_new)
        div_res = float(np.max(np.abs(self.D @ (u_new + cont_old * u_old))))
        if cont_old:
            div_res *= 0.5
        return u_new, p, h_new, report, div_res

    def _extrapolate(self):
        h = self._history
        if len(h) == 3:
            return 3 * (h[2] - h[1]) + h[0]
        if len(h) == 2:
            return 2 * h[1] - h[0]
        return None

    def _solve_full(self, A, b, bc, operator_args):
        """Solve the uncondensed step system ``A(x) = b`` by refinement against a
        stale condensed factorization, refactoring when the refinement stalls.
        ``operator_args`` rebuild the factorization for the current step.

        Dirichlet rows read ``x = value``; the relative residual is measured
        against the right-hand side of that row-replaced system.
        """
        es, ls = self.elements, self.linear_solver
        mask = es.full_mask
        values = es.full_values(bc)
        scale = np.linalg.norm(np.where(mask, values, b)) or 1.0
        x = self._extrapolate()
        x = values.copy() if x is None else np.where(mask, values, x)

        def residual(x):
            r = b - A(x)
            r[mask] = 0.0
            return r, float(np.linalg.norm(r)) / scale

        r, rel = residual(x)
        its, since, factorized, robust = 0, 0, False, False
        while not rel <= ls.tolerance:
            if self._preconditioner is None or since >= ls.refactor_after:
                self._preconditioner = es.preconditioner(*operator_args, robust=robust)
                ls.num_factorizations += 1
                factorized, since = True, 0
            x = x + self._preconditioner(r)
            its += 1
            since += 1
            r, new = residual(x)
            if not new <= 0.3 * rel:
                if factorized and since == 1:
                    # a fresh factorization that does not contract is inaccurate
                    if robust:
                        raise SolverError("refinement against a fresh factorization stalled", new)
                    robust = True
                self._preconditioner = None
            rel = new
            if its > ls.max_iterations:
                raise SolverError("refinement did not converge", rel)
        if its > _REFRESH_AFTER:
            # the next step would pay for the drift again; refresh instead
            self._preconditioner = None
        return x, SolveReport("reuse", rel * scale, rel, its, factorized)

    def _wrap(self, state, u_new, p, h_new, report: SolveReport, div_res, dt) -> tuple[State, StepInfo]:
        inc_u = self.norm_l2_u(u_new - state.u_curr)
        inc_h = self.norm_l2_h(h_new - state.H_curr) if self.coupled else 0.0
        new = State(state.u_curr, u_new, state.H_curr, h_new, p, state.n + 1, state.t + dt, 0.0)
        info = StepInfo(report.relative_residual, div_res, report.iterations, report.factorized, inc_u, inc_h,
                        self.config.stop_rule)
        return new, info

    # -- the three kinds of step ---------------------------------------------

    def step_euler_first(self, state: State, dt: float | None = None):
        """Backward Euler for linear terms, explicit nonlinear terms at level 0."""
        dt = self.dt if dt is None else dt
        t1 = state.t + dt
        u_new, p, h_new, rep, div_res = self._advance(
            state.u_curr, state.H_curr, state.u_curr, state.H_curr,
            1.0 / dt, 1.0, False, 0.0, t1, self._velocity_load(t1), self._magnetic_load(t1))
        new, info = self._wrap(state, u_new, p, h_new, rep, div_res, dt)
        new.p_time = t1
        return new, info

    def step_cn_extrapolation(self, state: State, dt: float | None = None):
        """Crank-Nicolson step with frozen fields extrapolated from levels 0 and 1."""
        dt = self.dt if dt is None else dt
        t1, t2 = state.t, state.t + dt
        adv = 1.5 * state.u_curr - 0.5 * state.u_prev
        hfz = 1.5 * state.H_curr - 0.5 * state.H_prev if self.coupled else None
        f = 0.5 * (self._velocity_load(t2) + self._velocity_load(t1))
        g = 0.5 * (self._magnetic_load(t2) + self._magnetic_load(t1)) if self.coupled else None
        u_new, p, h_new, rep, div_res = self._advance(
            state.u_curr, state.H_curr, adv, hfz, 1.0 / dt, 0.5, True, 0.0, t2, f, g)
        new, info = self._wrap(state, u_new, p, h_new, rep, div_res, dt)
        new.p_time = t2
        return new, info

    def step_cnlf(self, state: State, dt: float | None = None):
        """Leap-frog step from levels (n-1, n) to (n, n+1); returns p at t_n."""
        dt = self.dt if dt is None else dt
        tn = state.t
        g = self._magnetic_load(tn) if self.coupled else None
        u_new, p, h_new, rep, div_res = self._advance(
            state.u_prev, state.H_prev, state.u_curr, state.H_curr,
            0.5 / dt, 0.5, True, 1.0, tn + dt, self._velocity_load(tn), g)
        new, info = self._wrap(state, u_new, p, h_new, rep, div_res, dt)
        new.p_time = tn
        return new, info

    # -- norms --------------------------------------------------------------

    def norm_l2_u(self, u):
        return float(np.sqrt(max(u @ (self.M_u @ u), 0.0)))

    def norm_l2_h(self, h):
        return float(np.sqrt(max(h @ (self.M_h @ h), 0.0)))

    def norms(self, state: State):
        u, h = state.u_curr, state.H_curr
        out = [self.norm_l2_u(u), float(np.sqrt(max(u @ (self.K_u @ u), 0.0)))]
        if self.coupled:
            out += [self.norm_l2_h(h), float(np.sqrt(max(h @ (self.C_h @ h), 0.0)))]
        else:
            out += [0.0, 0.0]
        return out

    # -- driver -------------------------------------------------------------

    def run(self, on_step: Callable | None = None) -> RunResult:
        cfg = self.config
        start = _time.perf_counter()
        elog = EnergyLog()
        state = self.project_initial()
        elog.append([0, 0.0] + self.norms(state) + [0.0, 0.0])
        n_total = cfg.num_steps if cfg.max_steps is None else min(cfg.num_steps, cfg.max_steps)
        steady = False
        steppers = {1: self.step_euler_first, 2: self.step_cn_extrapolation}
        while state.n < n_total:
            step = steppers.get(state.n + 1, self.step_cnlf)
            try:
                state, info = step(state)
            except SolverError as exc:
                raise SolverError(f"step {state.n + 1}: {exc}", exc.residual) from exc
            elog.append([state.n, state.t] + self.norms(state) + [info.residual, info.div_residual])
            if on_step is not None:
                on_step(state, info)
            if cfg.steady_tol is not None and info.increment <= cfg.steady_tol:
                steady = True
                break
        errors = None
        exact = self.problem.exact
        if exact is not None and self.coupled:
            errors = error_norms(self.ctx, state, exact, state.t, state.p_time,
                                 zero_mean=self.bc.zero_mean_pressure)
        wall = _time.perf_counter() - start
        log.info("%s n=%d: %d steps in %.1fs, %d factorizations", self.problem.name, cfg.n, state.n, wall,
                 self.linear_solver.num_factorizations)
        return RunResult(state, elog, errors, state.n, steady, wall, self.linear_solver.num_factorizations)


class _ElementSystem:
    """Step matrices with static condensation of the bubble dofs.

    Local dofs of a cell are ordered vertex dofs first (velocity components,
    pressure, magnetic components), then bubbles (velocity, then magnetic).
    Bubbles live in one cell each, so eliminating them cell by cell is exact
    and leaves a global system in vertex values only, plus the multiplier of
    the zero-mean gauge when there is one.
    """

    def __init__(self, solver: "CNLFSolver"):
        ctx, cfg = solver.ctx, solver.config
        vel, pre, mag = ctx.velocity, ctx.pressure, ctx.magnetic
        coupled = solver.coupled
        tri = solver.mesh.triangles
        T, V = len(tri), solver.mesh.num_vertices
        self.vel, self.pre, self.mag, self.coupled, self.V = vel, pre, mag, coupled, V
        self.Nu, self.Np = vel.num_global, pre.num_global
        self.Nh = mag.num_global if coupled else 0
        h_bubble = coupled and mag.basis.has_bubble
        nvert = 15 if coupled else 9
        self.nvert = nvert
        self.nb = 4 if h_bubble else 2
        L = nvert + self.nb

        def local_positions(nloc, vstart, bstart):
            pos = []
            for c in range(2):
                pos += [vstart + 3 * c + a for a in range(3)]
                if nloc == 4:
                    pos.append(bstart + c)
            return np.array(pos)

        u_loc = local_positions(4, 0, nvert)
        p_loc = np.arange(6, 9)
        h_loc = local_positions(mag.basis.num_local, 9, nvert + 2) if coupled else np.zeros(0, int)
        # natural element order -> vertex-first order for the frozen forms
        self.perm_u = np.argsort(u_loc)
        self.perm_h = np.argsort(h_loc) if coupled else None

        # condensed global numbering: [u1, u2, p, H1, H2] vertex values (+ multiplier)
        blocks = [tri, tri + V, tri + 2 * V]
        layout = {"u": 2 * V, "p": V}
        if coupled:
            blocks += [tri + 3 * V, tri + 4 * V]
            layout["H"] = 2 * V
        self.vdofs = np.concatenate(blocks, axis=1)
        n = sum(layout.values())
        tables = [(self.vdofs, self.vdofs)]
        gauge_blocks = []
        if solver.bc.zero_mean_pressure:
            lam = np.full((T, 1), n)
            tables += [(tri + 2 * V, lam), (lam, tri + 2 * V)]
            w = np.einsum("tq,qa->ta", ctx.tab(pre).weights, ctx.tab(pre).values)
            gauge_blocks = [w[:, :, None], w[:, None, :]]
            layout["lambda"] = 1
            n += 1
        self.layout = layout
        self.size = n
        self.pattern = SparsePattern(tables, (n, n))
        self._gauge_data = self.pattern.assemble_data([None] + gauge_blocks) if gauge_blocks else 0.0

        # index maps between full coefficient vectors and condensed vertex unknowns
        self.u_full = vel.vector_cell_dofs()
        self.h_full = mag.vector_cell_dofs() if coupled else None
        self.vel_vertex = np.concatenate([c * vel.num_scalar + np.arange(V) for c in range(2)])
        self.mag_vertex = (np.concatenate([c * mag.num_scalar + np.arange(V) for c in range(2)])
                           if coupled else None)
        # positions of the bubble unknowns in the stacked vector [u, p, H]
        bub = [c * vel.num_scalar + V + np.arange(T) for c in range(2)]
        if h_bubble:
            bub += [self.Nu + self.Np + c * mag.num_scalar + V + np.arange(T) for c in range(2)]
        self.bubble_full = np.stack(bub, axis=1)
        # and of the vertex unknowns, in condensed order
        vert = [self.vel_vertex, self.Nu + np.arange(V)]
        if coupled:
            vert.append(self.Nu + self.Np + self.mag_vertex)
        self.vertex_full = np.concatenate(vert)

        mask = np.zeros(n, dtype=bool)
        mask[:2 * V] = vel.dirichlet_mask[self.vel_vertex]
        if coupled:
            mask[3 * V:5 * V] = mag.dirichlet_mask[self.mag_vertex]
        self.dirichlet = DirichletPlan(self.pattern.indptr, self.pattern.indices, mask)

        # uncondensed numbering [u, p, H, multiplier] used for residuals
        nfull = self.Nu + self.Np + self.Nh
        self.loc2full = np.concatenate([self.vertex_full[self.vdofs], self.bubble_full], axis=1)
        # only the couplings that occur: each velocity component with itself,
        # velocity-pressure and magnetic-magnetic; the frozen terms add
        # velocity-magnetic couplings
        self._local_blocks = [(u_loc[:4], u_loc[:4]), (u_loc[4:], u_loc[4:]), (u_loc, p_loc), (p_loc, u_loc)]
        frozen_local = self._local_blocks[:2]
        if coupled:
            self._local_blocks.append((h_loc, h_loc))
            frozen_local += [(u_loc, h_loc), (h_loc, u_loc)]
        full_tables = [(self.loc2full[:, r], self.loc2full[:, c]) for r, c in self._local_blocks]
        frozen_tables = [(self.loc2full[:, r], self.loc2full[:, c]) for r, c in frozen_local]
        self.gauged = bool(gauge_blocks)
        if self.gauged:
            lam = np.full((T, 1), nfull)
            full_tables += [(tri + self.Nu, lam), (lam, tri + self.Nu)]
            nfull += 1
        self.full_size = nfull
        self.full_pattern = SparsePattern(full_tables, (nfull, nfull))
        self._full_gauge = 0.0
        if self.gauged:
            k = len(full_tables)
            self._full_gauge = self.full_pattern.assemble_data(gauge_blocks, (k - 2, k - 1))
        self.frozen_pattern = SparsePattern(frozen_tables, (nfull, nfull))
        self.full_mask = np.zeros(nfull, dtype=bool)
        self.full_mask[:self.Nu] = vel.dirichlet_mask
        if coupled:
            self.full_mask[self.Nu + self.Np:self.Nu + self.Np + self.Nh] = mag.dirichlet_mask

        # time-invariant element arrays
        tu, tp, th = ctx.tab(vel), ctx.tab(pre), ctx.tab(mag)
        div = forms.div_local(tu, tp)
        self.mass = np.zeros((T, L, L))
        self.diffusion = np.zeros((T, L, L))
        self.saddle = np.zeros((T, L, L))
        put = self._put
        m_u, k_u = forms.mass_local(tu, 2), forms.stiffness_local(tu, 2, cfg.nu)
        put(self.mass, u_loc, u_loc, m_u)
        put(self.diffusion, u_loc, u_loc, k_u)
        put(self.saddle, u_loc, p_loc, -np.transpose(div, (0, 2, 1)))
        put(self.saddle, p_loc, u_loc, -div)
        # full-space operators for the old-level right-hand side
        self.M_full = forms.assemble_mass(ctx, vel).matrix
        self.K_full = forms.assemble_stiffness(ctx, vel, cfg.nu).matrix
        self.D = forms.assemble_div(ctx).matrix
        if coupled:
            inv_sigma = 1.0 / cfg.sigma
            m_h = forms.mass_local(th, 2, cfg.mu)
            k_h = forms.curlcurl_local(th, inv_sigma) + forms.divdiv_local(th, inv_sigma)
            put(self.mass, h_loc, h_loc, m_h)
            put(self.diffusion, h_loc, h_loc, k_h)
            self.M_h = forms.assemble_mass(ctx, mag, cfg.mu).matrix
            self.K_h = forms.assemble_curlcurl_divdiv(ctx, inv_sigma).matrix
        self._bases = {}
        self._full_bases = {}

    @staticmethod
    def _put(E, rows, cols, local):
        E[:, rows[:, None], cols[None, :]] += local

    def _base(self, inv_dt, theta):
        key = (inv_dt, theta)
        if key not in self._bases:
            nv = self.nvert
            E = inv_dt * self.mass + theta * self.diffusion + self.saddle
            vv = self.pattern.assemble_data([E[:, :nv, :nv]]) + self._gauge_data
            self._bases[key] = (vv, E[:, nv:, nv:].copy(), E[:, nv:, :nv].copy(), E[:, :nv, nv:].copy())
        return self._bases[key]

    def frozen_apply(self, conv, lor, u, h):
        """Full-space action of the frozen convection, Lorentz and induction terms."""
        T = len(conv)
        uc = u[self.u_full].reshape(T, 2, -1)
        fu = np.einsum("tab,tcb->tca", conv, uc).reshape(T, -1)
        out = np.zeros(self.Nu + self.Np + self.Nh)
        if lor is not None:
            hc = h[self.h_full]
            fu += np.einsum("tab,tb->ta", lor, hc)
            fh = -np.einsum("tba,tb->ta", lor, uc.reshape(T, -1))
            out[self.Nu + self.Np:] = np.bincount(self.h_full.ravel(), weights=fh.ravel(), minlength=self.Nh)
        out[:self.Nu] = np.bincount(self.u_full.ravel(), weights=fu.ravel(), minlength=self.Nu)
        return out

    def old_level(self, inv_dt, theta, u, h, cont_old):
        out = np.empty(self.Nu + self.Np + self.Nh)
        out[:self.Nu] = inv_dt * (self.M_full @ u) - (1 - theta) * (self.K_full @ u)
        out[self.Nu:self.Nu + self.Np] = cont_old * (self.D @ u)
        if self.coupled:
            out[self.Nu + self.Np:] = inv_dt * (self.M_h @ h) - (1 - theta) * (self.K_h @ h)
        return out

    def _full_data(self, name):
        if name not in self._full_bases:
            fp = self.full_pattern
            if name == "div":
                E = np.zeros_like(self.saddle)
                E[:, 6:9] = self.saddle[:, 6:9]     # pressure rows
            else:
                E = getattr(self, name)
            self._full_bases[name] = fp.assemble_data([E[:, r[:, None], c[None, :]] for r, c in self._local_blocks])
        return self._full_bases[name]

    def full_operators(self, inv_dt, theta, cont_old):
        """Uncondensed step matrix and old-level matrix without the frozen
        terms; the old level enters the right-hand side as ``R @ x_old``."""
        key = ("step", inv_dt, theta, cont_old)
        if key not in self._full_bases:
            m, k, sd = self._full_data("mass"), self._full_data("diffusion"), self._full_data("saddle")
            fp = self.full_pattern
            self._full_bases[key] = (fp.matrix(inv_dt * m + theta * k + sd + self._full_gauge),
                                     fp.matrix(inv_dt * m - (1 - theta) * k - cont_old * self._full_data("div")))
        return self._full_bases[key]

    def frozen_matrix(self, conv, lor):
        """Convection, Lorentz and induction terms as one uncondensed matrix."""
        blocks = [conv, conv]
        if lor is not None:
            blocks += [lor, -np.transpose(lor, (0, 2, 1))]
        return self.frozen_pattern.assemble(blocks)

    def join(self, u, h):
        x = np.zeros(self.full_size)
        x[:self.Nu] = u
        if self.coupled:
            x[self.Nu + self.Np:self.Nu + self.Np + self.Nh] = h
        return x

    def full_values(self, bc):
        out = np.zeros(self.full_size)
        out[:self.Nu] = np.where(self.vel.dirichlet_mask, bc["u"], 0.0)
        if self.coupled:
            out[self.Nu + self.Np:self.Nu + self.Np + self.Nh] = np.where(self.mag.dirichlet_mask, bc["H"], 0.0)
        return out

    def split(self, x):
        u = x[:self.Nu]
        p = x[self.Nu:self.Nu + self.Np]
        h = x[self.Nu + self.Np:self.Nu + self.Np + self.Nh] if self.coupled else None
        return u, p, h

    def condensed_operator(self, inv_dt, theta_frozen, theta, conv, lor):
        """Bubble elimination of the step matrix.

        Returns the condensed matrix (before boundary conditions), the inverse
        bubble blocks, ``Ebb^-1 Ebv`` and ``Evb``.
        ``theta_frozen`` weights the frozen-field terms (zero when they are
        treated explicitly).
        """
        vv, Ebb, Ebv, Evb = self._base(inv_dt, theta)
        tf = theta_frozen
        S_extra = None
        if tf:
            Ebb, Ebv, Evb = Ebb.copy(), Ebv.copy(), Evb.copy()
            cb = tf * conv
            for c in range(2):
                Ebb[:, c, c] += cb[:, 3, 3]
                Ebv[:, c, 3 * c:3 * c + 3] += cb[:, 3, :3]
                Evb[:, 3 * c:3 * c + 3, c] += cb[:, :3, 3]
            if lor is not None:
                lp = tf * lor[:, self.perm_u][:, :, self.perm_h]
                Ebv[:, 0:2, 9:15] += lp[:, 6:8, :6]
                Evb[:, 0:6, 2:] += lp[:, :6, 6:]
                Ebv[:, 2:, 0:6] -= np.transpose(lp[:, :6, 6:], (0, 2, 1))
                Evb[:, 9:15, 0:2] -= np.transpose(lp[:, 6:8, :6], (0, 2, 1))
                Ebb[:, 0:2, 2:] += lp[:, 6:8, 6:]
                Ebb[:, 2:, 0:2] -= np.transpose(lp[:, 6:8, 6:], (0, 2, 1))
            S_extra = (cb, lp[:, :6, :6] if lor is not None else None)

        Binv = np.linalg.inv(Ebb)
        X = Binv @ Ebv
        S = -(Evb @ X)
        if S_extra is not None:
            cb, lvv = S_extra
            S[:, 0:3, 0:3] += cb[:, :3, :3]
            S[:, 3:6, 3:6] += cb[:, :3, :3]
            if lvv is not None:
                S[:, 0:6, 9:15] += lvv
                S[:, 9:15, 0:6] -= np.transpose(lvv, (0, 2, 1))
        A = self.pattern.matrix(vv + self.pattern.assemble_data([S]))
        return A, Binv, X, Evb

    def _condense_rhs(self, Binv, Evb, r):
        """Bubble-eliminated right-hand side and the bubble part ``Ebb^-1 r_b``."""
        yb = np.einsum("tab,tb->ta", Binv, r[self.bubble_full])
        rc = np.zeros(self.size)
        rc[:len(self.vertex_full)] = r[self.vertex_full]
        if self.gauged and len(r) == self.full_size:
            rc[-1] = r[-1]
        rc -= np.bincount(self.vdofs.ravel(), weights=np.einsum("tab,tb->ta", Evb, yb).ravel(),
                          minlength=self.size)
        return rc, yb

    def _expand(self, y, yb, X):
        """Full vector from condensed unknowns ``y`` by bubble back-substitution."""
        full = np.zeros(self.full_size)
        full[self.vertex_full] = y[:len(self.vertex_full)]
        full[self.bubble_full] = yb - np.einsum("tab,tb->ta", X, y[self.vdofs])
        if self.gauged:
            full[-1] = y[-1]
        return full

    def preconditioner(self, inv_dt, theta_frozen, theta, conv, lor, robust=False):
        """Exact inverse of the current uncondensed step matrix, as a function
        on residuals with zero Dirichlet entries."""
        A, Binv, X, Evb = self.condensed_operator(inv_dt, theta_frozen, theta, conv, lor)
        zero = np.zeros(self.size)
        lu = factorize(self.dirichlet.apply(A, zero, zero)[0], robust)
        mask = self.dirichlet.mask
        T, nb = self.bubble_full.shape
        bub = self.bubble_full.ravel()
        local = np.arange(T * nb).reshape(T, nb)
        nvf = len(self.vertex_full)

        def sparse(rows, cols, data, shape):
            r = np.broadcast_to(rows[:, :, None], data.shape).ravel()
            c = np.broadcast_to(cols[:, None, :], data.shape).ravel()
            return sp.csr_matrix((data.ravel(), (r, c)), shape=shape)

        Bs = sparse(local, local, Binv, (T * nb, T * nb))
        Cs = sparse(self.vdofs, local, Evb, (self.size, T * nb))
        Xs = sparse(local, self.vdofs, X, (T * nb, self.size))

        def apply(r):
            yb = Bs @ r[bub]
            rc = np.zeros(self.size)
            rc[:nvf] = r[self.vertex_full]
            if self.gauged:
                rc[-1] = r[-1]
            rc -= Cs @ yb
            rc[mask] = 0.0
            y = lu.solve(rc)
            out = np.zeros(self.full_size)
            out[self.vertex_full] = y[:nvf]
            out[bub] = yb - Xs @ y
            if self.gauged:
                out[-1] = y[-1]
            return out

        return apply

    def condense(self, inv_dt, theta_frozen, theta, conv, lor, rhs_full, bc):
        """Condensed system for the right-hand side ``rhs_full`` and a recovery
        function mapping its solution to (u, p, H)."""
        A, Binv, X, Evb = self.condensed_operator(inv_dt, theta_frozen, theta, conv, lor)
        rhs, yb = self._condense_rhs(Binv, Evb, rhs_full)
        V = self.V
        values = np.zeros(self.size)
        values[:2 * V] = bc["u"][self.vel_vertex]
        if self.coupled:
            values[3 * V:5 * V] = bc["H"][self.mag_vertex]
        A, rhs = self.dirichlet.apply(A, rhs, values)
        return BlockSystem(A, rhs, dict(self.layout)), lambda y: self.split(self._expand(y, yb, X))


def run(problem: Problem, config: SchemeConfig, on_step=None) -> RunResult:
    return CNLFSolver(problem, config).run(on_step)


def with_steps(config: SchemeConfig, steps: int) -> SchemeConfig:
    """Copy of ``config`` whose final time is ``steps`` time steps."""
    return replace(config, T=steps * config.dt)
