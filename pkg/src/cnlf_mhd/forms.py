"""Element and global assembly of the MHD bilinear and frozen-field forms.

2D conventions: for a vector v, ``curl v = d_x v2 - d_y v1`` (a scalar); for a
scalar s, ``curl s = (d_y s, -d_x s)``.  ``H x s = (H2 s, -H1 s)`` for a
scalar s, and ``u x H = u1 H2 - u2 H1``.

Local element arrays for vector fields are ordered component-major, matching
:meth:`DofMap.vector_cell_dofs`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .sparse_linalg import TripletBuffer, finalize
from .spaces import DofMap, QuadratureRule, Tabulation, make_quadrature, tabulate

DEFAULT_QUADRATURE_DEGREE = 8


@dataclass(eq=False)
class FormContext:
    mesh: Mesh
    velocity: DofMap
    pressure: DofMap
    magnetic: DofMap
    nu: float = 1.0
    mu: float = 1.0
    sigma: float = 1.0
    rule: QuadratureRule = field(default_factory=lambda: make_quadrature(DEFAULT_QUADRATURE_DEGREE))
    _tabs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name in ("nu", "mu", "sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for dm in (self.velocity, self.pressure, self.magnetic):
            if dm.num_vertices != self.mesh.num_vertices or len(dm.cell_dofs) != self.mesh.num_triangles:
                raise ValueError(f"dof map {dm.role!r} was built on a different mesh")

    def space(self, name) -> DofMap:
        return {"velocity": self.velocity, "u": self.velocity, "pressure": self.pressure, "p": self.pressure,
                "magnetic": self.magnetic, "H": self.magnetic}[name] if isinstance(name, str) else name

    def tab(self, dofmap: DofMap, rule: QuadratureRule | None = None) -> Tabulation:
        rule = rule or self.rule
        key = (dofmap.basis.kind, rule.degree)
        if key not in self._tabs:
            self._tabs[key] = tabulate(self.mesh, dofmap.basis, rule)
        return self._tabs[key]


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    matrix: sp.csr_matrix
    row_space: str
    col_space: str

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def toarray(self):
        return self.matrix.toarray()


# ---------------------------------------------------------------------------
# Field evaluation helpers

def cell_coefficients(dofmap: DofMap, coeffs) -> np.ndarray:
    """(T, components, nloc) element coefficients of a global vector."""
    c = np.asarray(coeffs)[dofmap.vector_cell_dofs()]
    return c.reshape(len(c), dofmap.components, -1)


def field_at_quadrature(tab: Tabulation, cell_coeffs):
    """Values (T, q, comps) and gradients (T, q, comps, 2) at quadrature points."""
    vals = np.einsum("qa,tca->tqc", tab.values, cell_coeffs)
    grads = np.einsum("tqad,tca->tqcd", tab.grads, cell_coeffs)
    return vals, grads


def block_diagonal(local, components):
    if components == 1:
        return local
    t, n, m = local.shape
    out = np.zeros((t, components * n, components * m))
    for c in range(components):
        out[:, c * n:(c + 1) * n, c * m:(c + 1) * m] = local
    return out


def _curl_basis(tab: Tabulation) -> np.ndarray:
    """(T, q, 2*nloc): scalar curl of psi_a e_c, component-major."""
    g = tab.grads
    return np.concatenate([-g[..., 1], g[..., 0]], axis=2)


def _div_basis(tab: Tabulation) -> np.ndarray:
    """(T, q, 2*nloc): divergence of psi_a e_c, component-major."""
    g = tab.grads
    return np.concatenate([g[..., 0], g[..., 1]], axis=2)


# ---------------------------------------------------------------------------
# Element arrays

def mass_local(tab: Tabulation, components: int = 1, coefficient: float = 1.0):
    m = coefficient * np.einsum("tq,qa,qb->tab", tab.weights, tab.values, tab.values)
    return block_diagonal(m, components)


def stiffness_local(tab: Tabulation, components: int = 1, coefficient: float = 1.0):
    k = coefficient * np.einsum("tq,tqad,tqbd->tab", tab.weights, tab.grads, tab.grads)
    return block_diagonal(k, components)


def div_local(tab_u: Tabulation, tab_p: Tabulation):
    """(T, n_p, 2*n_u) entries (div psi_b e_c, q_a)."""
    return np.einsum("tq,qa,tqb->tab", tab_u.weights, tab_p.values, _div_basis(tab_u))


def convection_local(tab: Tabulation, adv_cell):
    """Skew convection: (w.grad v) . test + 1/2 (div w) v . test, frozen w."""
    w, gw = field_at_quadrature(tab, adv_cell)
    divw = gw[..., 0, 0] + gw[..., 1, 1]
    wgrad = np.einsum("tqd,tqbd->tqb", w, tab.grads)
    k = np.einsum("tq,qa,tqb->tab", tab.weights, tab.values, wgrad)
    k += 0.5 * np.einsum("tq,tq,qa,qb->tab", tab.weights, divw, tab.values, tab.values)
    return block_diagonal(k, 2)


def lorentz_local(tab_u: Tabulation, tab_h: Tabulation, h_cell, mu: float):
    """mu (H x curl B, v): rows velocity test, columns magnetic trial."""
    H, _ = field_at_quadrature(tab_h, h_cell)
    curl = _curl_basis(tab_h)                        # (T, q, 2*nh)
    wq = mu * tab_u.weights
    top = np.einsum("tq,tq,qa,tqb->tab", wq, H[..., 1], tab_u.values, curl)
    bot = -np.einsum("tq,tq,qa,tqb->tab", wq, H[..., 0], tab_u.values, curl)
    return np.concatenate([top, bot], axis=1)


def induction_local(tab_u: Tabulation, tab_h: Tabulation, h_cell, mu: float):
    """-mu (u x H, curl B): rows magnetic test, columns velocity trial."""
    H, _ = field_at_quadrature(tab_h, h_cell)
    curl = _curl_basis(tab_h)
    # u x H for u = psi e_1 is psi H2, for u = psi e_2 it is -psi H1
    cross = np.concatenate([H[..., 1:2] * tab_u.values[None], -H[..., 0:1] * tab_u.values[None]], axis=2)
    return -mu * np.einsum("tq,tqa,tqb->tab", tab_u.weights, curl, cross)


def curlcurl_local(tab: Tabulation, coefficient: float = 1.0):
    c = _curl_basis(tab)
    return coefficient * np.einsum("tq,tqa,tqb->tab", tab.weights, c, c)


def divdiv_local(tab: Tabulation, coefficient: float = 1.0):
    d = _div_basis(tab)
    return coefficient * np.einsum("tq,tqa,tqb->tab", tab.weights, d, d)


def load_local(tab: Tabulation, values):
    """``values`` (comps, T, q) at physical quadrature points -> (T, comps*nloc)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    parts = [np.einsum("tq,tq,qa->ta", tab.weights, v, tab.values) for v in values]
    return np.concatenate(parts, axis=1)


# ---------------------------------------------------------------------------
# Global operators

def _global(local, rows: DofMap, cols: DofMap, rname, cname) -> AssembledOperator:
    buf = TripletBuffer()
    buf.add_local(rows.vector_cell_dofs(), cols.vector_cell_dofs(), local)
    return AssembledOperator(finalize(buf, rows.num_global, cols.num_global), rname, cname)


def assemble_mass(ctx: FormContext, space, coefficient: float = 1.0) -> AssembledOperator:
    dm = ctx.space(space)
    return _global(mass_local(ctx.tab(dm), dm.components, coefficient), dm, dm, dm.role, dm.role)


def assemble_stiffness(ctx: FormContext, space, coefficient: float) -> AssembledOperator:
    dm = ctx.space(space)
    return _global(stiffness_local(ctx.tab(dm), dm.components, coefficient), dm, dm, dm.role, dm.role)


def assemble_div(ctx: FormContext) -> AssembledOperator:
    """Pressure-test by velocity-trial operator of (div u, q)."""
    u, p = ctx.velocity, ctx.pressure
    return _global(div_local(ctx.tab(u), ctx.tab(p)), p, u, p.role, u.role)


def assemble_convection(ctx: FormContext, advecting) -> AssembledOperator:
    u = ctx.velocity
    local = convection_local(ctx.tab(u), cell_coefficients(u, advecting))
    return _global(local, u, u, u.role, u.role)


def assemble_lorentz(ctx: FormContext, h_frozen) -> AssembledOperator:
    u, h = ctx.velocity, ctx.magnetic
    local = lorentz_local(ctx.tab(u), ctx.tab(h), cell_coefficients(h, h_frozen), ctx.mu)
    return _global(local, u, h, u.role, h.role)


def assemble_induction(ctx: FormContext, h_frozen) -> AssembledOperator:
    u, h = ctx.velocity, ctx.magnetic
    local = induction_local(ctx.tab(u), ctx.tab(h), cell_coefficients(h, h_frozen), ctx.mu)
    return _global(local, h, u, h.role, u.role)


def assemble_curlcurl_divdiv(ctx: FormContext, coefficient: float) -> AssembledOperator:
    h = ctx.magnetic
    tab = ctx.tab(h)
    return _global(curlcurl_local(tab, coefficient) + divdiv_local(tab, coefficient), h, h, h.role, h.role)


def assemble_curlcurl(ctx: FormContext, coefficient: float = 1.0) -> AssembledOperator:
    h = ctx.magnetic
    return _global(curlcurl_local(ctx.tab(h), coefficient), h, h, h.role, h.role)


def evaluate_at_quadrature(tab: Tabulation, func, *args) -> np.ndarray:
    """Evaluate ``func(x, y, *args)`` at all physical quadrature points: (comps, T, q)."""
    x, y = tab.points[..., 0], tab.points[..., 1]
    vals = np.asarray(func(x.ravel(), y.ravel(), *args), dtype=float)
    return vals.reshape(-1, *x.shape)


def assemble_load(ctx: FormContext, space, func, time: float | None = None) -> np.ndarray:
    """Load vector of ``func(x, y, t)`` (or ``func(x, y)`` when ``time`` is None)."""
    dm = ctx.space(space)
    tab = ctx.tab(dm)
    args = () if time is None else (time,)
    vals = evaluate_at_quadrature(tab, func, *args)
    if vals.shape[0] != dm.components:
        raise ValueError(f"function returns {vals.shape[0]} components, space has {dm.components}")
    local = load_local(tab, vals)
    return np.bincount(dm.vector_cell_dofs().ravel(), weights=local.ravel(), minlength=dm.num_global)


def assemble_boundary_traction(ctx: FormContext, pressure_func, tags, time=None, npoints: int = 4) -> np.ndarray:
    """Velocity load ``-sum_e int_e p_d (v . n) ds`` over boundary edges with ``tags``.

    This is the right-hand side contribution of a prescribed normal traction
    ``(p I - nu grad u) n = p_d n``.  Bubble functions vanish on edges, so only
    the two vertex hats of each edge contribute.
    """
    mesh, u = ctx.mesh, ctx.velocity
    out = np.zeros(u.num_global)
    sel = np.isin(mesh.boundary_tags, [int(t) for t in tags])
    if not sel.any():
        return out
    edges = mesh.boundary_edges[sel]
    normals = mesh.outward_normals()[sel]
    s, w = np.polynomial.legendre.leggauss(npoints)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    a, b = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    pts = a[:, None, :] * (1 - s)[None, :, None] + b[:, None, :] * s[None, :, None]
    args = () if time is None else (time,)
    pd = np.asarray(pressure_func(pts[..., 0].ravel(), pts[..., 1].ravel(), *args), dtype=float).reshape(pts.shape[:2])
    wl = length[:, None] * w[None, :] * pd
    ia = wl @ (1 - s)
    ib = wl @ s
    for c in range(2):
        off = c * u.num_scalar
        np.add.at(out, off + edges[:, 0], -ia * normals[:, c])
        np.add.at(out, off + edges[:, 1], -ib * normals[:, c])
    return out


def pressure_weights(ctx: FormContext) -> np.ndarray:
    """Integrals of the pressure basis functions."""
    return assemble_load(ctx, ctx.pressure, lambda x, y: np.ones_like(x))


def write_coo(op, path) -> None:
    """Dump a sparse matrix as ``row col value`` lines."""
    A = (op.matrix if isinstance(op, AssembledOperator) else op).tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for r, c, v in zip(A.row, A.col, A.data):
            fh.write(f"{r} {c} {v:.17g}\n")


class FrozenFieldForm:
    """Element arrays that depend linearly on a frozen field, precomputed.

    ``local_fn(cell_coeffs)`` must be linear in ``cell_coeffs`` of shape
    (T, components, nloc).  The constructor probes it with unit coefficients
    once; afterwards :meth:`__call__` rebuilds the element arrays for any
    field with one batched matrix product.
    """

    def __init__(self, local_fn, num_cells: int, components: int, nloc: int):
        probes = []
        for c in range(components):
            for a in range(nloc):
                e = np.zeros((num_cells, components, nloc))
                e[:, c, a] = 1.0
                probes.append(local_fn(e))
        self.shape = probes[0].shape[1:]
        # (T, K, m*n)
        self.tensor = np.ascontiguousarray(np.stack(probes, axis=1).reshape(num_cells, len(probes), -1))

    def __call__(self, cell_coeffs) -> np.ndarray:
        k = np.asarray(cell_coeffs).reshape(len(self.tensor), 1, -1)
        return np.matmul(k, self.tensor).reshape(len(self.tensor), *self.shape)
