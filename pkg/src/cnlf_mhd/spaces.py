"""Reference bases, triangle quadrature and global degree-of-freedom maps.

Vector fields are numbered component-blocked: the global index of scalar dof
``i`` in component ``c`` is ``c * num_scalar + i``.  Scalar dofs are vertex
values first, then one bubble coefficient per triangle (Mini element).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Collection, Sequence

import numpy as np

from .mesh import BoundaryTag, Mesh


class BasisKind(enum.Enum):
    P1 = "p1"
    P1_BUBBLE = "mini"


@dataclass(frozen=True)
class ReferenceBasis:
    kind: BasisKind

    @property
    def num_local(self) -> int:
        return 3 if self.kind is BasisKind.P1 else 4

    @property
    def has_bubble(self) -> bool:
        return self.kind is BasisKind.P1_BUBBLE


P1 = ReferenceBasis(BasisKind.P1)
MINI = ReferenceBasis(BasisKind.P1_BUBBLE)


def basis_for(kind) -> ReferenceBasis:
    return MINI if BasisKind(kind) is BasisKind.P1_BUBBLE else P1


# ---------------------------------------------------------------------------
# Quadrature

@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle; weights sum to its area 1/2."""

    degree: int
    points: np.ndarray   # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)

    @property
    def num_points(self) -> int:
        return len(self.weights)


# Symmetric rules with positive weights (Dunavant).  Entries are
# (weight, orbit) where the orbit is () for the centroid, (a,) for the
# three points (a, a, 1-2a) and (a, b) for the six permutations of (a, b, 1-a-b).
# Weights are normalised to sum to one.
_RULES = {
    1: [(1.0, ())],
    2: [(1.0 / 3.0, (1.0 / 6.0,))],
    4: [
        (0.223381589678011, (0.445948490915965,)),
        (0.109951743655322, (0.091576213509771,)),
    ],
    5: [
        (0.225, ()),
        (0.132394152788506, (0.470142064105115,)),
        (0.125939180544827, (0.101286507323456,)),
    ],
    8: [
        (0.144315607677787, ()),
        (0.095091634267285, (0.459292588292723,)),
        (0.103217370534718, (0.170569307751760,)),
        (0.032458497623198, (0.050547228317031,)),
        (0.027230314174435, (0.008394777409958, 0.263112829634638)),
    ],
    10: [
        (0.090817990382754, ()),
        (0.036725957756467, (0.485577633383657,)),
        (0.045321059435528, (0.109481575485037,)),
        (0.072757916845420, (0.141707219414880, 0.307939838764121)),
        (0.028327242531057, (0.025003534762686, 0.246672560639903)),
        (0.009421666963733, (0.009540815400299, 0.066803251012200)),
    ],
}


def _expand(orbits):
    pts, wts = [], []
    for w, orb in orbits:
        if len(orb) == 0:
            new = [(1 / 3, 1 / 3, 1 / 3)]
        elif len(orb) == 1:
            a = orb[0]
            b = 1.0 - 2.0 * a
            new = [(a, a, b), (a, b, a), (b, a, a)]
        else:
            a, b = orb
            c = 1.0 - a - b
            new = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
        pts.extend(new)
        wts.extend([w] * len(new))
    return np.array(pts), np.array(wts)


def make_quadrature(min_degree: int) -> QuadratureRule:
    if not 1 <= min_degree <= 10:
        raise ValueError(f"unsupported quadrature degree {min_degree}")
    degree = min(d for d in _RULES if d >= min_degree)
    pts, wts = _expand(_RULES[degree])
    return QuadratureRule(degree, pts, 0.5 * wts)


# ---------------------------------------------------------------------------
# Basis evaluation

def _check_barycentric(lam):
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    if lam.shape[-1] != 3:
        raise ValueError("barycentric coordinates need three entries")
    if np.any(lam < -1e-12) or np.any(np.abs(lam.sum(axis=-1) - 1.0) > 1e-12):
        raise ValueError("point lies outside the reference triangle")
    return lam


def eval_basis(basis: ReferenceBasis, point) -> np.ndarray:
    """Shape function values at barycentric point(s): (..., num_local)."""
    single = np.ndim(point) == 1
    lam = _check_barycentric(point)
    vals = lam if not basis.has_bubble else np.column_stack([lam, 27.0 * lam.prod(axis=1)])
    return vals[0] if single else vals


def p1_gradients(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the barycentric coordinates and the triangle areas.

    ``coords`` is (T, 3, 2); returns ((T, 3, 2), (T,)).
    """
    x, y = coords[..., 0], coords[..., 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    if np.any(np.abs(area2) <= 1e-300):
        raise ValueError("degenerate triangle")
    grads = np.empty(coords.shape)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = (y[:, j] - y[:, k]) / area2
        grads[:, i, 1] = (x[:, k] - x[:, j]) / area2
    return grads, 0.5 * area2


def eval_basis_gradients(basis: ReferenceBasis, point, coords) -> np.ndarray:
    """Physical gradients at barycentric ``point`` on triangle(s) ``coords``.

    ``coords`` may be a single (3, 2) triangle or a (T, 3, 2) stack; the result
    is (num_local, 2) or (T, num_local, 2) respectively.
    """
    single_tri = np.ndim(coords) == 2
    coords = np.asarray(coords, dtype=float).reshape(-1, 3, 2)
    lam = _check_barycentric(point)[0]
    g, _ = p1_gradients(coords)
    if basis.has_bubble:
        prods = np.array([lam[1] * lam[2], lam[0] * lam[2], lam[0] * lam[1]])
        gb = 27.0 * np.einsum("i,tid->td", prods, g)
        g = np.concatenate([g, gb[:, None, :]], axis=1)
    return g[0] if single_tri else g


@dataclass(frozen=True, eq=False)
class Tabulation:
    """Basis data of one reference basis at one quadrature rule on a mesh.

    values: (nq, nloc); grads: (T, nq, nloc, 2); weights: (T, nq) physical
    weights; points: (T, nq, 2) physical quadrature points.
    """

    basis: ReferenceBasis
    rule: QuadratureRule
    values: np.ndarray
    grads: np.ndarray
    weights: np.ndarray
    points: np.ndarray


def tabulate(mesh: Mesh, basis: ReferenceBasis, rule: QuadratureRule) -> Tabulation:
    coords = mesh.vertices[mesh.triangles]
    lam = rule.points
    g, area = p1_gradients(coords)
    values = eval_basis(basis, lam)
    nq = rule.num_points
    grads = np.broadcast_to(g[:, None, :, :], (len(coords), nq, 3, 2))
    if basis.has_bubble:
        prods = np.column_stack([lam[:, 1] * lam[:, 2], lam[:, 0] * lam[:, 2], lam[:, 0] * lam[:, 1]])
        gb = 27.0 * np.einsum("qi,tid->tqd", prods, g)
        grads = np.concatenate([grads, gb[:, :, None, :]], axis=2)
    else:
        grads = np.ascontiguousarray(grads)
    weights = 2.0 * area[:, None] * rule.weights[None, :]
    points = np.einsum("qi,tid->tqd", lam, coords)
    return Tabulation(basis, rule, values, grads, weights, points)


# ---------------------------------------------------------------------------
# Degree-of-freedom maps

@dataclass(frozen=True, eq=False)
class DofMap:
    role: str
    basis: ReferenceBasis
    components: int
    num_vertices: int
    num_scalar: int
    cell_dofs: np.ndarray       # (T, nloc) scalar dof indices
    dirichlet_mask: np.ndarray  # (num_global,) bool
    dirichlet_tags: tuple       # per component, frozenset of BoundaryTag

    @property
    def num_global(self) -> int:
        return self.components * self.num_scalar

    def vector_cell_dofs(self) -> np.ndarray:
        """(T, components * nloc) global indices, component-major locally."""
        return np.concatenate(
            [self.cell_dofs + c * self.num_scalar for c in range(self.components)], axis=1
        )

    def vertex_slice(self, component: int = 0) -> slice:
        start = component * self.num_scalar
        return slice(start, start + self.num_vertices)

    def vertex_values(self, coeffs) -> np.ndarray:
        """(components, V) nodal values of a coefficient vector."""
        return np.array([coeffs[self.vertex_slice(c)] for c in range(self.components)])

    def interpolate(self, mesh: Mesh, func, *args) -> np.ndarray:
        """Nodal interpolant with zero bubble coefficients.

        ``func(x, y, *args)`` returns (components, n) values, or (n,) for scalars.
        """
        vals = np.asarray(func(mesh.vertices[:, 0], mesh.vertices[:, 1], *args), dtype=float)
        vals = np.broadcast_to(vals, (self.components, mesh.num_vertices)) if vals.ndim == 1 \
            else vals.reshape(self.components, mesh.num_vertices)
        out = np.zeros(self.num_global)
        for c in range(self.components):
            out[self.vertex_slice(c)] = vals[c]
        return out


def build_dofmap(
    mesh: Mesh,
    role: str,
    kind=BasisKind.P1,
    components: int = 1,
    dirichlet: Sequence[Collection[BoundaryTag]] | Collection[BoundaryTag] | None = None,
) -> DofMap:
    """Global numbering for a scalar or vector Lagrange field.

    ``dirichlet`` gives the constrained boundary tags, either one collection
    used for every component or a sequence with one collection per component.
    """
    basis = basis_for(kind)
    nv, nt = mesh.num_vertices, mesh.num_triangles
    if basis.has_bubble:
        cell_dofs = np.column_stack([mesh.triangles, nv + np.arange(nt)])
        num_scalar = nv + nt
    else:
        cell_dofs = mesh.triangles.copy()
        num_scalar = nv
    cell_dofs.setflags(write=False)

    if dirichlet is None:
        per_comp = [frozenset()] * components
    else:
        dirichlet = list(dirichlet)
        if dirichlet and all(isinstance(d, (set, frozenset, list, tuple)) for d in dirichlet):
            if len(dirichlet) != components:
                raise ValueError("need one Dirichlet tag set per component")
            per_comp = [frozenset(BoundaryTag(t) for t in d) for d in dirichlet]
        else:
            per_comp = [frozenset(BoundaryTag(t) for t in dirichlet)] * components

    mask = np.zeros(components * num_scalar, dtype=bool)
    for c, tags in enumerate(per_comp):
        if tags:
            mask[c * num_scalar + mesh.boundary_vertices(tags)] = True
    mask.setflags(write=False)
    return DofMap(role, basis, components, nv, num_scalar, cell_dofs, mask, tuple(per_comp))


def locate_points(mesh: Mesh, points, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle and barycentric coordinates of each point.

    Points on shared edges go to the lowest-numbered triangle.  Raises
    ``ValueError`` for points outside the mesh.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    coords = mesh.vertices[mesh.triangles]
    g, _ = p1_gradients(coords)
    # lambda_i(x) = lambda_i(v_i') + grad lambda_i . (x - v_i'), anchored at the next vertex
    anchor = np.roll(coords, -1, axis=1)
    cells = np.empty(len(pts), dtype=int)
    lams = np.empty((len(pts), 3))
    for k, p in enumerate(pts):
        lam = np.einsum("tid,tid->ti", g, p - anchor)
        inside = np.flatnonzero(np.all(lam >= -tol, axis=1))
        if len(inside) == 0:
            raise ValueError(f"point {tuple(p)} lies outside the mesh")
        t = inside[0]
        cells[k] = t
        lams[k] = np.clip(lam[t], 0.0, None) / np.clip(lam[t], 0.0, None).sum()
    return cells, lams


def evaluate_at_points(mesh: Mesh, dofmap: DofMap, coeffs, points) -> np.ndarray:
    """Finite element field values at physical points: (components, n)."""
    cells, lams = locate_points(mesh, points)
    vals = eval_basis(dofmap.basis, lams)                        # (n, nloc)
    c = np.asarray(coeffs)[dofmap.vector_cell_dofs()[cells]]     # (n, comps*nloc)
    c = c.reshape(len(cells), dofmap.components, -1)
    return np.einsum("na,nca->cn", vals, c)
