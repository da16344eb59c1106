"""Structured triangulations of axis-aligned rectangles."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class BoundaryTag(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    BOTTOM = 2
    TOP = 3


@dataclass(frozen=True)
class Rect:
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


UNIT_SQUARE = Rect()


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangle mesh.

    ``vertices`` is (V, 2), ``triangles`` is (T, 3) with counter-clockwise
    vertex order, ``boundary_edges`` is (E_b, 2) and ``boundary_tags`` holds
    one :class:`BoundaryTag` value per boundary edge.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    rect: Rect
    h_max: float = field(init=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_edges, self.boundary_tags):
            arr.setflags(write=False)
        object.__setattr__(self, "h_max", float(self.edge_lengths().max()))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        """(T, 3) lengths of the edge opposite each local vertex."""
        p = self.vertices[self.triangles]
        return np.stack(
            [np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1) for i in range(3)],
            axis=1,
        )

    def interior_angles(self) -> np.ndarray:
        """(T, 3) interior angles in radians."""
        p = self.vertices[self.triangles]
        angles = np.empty((self.num_triangles, 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles[:, i] = np.arccos(np.clip(cosang, -1.0, 1.0))
        return angles

    def edges(self) -> np.ndarray:
        """Unique undirected edges as a sorted (E, 2) array."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def boundary_vertices(self, tags=None) -> np.ndarray:
        """Sorted vertex indices lying on boundary edges carrying any of ``tags``."""
        if tags is None:
            sel = np.ones(len(self.boundary_tags), dtype=bool)
        else:
            sel = np.isin(self.boundary_tags, [int(t) for t in tags])
        return np.unique(self.boundary_edges[sel])

    def outward_normals(self) -> np.ndarray:
        """(E_b, 2) unit outward normals of the boundary edges."""
        normals = {
            BoundaryTag.LEFT: (-1.0, 0.0),
            BoundaryTag.RIGHT: (1.0, 0.0),
            BoundaryTag.BOTTOM: (0.0, -1.0),
            BoundaryTag.TOP: (0.0, 1.0),
        }
        return np.array([normals[BoundaryTag(t)] for t in self.boundary_tags]).reshape(-1, 2)


def build_rect_mesh(nx: int, ny: int, rect: Rect = UNIT_SQUARE) -> Mesh:
    """Split an nx-by-ny grid of cells along the lower-left/upper-right diagonal."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"subdivision counts must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(rect.x0, rect.x1, nx + 1)
    ys = np.linspace(rect.y0, rect.y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    v00, v10, v11, v01 = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    # interleave so that the two halves of a cell are adjacent in memory
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    i = np.arange(nx)
    j = np.arange(ny)
    bottom = np.column_stack([vid(i, 0), vid(i + 1, 0)])
    right = np.column_stack([vid(nx, j), vid(nx, j + 1)])
    top = np.column_stack([vid(i + 1, ny), vid(i, ny)])
    left = np.column_stack([vid(0, j + 1), vid(0, j)])
    edges = np.concatenate([bottom, right, top, left]).astype(np.int64)
    tags = np.concatenate([
        np.full(nx, BoundaryTag.BOTTOM),
        np.full(ny, BoundaryTag.RIGHT),
        np.full(nx, BoundaryTag.TOP),
        np.full(ny, BoundaryTag.LEFT),
    ]).astype(np.int64)
    return Mesh(vertices, triangles, edges, tags, rect)


def mesh_statistics(mesh: Mesh) -> dict:
    return {
        "num_vertices": mesh.num_vertices,
        "num_triangles": mesh.num_triangles,
        "num_boundary_edges": len(mesh.boundary_edges),
        "h_max": mesh.h_max,
        "min_angle": float(np.degrees(mesh.interior_angles().min())),
    }


def write_mesh_text(mesh: Mesh, path) -> None:
    """Plain node/element listing, mostly for debugging."""
    with open(path, "w") as fh:
        fh.write(f"# vertices {mesh.num_vertices}\n")
        for k, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{k} {x:.17g} {y:.17g}\n")
        fh.write(f"# triangles {mesh.num_triangles}\n")
        for k, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"{k} {a} {b} {c}\n")
        fh.write(f"# boundary_edges {len(mesh.boundary_edges)}\n")
        for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
            fh.write(f"{a} {b} {BoundaryTag(t).name}\n")
