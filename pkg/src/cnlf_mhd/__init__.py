"""Finite element Crank-Nicolson leap-frog solver for 2D incompressible MHD."""

from .mesh import BoundaryTag, Mesh, Rect, build_rect_mesh
from .problems import (ErrorReport, hartmann_problem, manufactured_forcing, manufactured_problem,
                       convergence_study)
from .stepper import CNLFSolver, SchemeConfig, State

__all__ = [
    "BoundaryTag", "Mesh", "Rect", "build_rect_mesh",
    "ErrorReport", "hartmann_problem", "manufactured_forcing", "manufactured_problem", "convergence_study",
    "CNLFSolver", "SchemeConfig", "State",
]
