import numpy as np
import pytest

from cnlf_mhd.forms import FormContext
from cnlf_mhd.mesh import BoundaryTag, build_rect_mesh
from cnlf_mhd.spaces import BasisKind, build_dofmap

ALL = frozenset(BoundaryTag)


def make_context(n=4, magnetic="mini", nu=1.0, mu=1.0, sigma=1.0, velocity_tags=ALL, magnetic_tags=None, mesh=None):
    mesh = mesh if mesh is not None else build_rect_mesh(n, n)
    vel = build_dofmap(mesh, "velocity", BasisKind.P1_BUBBLE, 2, velocity_tags)
    pre = build_dofmap(mesh, "pressure", BasisKind.P1, 1)
    mag = build_dofmap(mesh, "magnetic", BasisKind(magnetic), 2, magnetic_tags)
    return FormContext(mesh, vel, pre, mag, nu, mu, sigma)


@pytest.fixture
def ctx():
    return make_context(4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
