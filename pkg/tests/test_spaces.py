import numpy as np
import pytest
from hypothesis import given, strategies as st

from cnlf_mhd.mesh import BoundaryTag, Rect, build_rect_mesh
from cnlf_mhd.spaces import (MINI, P1, BasisKind, build_dofmap, eval_basis, eval_basis_gradients,
                             evaluate_at_points, locate_points, make_quadrature, tabulate)

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
ALL = frozenset(BoundaryTag)

barycentric = st.tuples(st.floats(0, 1), st.floats(0, 1)).filter(lambda p: p[0] + p[1] <= 1).map(
    lambda p: (1 - p[0] - p[1], p[0], p[1]))


def test_p1_lagrange_property():
    assert np.allclose(eval_basis(P1, (1, 0, 0)), [1, 0, 0])


def test_bubble_is_one_at_barycentre():
    assert np.allclose(eval_basis(MINI, (1 / 3, 1 / 3, 1 / 3)), [1 / 3, 1 / 3, 1 / 3, 1], atol=1e-15)


@given(barycentric)
def test_partition_of_unity(lam):
    assert eval_basis(P1, lam).sum() == pytest.approx(1.0, abs=1e-14)


@given(st.floats(0, 1))
def test_bubble_vanishes_on_edges(s):
    for lam in ((0, s, 1 - s), (s, 0, 1 - s), (s, 1 - s, 0)):
        assert abs(eval_basis(MINI, lam)[3]) <= 1e-15


def test_rejects_points_outside():
    with pytest.raises(ValueError):
        eval_basis(P1, (1.1, -0.1, 0.0))
    with pytest.raises(ValueError):
        eval_basis(P1, (0.5, 0.5))


def test_reference_gradients():
    g = eval_basis_gradients(P1, (0.2, 0.3, 0.5), REF)
    assert np.allclose(g, [[-1, -1], [1, 0], [0, 1]])


@given(barycentric)
def test_gradients_sum_to_zero(lam):
    tri = np.array([[0.3, -0.2], [2.0, 0.4], [0.7, 1.9]])
    assert np.allclose(eval_basis_gradients(P1, lam, tri).sum(axis=0), 0, atol=1e-14)


def test_degenerate_triangle_rejected():
    with pytest.raises(ValueError):
        eval_basis_gradients(P1, (1 / 3, 1 / 3, 1 / 3), [[0, 0], [1, 1], [2, 2]])


def test_bubble_gradient_integrates_to_zero():
    tri = np.array([[0.3, -0.2], [2.0, 0.4], [0.7, 1.9]])
    rule = make_quadrature(2)
    area = 0.5 * abs(np.linalg.det(tri[1:] - tri[0]))
    total = sum(w * eval_basis_gradients(MINI, p, tri)[3] for p, w in zip(rule.points, rule.weights))
    assert np.allclose(2 * area * total, 0, atol=1e-15)


def test_centroid_rule():
    rule = make_quadrature(1)
    assert rule.num_points == 1
    assert np.allclose(rule.points[0], 1 / 3)
    assert rule.weights[0] == pytest.approx(0.5)


@pytest.mark.parametrize("degree", [3, 4, 5, 8, 10])
def test_barycentric_product_integrals(degree):
    rule = make_quadrature(degree)
    lam = rule.points
    val = rule.weights @ (lam[:, 0] * lam[:, 1] * lam[:, 2])
    assert val == pytest.approx(1 / 120, rel=1e-13)
    assert 27 * val == pytest.approx(0.225, rel=1e-13)


def _monomial_integral(a, b):
    # int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!
    from math import factorial
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", range(1, 11))
def test_quadrature_exactness(degree):
    rule = make_quadrature(degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    x, y = rule.points[:, 1], rule.points[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = _monomial_integral(a, b)
            assert rule.weights @ (x**a * y**b) == pytest.approx(exact, rel=1e-13), (a, b)


@pytest.mark.parametrize("degree", [0, 11, -1])
def test_unsupported_degree(degree):
    with pytest.raises(ValueError):
        make_quadrature(degree)


def test_dof_counts():
    m = build_rect_mesh(2, 2)
    assert build_dofmap(m, "pressure", BasisKind.P1).num_global == 9
    vel = build_dofmap(m, "velocity", BasisKind.P1_BUBBLE, 2, ALL)
    assert vel.num_global == 34
    # full Dirichlet: the 8 boundary vertices of both components, no bubbles
    assert vel.dirichlet_mask.sum() == 16
    assert set(np.flatnonzero(vel.dirichlet_mask[:17])) == set(m.boundary_vertices())


def test_dofmap_sharing_and_bubbles():
    m = build_rect_mesh(3, 2)
    dm = build_dofmap(m, "velocity", BasisKind.P1_BUBBLE, 2)
    assert np.array_equal(dm.cell_dofs[:, :3], m.triangles)
    bubbles = dm.cell_dofs[:, 3]
    assert len(np.unique(bubbles)) == m.num_triangles and bubbles.min() == m.num_vertices


def test_per_component_dirichlet():
    m = build_rect_mesh(3, 3)
    walls = {BoundaryTag.BOTTOM, BoundaryTag.TOP}
    sides = {BoundaryTag.LEFT, BoundaryTag.RIGHT}
    dm = build_dofmap(m, "magnetic", BasisKind.P1, 2, (walls, sides))
    assert set(np.flatnonzero(dm.dirichlet_mask[:16])) == set(m.boundary_vertices(walls))
    assert set(np.flatnonzero(dm.dirichlet_mask[16:])) == set(m.boundary_vertices(sides))
    with pytest.raises(ValueError):
        build_dofmap(m, "magnetic", BasisKind.P1, 2, (walls,))


@pytest.mark.parametrize("kind", [BasisKind.P1, BasisKind.P1_BUBBLE])
def test_linear_fields_reproduced(kind):
    m = build_rect_mesh(4, 3, Rect(-1, 2, 0, 1))
    dm = build_dofmap(m, "velocity", kind, 2)
    coeffs = dm.interpolate(m, lambda x, y: np.array([2 * x - y + 0.5, -x + 3 * y]))
    tab = tabulate(m, dm.basis, make_quadrature(5))
    c = coeffs[dm.vector_cell_dofs()].reshape(m.num_triangles, 2, -1)
    vals = np.einsum("qa,tca->ctq", tab.values, c)
    x, y = tab.points[..., 0], tab.points[..., 1]
    assert np.allclose(vals[0], 2 * x - y + 0.5, atol=1e-13)
    assert np.allclose(vals[1], -x + 3 * y, atol=1e-13)


def test_point_evaluation_matches_mini_with_zero_bubbles():
    m = build_rect_mesh(3, 3)
    p1 = build_dofmap(m, "p", BasisKind.P1, 1)
    mini = build_dofmap(m, "p", BasisKind.P1_BUBBLE, 1)
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(m.num_vertices)
    cm = np.concatenate([vals, np.zeros(m.num_triangles)])
    pts = rng.random((30, 2))
    assert np.allclose(evaluate_at_points(m, p1, vals, pts), evaluate_at_points(m, mini, cm, pts), atol=1e-14)


def test_locate_points_outside():
    with pytest.raises(ValueError):
        locate_points(build_rect_mesh(2, 2), [[1.5, 0.5]])


def test_tabulated_weights_sum_to_area():
    m = build_rect_mesh(3, 5, Rect(0, 2, 0, 7))
    tab = tabulate(m, P1, make_quadrature(8))
    assert tab.weights.sum() == pytest.approx(14.0, rel=1e-13)
