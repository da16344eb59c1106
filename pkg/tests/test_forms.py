import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cnlf_mhd import forms
from cnlf_mhd.forms import FrozenFieldForm, cell_coefficients, pressure_weights, write_coo
from cnlf_mhd.mesh import BoundaryTag, Rect, build_rect_mesh
from cnlf_mhd.problems import ManufacturedSolution

from conftest import make_context


def _sym_err(A):
    return abs(A - A.T).max() if (A - A.T).nnz else 0.0


def test_mass_totals():
    ctx = make_context(1, magnetic="p1")
    assert forms.assemble_mass(ctx, "p").matrix.sum() == pytest.approx(1.0, abs=1e-14)
    ctx = make_context(5, magnetic="p1", mesh=build_rect_mesh(5, 3, Rect(0, 2, 0, 3)))
    M = forms.assemble_mass(ctx, "p").matrix
    assert M.sum() == pytest.approx(6.0, rel=1e-13)


def test_mass_positive_definite(ctx, rng):
    for space in ("u", "p", "H"):
        M = forms.assemble_mass(ctx, space).matrix
        assert _sym_err(M) <= 1e-13
        for _ in range(5):
            x = rng.standard_normal(M.shape[0])
            assert x @ (M @ x) > 0


def test_stiffness_examples(ctx):
    K = forms.assemble_stiffness(ctx, "u", 0.7).matrix
    assert _sym_err(K) <= 1e-13
    ones = ctx.velocity.interpolate(ctx.mesh, lambda x, y: np.array([1.0 + 0 * x, -2.0 + 0 * x]))
    assert np.abs(K @ ones).max() <= 1e-13
    K2 = forms.assemble_stiffness(ctx, "u", 1.4).matrix
    assert abs(K2 - 2 * K).max() <= 1e-15
    u = ctx.velocity.interpolate(ctx.mesh, lambda x, y: np.array([x, 0 * x]))
    assert u @ (K @ u) == pytest.approx(0.7, rel=1e-13)


def test_div_examples(ctx):
    D = forms.assemble_div(ctx).matrix
    assert D.shape == (ctx.pressure.num_global, ctx.velocity.num_global)
    rot = ctx.velocity.interpolate(ctx.mesh, lambda x, y: np.array([y, -x]))
    assert np.abs(D @ rot).max() <= 1e-13
    const = ctx.velocity.interpolate(ctx.mesh, lambda x, y: np.array([1 + 0 * x, 2 + 0 * x]))
    assert np.abs(D @ const).max() <= 1e-13
    stretch = ctx.velocity.interpolate(ctx.mesh, lambda x, y: np.array([x, 0 * x]))
    assert np.ones(ctx.pressure.num_global) @ (D @ stretch) == pytest.approx(1.0, rel=1e-13)


def test_convection_zero_field(ctx):
    assert forms.assemble_convection(ctx, np.zeros(ctx.velocity.num_global)).matrix.count_nonzero() == 0


def test_convection_single_cell_hand_value():
    ctx = make_context(1)
    vel = ctx.velocity
    w = vel.interpolate(ctx.mesh, lambda x, y: np.array([1 + 0 * x, 0 * x]))
    v = vel.interpolate(ctx.mesh, lambda x, y: np.array([x, 0 * x]))
    out = forms.assemble_convection(ctx, w).matrix @ v
    # (w.grad) v = (1, 0) and div w = 0, so row i is the integral of the test function
    # vertices (0,0), (1,0), (0,1), (1,1); the diagonal joins the first and last
    hats = np.array([1 / 3, 1 / 6, 1 / 6, 1 / 3])
    expected_x = np.concatenate([hats, [27 / 120, 27 / 120]])
    assert np.allclose(out[:6], expected_x, atol=1e-15)
    assert np.allclose(out[6:], 0, atol=1e-15)


def test_convection_skew_and_linear(ctx, rng):
    vel = ctx.velocity
    w = rng.standard_normal(vel.num_global)
    N = forms.assemble_convection(ctx, w).matrix
    x = np.where(vel.dirichlet_mask, 0, rng.standard_normal(vel.num_global))
    assert abs(x @ (N @ x)) <= 1e-11 * np.linalg.norm(w) * np.linalg.norm(x) ** 2
    N3 = forms.assemble_convection(ctx, -3 * w).matrix
    assert abs(N3 + 3 * N).max() <= 1e-13 * abs(N).max()


def test_lorentz_zero_and_constant(ctx, rng):
    mag = ctx.magnetic
    L0 = forms.assemble_lorentz(ctx, np.zeros(mag.num_global)).matrix
    assert L0.count_nonzero() == 0
    L = forms.assemble_lorentz(ctx, rng.standard_normal(mag.num_global)).matrix
    const = mag.interpolate(ctx.mesh, lambda x, y: np.array([0.3 + 0 * x, -1.2 + 0 * x]))
    assert np.abs(L @ const).max() <= 1e-13


@pytest.mark.parametrize("mu", [1.0, 2.5])
def test_lorentz_single_cell_hand_value(mu):
    ctx = make_context(1, mu=mu)
    mag, vel = ctx.magnetic, ctx.velocity
    H = mag.interpolate(ctx.mesh, lambda x, y: np.array([0 * x, 1 + 0 * x]))
    B = mag.interpolate(ctx.mesh, lambda x, y: np.array([y, 0 * x]))
    out = forms.assemble_lorentz(ctx, H).matrix @ B
    # curl B = -1 and H x curl B = (-1, 0): against the constant test (1, 0) this is -mu |K|
    x_vertices = vel.vertex_slice(0)
    y_vertices = vel.vertex_slice(1)
    assert out[x_vertices].sum() == pytest.approx(-mu, rel=1e-14)
    assert abs(out[y_vertices].sum()) <= 1e-15


def test_induction_examples():
    ctx = make_context(1, mu=1.5)
    mag, vel = ctx.magnetic, ctx.velocity
    assert forms.assemble_induction(ctx, np.zeros(mag.num_global)).matrix.count_nonzero() == 0
    H = mag.interpolate(ctx.mesh, lambda x, y: np.array([0 * x, 1 + 0 * x]))
    u = vel.interpolate(ctx.mesh, lambda x, y: np.array([1 + 0 * x, 0 * x]))
    Cu = forms.assemble_induction(ctx, H).matrix @ u
    # u x H = 1; constant tests have zero curl, (-y, x) has curl 2
    const = mag.interpolate(ctx.mesh, lambda x, y: np.array([1 + 0 * x, 1 + 0 * x]))
    rot = mag.interpolate(ctx.mesh, lambda x, y: np.array([-y, x]))
    assert abs(const @ Cu) <= 1e-14
    assert rot @ Cu == pytest.approx(-1.5 * 2.0, rel=1e-14)


@pytest.mark.parametrize("magnetic", ["mini", "p1"])
def test_lorentz_induction_cancellation(magnetic, rng):
    ctx = make_context(4, magnetic, mu=0.8)
    mag = ctx.magnetic
    H = rng.standard_normal(mag.num_global)
    L = forms.assemble_lorentz(ctx, H).matrix
    C = forms.assemble_induction(ctx, H).matrix
    assert abs(L + C.T).max() <= 1e-13 * abs(L).max()


def test_curlcurl_divdiv_examples():
    ctx = make_context(3, magnetic="p1", sigma=1.0)
    mag = ctx.magnetic
    A = forms.assemble_curlcurl_divdiv(ctx, 1.0 / ctx.sigma).matrix
    assert _sym_err(A) <= 1e-13
    const = mag.interpolate(ctx.mesh, lambda x, y: np.array([2 + 0 * x, -1 + 0 * x]))
    assert np.abs(A @ const).max() <= 1e-13
    rot = mag.interpolate(ctx.mesh, lambda x, y: np.array([-y, x]))
    assert rot @ (A @ rot) == pytest.approx(4.0, rel=1e-13)
    A2 = forms.assemble_curlcurl_divdiv(ctx, 0.5).matrix
    assert abs(A2 - 0.5 * A).max() <= 1e-15


def test_load_examples(rng):
    ctx = make_context(4, magnetic="p1")
    mag = ctx.magnetic
    zero = forms.assemble_load(ctx, mag, lambda x, y, t: np.zeros((2,) + np.shape(x)), 0.0)
    assert not zero.any()
    unit = forms.assemble_load(ctx, mag, lambda x, y: np.array([1 + 0 * x, 0 * x]))
    assert unit[:mag.num_scalar].sum() == pytest.approx(1.0, rel=1e-14)
    assert abs(unit[mag.num_scalar:]).max() == 0
    with pytest.raises(ValueError):
        forms.assemble_load(ctx, mag, lambda x, y: x)


def test_manufactured_load_against_adaptive_quadrature():
    ctx = make_context(4, magnetic="p1")
    ms = ManufacturedSolution()
    load = forms.assemble_load(ctx, ctx.magnetic, ms.forcing_f, 0.0)
    n = ctx.magnetic.num_scalar
    for c in range(2):
        ref, _ = integrate.dblquad(lambda y, x: ms.forcing_f(x, y, 0.0)[c], 0, 1, 0, 1, epsabs=1e-13, epsrel=1e-13)
        assert load[c * n:(c + 1) * n].sum() == pytest.approx(ref, abs=1e-10)


def test_pressure_weights_sum_to_area():
    ctx = make_context(3)
    assert pressure_weights(ctx).sum() == pytest.approx(1.0, rel=1e-14)


def test_boundary_traction_only_on_tagged_edges():
    mesh = build_rect_mesh(4, 2, Rect(0, 2, -1, 1))
    ctx = make_context(mesh=mesh, velocity_tags={BoundaryTag.BOTTOM, BoundaryTag.TOP})
    tags = {BoundaryTag.LEFT, BoundaryTag.RIGHT}
    load = forms.assemble_boundary_traction(ctx, lambda x, y: 1.0 + x, tags)
    touched = np.flatnonzero(load)
    sides = mesh.boundary_vertices(tags)
    assert set(touched) <= set(sides)
    # p_d = 1 on the left (n = -x) and 3 on the right (n = +x), edges of total length 2 each
    assert load[:ctx.velocity.num_scalar].sum() == pytest.approx(-(3.0 * 2 - 1.0 * 2), rel=1e-13)
    assert abs(load[ctx.velocity.num_scalar:]).max() == 0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_frozen_form_matches_direct_assembly(seed):
    ctx = make_context(3)
    rng = np.random.default_rng(seed)
    vel, mag = ctx.velocity, ctx.magnetic
    tu, th = ctx.tab(vel), ctx.tab(mag)
    w = rng.standard_normal(vel.num_global)
    form = FrozenFieldForm(lambda c: forms.convection_local(tu, c), ctx.mesh.num_triangles, 2, 4)
    direct = forms.convection_local(tu, cell_coefficients(vel, w))
    assert np.allclose(form(cell_coefficients(vel, w)), direct, atol=1e-13)
    H = rng.standard_normal(mag.num_global)
    lform = FrozenFieldForm(lambda c: forms.lorentz_local(tu, th, c, 1.3), ctx.mesh.num_triangles, 2, 4)
    assert np.allclose(lform(cell_coefficients(mag, H)), forms.lorentz_local(tu, th, cell_coefficients(mag, H), 1.3),
                       atol=1e-13)


def test_context_validation():
    with pytest.raises(ValueError):
        make_context(2, nu=0.0)
    other = make_context(3)
    with pytest.raises(ValueError):
        forms.FormContext(build_rect_mesh(2, 2), other.velocity, other.pressure, other.magnetic)


def test_coo_dump(tmp_path, ctx):
    M = forms.assemble_mass(ctx, "p")
    path = tmp_path / "m.txt"
    write_coo(M, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {M.shape[0]} {M.shape[1]} {M.matrix.nnz}"
    r, c, v = lines[1].split()
    assert float(v) == M.matrix[int(r), int(c)]
