import math

import mpmath
import numpy as np
import pytest
from scipy import integrate

from cnlf_mhd.acceptance import mhd_residual
from cnlf_mhd.mesh import BoundaryTag
from cnlf_mhd.problems import (BoundaryRecipe, ErrorReport, HartmannProblem, ManufacturedSolution, StudyTable,
                               convergence_study, error_norms, hartmann_boundary, hartmann_number,
                               hartmann_problem, hartmann_profiles, manufactured_forcing, observed_order,
                               pressure_error)
from cnlf_mhd.stepper import SchemeConfig

from conftest import make_context


def test_observed_order_reference_pair():
    assert observed_order(0.00427603, 0.00106969, 1 / 8, 1 / 16) == pytest.approx(1.99908, abs=5e-6)


def test_hartmann_number():
    assert hartmann_number(1, 1, 1) == 1.0
    assert hartmann_number(0.1, 1, 10) == pytest.approx(10.0)


def test_hartmann_profile_values():
    u, h = hartmann_profiles(np.array([-1.0, 0.0, 1.0]), 1.0, 1.0, 1.0, 1.0)
    assert np.allclose(u[[0, 2]], 0, atol=1e-15)
    assert h[1] == 0 and np.allclose(h[[0, 2]], 0, atol=1e-15)
    mpmath.mp.dps = 30
    ref = (1 / mpmath.tanh(1)) * (1 - 1 / mpmath.cosh(1))
    assert u[1] == pytest.approx(float(ref), rel=1e-14)
    assert round(u[1], 5) == 0.46212
    with pytest.raises(ValueError):
        hartmann_profiles(0.0, 1, 1, 1, 0.0)


def test_forcing_at_quarter_period():
    x, y, t = 0.3, 0.7, math.pi / 2
    f, g = manufactured_forcing((x, y), t, 1.0, 1.3, 1.0)
    assert np.allclose(f, [-(y + y**4), -(x + x**2)], atol=1e-14)
    assert np.allclose(g, [-1.3 * (math.sin(y) + y), -1.3 * (math.sin(x) + x**2)], atol=1e-14)
    with pytest.raises(ValueError):
        manufactured_forcing((x, y), t, 0.0, 1, 1)


@pytest.mark.parametrize("params", [(1, 1, 1), (0.01, 1, 100), (0.3, 2.0, 5.0)])
def test_forcing_matches_finite_difference_oracle(params):
    nu, mu, sigma = params
    rng = np.random.default_rng(11)
    ms = ManufacturedSolution(nu, mu, sigma)
    x, y = rng.random(20), rng.random(20)
    for t in (0.0, 0.6):
        f, g = mhd_residual(ms.velocity, ms.pressure, ms.magnetic, x, y, t, nu, mu, sigma)
        assert np.abs(f - ms.forcing_f(x, y, t)).max() <= 1e-6
        assert np.abs(g - ms.forcing_g(x, y, t)).max() <= 1e-6


def test_oracle_detects_a_sign_slip():
    ms = ManufacturedSolution()
    x, y = np.array([0.2, 0.8]), np.array([0.5, 0.3])
    f, _ = mhd_residual(ms.velocity, ms.pressure, lambda x, y, t: -ms.magnetic(x, y, t) * [[1], [-1]],
                        x, y, 0.4, 1, 1, 1)
    assert np.abs(f - ms.forcing_f(x, y, 0.4)).max() > 1e-2


def test_magnetic_forcing_is_solenoidal():
    ms = ManufacturedSolution(0.5, 1.2, 3.0)
    rng = np.random.default_rng(3)
    x, y, t = rng.random(30), rng.random(30), rng.random(30)
    h = 1e-5
    div = ((ms.forcing_g(x + h, y, t)[0] - ms.forcing_g(x - h, y, t)[0])
           + (ms.forcing_g(x, y + h, t)[1] - ms.forcing_g(x, y - h, t)[1])) / (2 * h)
    assert np.abs(div).max() <= 1e-6


def test_hartmann_solution_is_steady():
    hp = HartmannProblem(0.1, 1.0, 10.0, 2.0)
    rng = np.random.default_rng(4)
    x, y = 10 * rng.random(40), rng.uniform(-0.95, 0.95, 40)
    f, g = mhd_residual(lambda x, y, t: hp.velocity(x, y), lambda x, y, t: hp.pressure(x, y),
                        lambda x, y, t: hp.magnetic(x, y), x, y, 0.0, hp.nu, hp.mu, hp.sigma, steady=True)
    assert np.abs(f).max() <= 1e-5 and np.abs(g).max() <= 1e-5


def test_hartmann_boundary_recipe():
    hp = HartmannProblem()
    bc = hartmann_boundary(hp)
    walls = {BoundaryTag.BOTTOM, BoundaryTag.TOP}
    assert bc.velocity_tags == (walls, walls)
    assert bc.magnetic_tags == (walls, {BoundaryTag.LEFT, BoundaryTag.RIGHT})
    assert not bc.zero_mean_pressure
    vals = bc.magnetic_values(np.array([0.0, 10.0]), np.array([-1.0, 1.0]), 0.0)
    assert np.allclose(vals, [[0, 0], [1, 1]], atol=1e-15)


def test_recipe_rejects_clashing_tags():
    with pytest.raises(ValueError):
        BoundaryRecipe(traction=lambda x, y, t: x, traction_tags=frozenset({BoundaryTag.LEFT}))
    with pytest.raises(ValueError):
        BoundaryRecipe(velocity_tags=(frozenset(), frozenset()), traction_tags=frozenset({BoundaryTag.LEFT}))


class LinearExact:
    """Fields that the discrete spaces represent exactly."""

    def velocity(self, x, y, t):
        return np.array([1 + 2 * x - y, 3 * y + 0 * x])

    def velocity_grad(self, x, y, t):
        z = 0 * x
        return np.array([[2 + z, -1 + z], [z, 3 + z]])

    def magnetic(self, x, y, t):
        return np.array([x + y, 0.5 - x])

    def magnetic_grad(self, x, y, t):
        z = 0 * x
        return np.array([[1 + z, 1 + z], [-1 + z, z]])

    def pressure(self, x, y, t):
        return x - 2 * y


class _State:
    def __init__(self, u, p, H):
        self.u, self.p, self.H = u, p, H


def test_error_norms_vanish_on_interpolated_fields():
    ctx = make_context(3)
    ex = LinearExact()
    u = ctx.velocity.interpolate(ctx.mesh, ex.velocity, 0.0)
    H = ctx.magnetic.interpolate(ctx.mesh, ex.magnetic, 0.0)
    p = ctx.pressure.interpolate(ctx.mesh, ex.pressure, 0.0)
    rep = error_norms(ctx, _State(u, p, H), ex, t=0.0, zero_mean=False)
    assert max(rep.as_tuple()) <= 1e-12


def test_error_of_zero_field_is_the_exact_norm():
    ctx = make_context(4)
    ms = ManufacturedSolution()
    zero = _State(np.zeros(ctx.velocity.num_global), np.zeros(ctx.pressure.num_global),
                  np.zeros(ctx.magnetic.num_global))
    rep = error_norms(ctx, zero, ms, t=0.0)
    ref, _ = integrate.dblquad(lambda y, x: np.sum(ms.velocity(x, y, 0.0) ** 2), 0, 1, 0, 1, epsabs=1e-14)
    assert rep.u_l2 == pytest.approx(math.sqrt(ref), rel=1e-10)


def test_pressure_error_ignores_constant_shift():
    ctx = make_context(4)
    ms = ManufacturedSolution()
    p = ctx.pressure.interpolate(ctx.mesh, ms.pressure, 0.2)
    e0 = pressure_error(ctx, p, ms.pressure, 0.2)
    e1 = pressure_error(ctx, p + 3.7, ms.pressure, 0.2)
    assert e0 == pytest.approx(e1, rel=1e-10)
    assert pressure_error(ctx, p + 3.7, ms.pressure, 0.2, zero_mean=False) > 3


def test_study_single_resolution_and_validation():
    cfg = SchemeConfig(dt=0.025, T=0.1, dt_over_h=0.1)
    table = convergence_study(cfg, [4])
    assert len(table.errors) == 1 and table.orders == [] and table.complete
    with pytest.raises(ValueError):
        convergence_study(cfg, [8, 4])


def test_study_csv_layout(tmp_path):
    errs = [ErrorReport(1e-2, 1e-1, 2e-2, 3e-3, 4e-2), ErrorReport(2.5e-3, 5e-2, 6e-3, 7e-4, 2e-2)]
    table = StudyTable([8, 16], errs, [tuple(observed_order(a, b, 1 / 8, 1 / 16)
                                             for a, b in zip(errs[0].as_tuple(), errs[1].as_tuple()))])
    path = tmp_path / "t.csv"
    table.write_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "1/h,||u_h-u||_0,||grad(u_h-u)||_0,||p_h^1-p||_0,||B_h-B||_0,||grad(B_h-B)||_0"
    assert rows[3].startswith("1/h,u_order_L2")
    assert rows[4].startswith("16,2.000000")
    assert len(rows) == 5


def test_hartmann_problem_data():
    prob = hartmann_problem()
    assert prob.rect.x1 == 10 and prob.rect.y0 == -1
    assert not prob.constrain_initial_magnetic
    assert np.all(prob.u0(np.array([1.0]), np.array([0.0])) == 0)
