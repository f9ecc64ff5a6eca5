import warnings

import numpy as np
import pytest

from molodensky_bem.experiments import CUBE_POINT, analytic_hessian_error, exact_gradient, exact_hessian, frame_with_normal
from molodensky_bem.field import (FdConfig, FdInstabilityWarning, MarussiError, OutsideDomainError, StencilFrame,
                                  SurfaceField, eval_field, fd_hessian, gravity_frame, hessian_error, marussi_frame,
                                  p1_projection, project_trace, projected_hessian)
from molodensky_bem.mesh import SurfaceMap, build_icosphere
from molodensky_bem.quadrature import composite_rule


@pytest.fixture(scope="module")
def dirichlet_field(sphere_dirichlet_l2):
    smap, layout, system, sol = sphere_dirichlet_l2
    return SurfaceField(smap, layout, sol.total_density(system.side_coefficients))


@pytest.fixture(scope="module")
def frame_l2(dirichlet_field):
    return gravity_frame(dirichlet_field)


def test_zero_density_gives_zero_field(sphere_dirichlet_l2):
    smap, layout, *_ = sphere_dirichlet_l2
    u, g = eval_field(np.zeros(layout.dof_count), smap, layout, [0.0, 2.0, 0.0])
    assert u == 0 and not g.any()


def test_exterior_potential_of_constant_data(dirichlet_field):
    x = np.array([[0.0, 0.0, 2.0], [2.0, 0.0, 0.0], [1.2, -1.2, 0.9], [0.0, 3.0, 0.0]])
    u, g = dirichlet_field.evaluate(x)
    r = np.linalg.norm(x, axis=1)
    assert np.allclose(u, 1 / r, rtol=0.02)
    assert np.all(np.linalg.norm(g - exact_gradient(x), axis=1) <= 0.02 / r ** 2)


def test_far_field_has_no_dipole(dirichlet_field):
    x = np.array([[600.0, -500.0, 550.0]])
    u1, _ = dirichlet_field.evaluate(x)
    u2, _ = dirichlet_field.evaluate(2 * x)
    r = np.linalg.norm(x)
    assert abs(r * r * (2 * u2[0] - u1[0])) <= 1e-6 * abs(r * u1[0])


def test_points_inside_or_on_edges_are_refused(dirichlet_field):
    with pytest.raises(OutsideDomainError):
        dirichlet_field.evaluate(np.array([[0.1, 0.2, 0.0]]))
    v = dirichlet_field.smap.positions[0]
    with pytest.raises(ValueError):
        dirichlet_field.evaluate(v[None, :])
    with pytest.raises(ValueError):
        eval_field(dirichlet_field.coefficients, dirichlet_field.smap, dirichlet_field.layout, v, side="inside")


def test_exterior_trace_is_continuous(dirichlet_field):
    smap = dirichlet_field.smap
    n, _ = smap.normals_areas()
    x = smap.centroids()[7]
    u0, g0 = dirichlet_field.evaluate(x[None, :])
    gaps = []
    for d in (1e-3, 1e-4, 1e-5):
        u, g = dirichlet_field.evaluate((x + d * n[7])[None, :])
        gaps.append(np.abs(g - g0).max() + abs(u[0] - u0[0]))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_exact_hessian_entries():
    # |x|^2 = 11/9, so 3 x x^T / |x|^5 - I / |x|^3 by hand
    r2 = 11.0 / 9.0
    H = exact_hessian(CUBE_POINT)
    assert H[0, 0] == pytest.approx(3.0 / r2 ** 2.5 - 1.0 / r2 ** 1.5)
    assert H[1, 2] == pytest.approx(3.0 / 9.0 / r2 ** 2.5)
    assert np.trace(H) == pytest.approx(0.0, abs=1e-14)


def test_analytic_gradient_fd_floor():
    assert analytic_hessian_error() <= 1e-6


def test_fd_is_second_order():
    coarse = FdConfig(2e-2, 2e-2)
    fine = FdConfig(1e-2, 1e-2)
    ratio = analytic_hessian_error(fd=coarse) / analytic_hessian_error(fd=fine)
    assert 3.5 < ratio < 4.5


def test_linear_gradient_is_reproduced():
    M = np.array([[1.0, 0.3, -0.2], [0.3, -2.0, 0.5], [-0.2, 0.5, 1.0]])
    frame = frame_with_normal([0.3, 0.9, -0.1])
    H = fd_hessian(lambda p: p @ M.T, np.array([0.4, 1.0, -0.3]), frame)
    assert np.abs(H - M).max() < 1e-9


def test_tiny_steps_warn():
    frame = frame_with_normal([1.0, 0.0, 0.0])
    with pytest.warns(FdInstabilityWarning):
        fd_hessian(exact_gradient, CUBE_POINT, frame, FdConfig(1e-15, 1e-15))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fd_hessian(exact_gradient, CUBE_POINT, frame)


def test_non_orthogonal_frame():
    frame = StencilFrame(np.array([1.0, 0, 0]), np.array([0.6, 0.8, 0]), np.array([0, 0.6, 0.8]))
    H = fd_hessian(exact_gradient, CUBE_POINT, frame, FdConfig(1e-3, 1e-3))
    assert hessian_error(H, exact_hessian(CUBE_POINT)) < 1e-4


def test_hessian_error_metric():
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((2, 3, 3))
    direct = 0.0
    for i in range(3):
        for j in range(3):
            direct += (A[i, j] - B[i, j]) ** 2
    assert hessian_error(A, B) == pytest.approx(direct ** 0.5, rel=1e-15)
    assert hessian_error(A, A) == 0
    E = np.zeros((3, 3))
    E[1, 2] = -0.25
    assert hessian_error(B + E, B) == pytest.approx(0.25)


def test_fd_config_positive():
    with pytest.raises(ValueError):
        FdConfig(0.0, 1e-5)


def test_projected_hessian_of_linear_fields():
    # symmetric trace-free M: g = M x is the gradient of a harmonic quadratic
    M = np.array([[1.0, 0.3, -0.2], [0.3, -2.0, 0.5], [-0.2, 0.5, 1.0]])
    errs = []
    for level in (1, 2, 3):
        smap = SurfaceMap.from_mesh(build_icosphere(level)).scaled(1.3)
        H, _ = projected_hessian(smap, smap.positions @ M)
        errs.append(np.abs(H - M).max())
    # vertex tangents differ from facet planes by O(h); the averaged error is O(h^2)
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5
    assert errs[2] < 0.01


def test_p1_projection_reproduces_linear_samples():
    smap = SurfaceMap.from_mesh(build_icosphere(1))
    rule = composite_rule(5)
    pts = smap.points_at(rule.barycentric)
    vals = p1_projection(smap, pts @ np.array([1.0, -2.0, 0.5]), rule)
    assert np.allclose(vals, smap.positions @ np.array([1.0, -2.0, 0.5]), atol=1e-12)


def test_gravity_frame_on_sphere(frame_l2, dirichlet_field):
    x = dirichlet_field.smap.positions
    assert np.allclose(frame_l2.g, exact_gradient(x), rtol=0, atol=0.025 / 1.21)
    assert np.allclose(frame_l2.det, 2 / 1.1 ** 9, rtol=0.1)
    H = frame_l2.grad_g
    scale = np.linalg.norm(H, axis=(1, 2))
    assert np.abs(H - H.transpose(0, 2, 1)).max() <= 1e-3 * scale.min()
    assert np.abs(np.trace(H, axis1=1, axis2=2)).max() <= 1e-2 * scale.min()


def test_trace_projection_shapes(dirichlet_field):
    proj = project_trace(dirichlet_field)
    V = dirichlet_field.smap.n_vertices
    assert proj.u.shape == (V,) and proj.g.shape == (V, 3)
    assert np.allclose(proj.u, 1 / 1.1, rtol=0.01)


def test_marussi_violation_names_vertex(frame_l2):
    H = frame_l2.grad_g.copy()
    H[5] = 0.0
    with pytest.raises(MarussiError, match="vertex 5"):
        marussi_frame(frame_l2.g, H, frame_l2.asymmetry)


def test_other_strategies_run(dirichlet_field):
    for strategy in ("facet", "vertex"):
        frame = gravity_frame(dirichlet_field, strategy=strategy, eps_marussi=0.0)
        assert frame.g.shape == (dirichlet_field.smap.n_vertices, 3)
    with pytest.raises(ValueError):
        gravity_frame(dirichlet_field, strategy="nodes")
