import numpy as np
import pytest
from scipy.integrate import dblquad

from molodensky_bem.assembly import (DEFAULT_QUADRATURE, assemble_aux_and_constraints, assemble_load, assemble_mass,
                                     assemble_oblique, assemble_slp, assemble_slp_and_oblique, dump_matrix,
                                     load_matrix_dump, quadrature_points)
from molodensky_bem.kernels import slp_panel
from molodensky_bem.mesh import SurfaceMap, build_icosphere, discontinuous_layout, p2_dof_layout

CONST = np.array([1.0, 0, 0, 0, 0, 0])


@pytest.fixture(scope="module")
def p0_level0():
    mesh = build_icosphere(0)
    smap = SurfaceMap.from_mesh(mesh)
    layout = discontinuous_layout(mesh, 0)
    h = 0.5 * smap.centroids() + np.array([0.05, -0.1, 0.02])
    S, B = assemble_slp_and_oblique(smap, layout, h)
    return smap, h, S, B


def pair_oracle(smap, f, g, h=None):
    """int_f (V 1_g)(x) dx, or int_f h . grad(V 1_g)(x) dx (exterior trace), by adaptive quadrature."""
    c = smap.corners()
    p0, e1, e2 = c[f, 0], c[f, 1] - c[f, 0], c[f, 2] - c[f, 0]
    jac = np.linalg.norm(np.cross(e1, e2))

    def integrand(t, s):
        val, grad = slp_panel(p0 + s * e1 + t * e2, c[g], CONST, side=1)
        return jac * (val if h is None else h @ grad)

    return dblquad(integrand, 0, 1, 0, lambda s: 1 - s, epsabs=1e-12, epsrel=1e-10)[0]


def neighbours(smap):
    tris = smap.triangles
    shared = np.array([[len(set(tris[0]) & set(t)) for t in tris]])[0]
    return {k: int(np.flatnonzero(shared == k)[0]) for k in (3, 2, 1, 0)}


@pytest.mark.parametrize("kind", [3, 2, 1, 0])
def test_slp_entries_match_oracle(p0_level0, kind):
    smap, _, S, _ = p0_level0
    g = neighbours(smap)[kind]
    ref = -pair_oracle(smap, 0, g)
    assert abs(S[0, g] - ref) < 1e-8 * abs(ref)


@pytest.mark.parametrize("kind", [3, 2, 1, 0])
def test_oblique_entries_match_oracle(p0_level0, kind):
    smap, h, S, B = p0_level0
    g = neighbours(smap)[kind]
    ref = -S[0, g] + pair_oracle(smap, 0, g, h[0])
    # edge neighbours: the gradient trace is log-singular along the shared edge
    tol = 1e-5 if kind == 2 else 1e-8
    assert abs(B[0, g] - ref) < tol * np.abs(B).max()


def test_slp_is_symmetric_positive_definite():
    mesh = build_icosphere(1)
    S = assemble_slp(SurfaceMap.from_mesh(mesh), p2_dof_layout(mesh))
    assert np.allclose(S, S.T, atol=0)
    assert np.linalg.eigvalsh(S).min() > 0


def test_oblique_sphere_identity_converges():
    # B 1 = -1/2 on the unit sphere with h = x/2; compare the Galerkin actions
    errs = []
    for level in (1, 2, 3):
        mesh = build_icosphere(level)
        smap = SurfaceMap.from_mesh(mesh)
        layout = p2_dof_layout(mesh)
        ones = np.ones(layout.dof_count)
        B1 = assemble_oblique(smap, layout, 0.5 * smap.centroids()) @ ones
        M1 = assemble_mass(smap, layout) @ ones
        errs.append(np.linalg.norm(B1 + 0.5 * M1) / np.linalg.norm(0.5 * M1))
    assert errs[1] <= 0.03
    assert errs[0] > errs[1] > errs[2]


def test_oblique_switch_and_rotation():
    mesh = build_icosphere(1)
    smap = SurfaceMap.from_mesh(mesh)
    layout = p2_dof_layout(mesh)
    h = 0.5 * smap.centroids()
    S = assemble_slp(smap, layout)
    assert np.array_equal(assemble_oblique(smap, layout, h, slp=S, include_trace=False), -S)
    B = assemble_oblique(smap, layout, h, slp=S)
    c, s = np.cos(0.7), np.sin(0.7)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]) @ np.array([[1, 0, 0], [0, c, s], [0, -s, c]])
    rotated = SurfaceMap(smap.base, smap.positions @ R.T, smap.area_floor)
    assert np.abs(assemble_oblique(rotated, layout, h @ R.T) - B).max() < 1e-10 * np.abs(B).max()


def test_aux_columns_are_odd():
    mesh = build_icosphere(1)
    smap = SurfaceMap.from_mesh(mesh)
    layout = p2_dof_layout(mesh)
    aux, _ = assemble_aux_and_constraints(smap, layout, -assemble_slp(smap, layout))
    flipped = SurfaceMap(smap.base, -smap.positions, smap.area_floor)
    aux_f, _ = assemble_aux_and_constraints(flipped, layout, -assemble_slp(flipped, layout))
    assert np.abs(aux_f + aux).max() < 1e-10 * np.abs(aux).max()


def test_oblique_of_constant_on_unit_sphere():
    # V 1 = -1 and h . grad V 1 = 1/2 on the unit sphere for h = x/2, so B 1 = -1/2
    mesh = build_icosphere(2)
    smap = SurfaceMap.from_mesh(mesh)
    layout = p2_dof_layout(mesh)
    B = assemble_oblique(smap, layout, 0.5 * smap.centroids())
    M = assemble_mass(smap, layout)
    ones = np.ones(layout.dof_count)
    assert ones @ B @ ones / (ones @ M @ ones) == pytest.approx(-0.5, rel=0.02)


def test_shared_pass_equals_separate_assembly():
    mesh = build_icosphere(1)
    smap = SurfaceMap.from_mesh(mesh)
    layout = p2_dof_layout(mesh)
    h = 0.5 * smap.centroids()
    S, B = assemble_slp_and_oblique(smap, layout, h)
    assert np.allclose(S, assemble_slp(smap, layout), rtol=0, atol=1e-14)
    assert np.allclose(B, assemble_oblique(smap, layout, h, slp=S), rtol=0, atol=1e-14)


def test_raised_quadrature_changes_little():
    mesh = build_icosphere(1)
    smap = SurfaceMap.from_mesh(mesh)
    layout = p2_dof_layout(mesh)
    S = assemble_slp(smap, layout)
    S2 = assemble_slp(smap, layout, DEFAULT_QUADRATURE.raised())
    assert np.abs(S - S2).max() < 1e-8 * np.abs(S).max()


def test_load_and_mass_integrate_constants():
    mesh = build_icosphere(2)
    smap = SurfaceMap.from_mesh(mesh).scaled(1.3)
    layout = p2_dof_layout(mesh)
    area = smap.normals_areas()[1].sum()
    ones = np.ones((smap.n_triangles, quadrature_points(smap).shape[1]))
    assert abs(assemble_load(smap, layout, ones).sum() - area) < 1e-12 * area
    assert abs(assemble_mass(smap, layout).sum() - area) < 1e-12 * area


def test_constraint_rows_integrate_side_functions():
    mesh = build_icosphere(1)
    smap = SurfaceMap.from_mesh(mesh)
    layout = p2_dof_layout(mesh)
    _, cons = assemble_aux_and_constraints(smap, layout, np.eye(layout.dof_count))
    # odd functions integrate to zero over a centrally symmetric surface
    assert np.abs(cons.sum(axis=1)).max() < 1e-13
    pts = quadrature_points(smap)
    x = pts[..., 0] / np.linalg.norm(pts, axis=2) ** 3
    first = x * pts[..., 0]  # int x_1 A_1 ~ int x^2/|x|^3
    assert cons[0] @ layout.interpolate(smap, lambda p: p[:, 0]) == pytest.approx(
        assemble_load(smap, layout, first).sum(), rel=1e-3)


def test_oblique_field_validation():
    mesh = build_icosphere(0)
    smap = SurfaceMap.from_mesh(mesh)
    with pytest.raises(ValueError):
        assemble_oblique(smap, p2_dof_layout(mesh), np.zeros((smap.n_triangles, 3)))
    with pytest.raises(ValueError):
        assemble_oblique(smap, p2_dof_layout(mesh), np.ones((3, 3)))


def test_matrix_dump_roundtrip(tmp_path):
    M = np.random.default_rng(1).standard_normal((5, 7))
    dump_matrix(tmp_path / "m.bin", M)
    assert np.array_equal(load_matrix_dump(tmp_path / "m.bin"), M)
    raw = np.fromfile(tmp_path / "m.bin", dtype="<i8", count=2)
    assert list(raw) == [5, 7]
