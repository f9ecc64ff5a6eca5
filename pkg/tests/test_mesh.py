import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from molodensky_bem.mesh import (MAX_ICOSPHERE_LEVEL, DegenerateSurfaceError, SurfaceMap, TriangleMesh,
                                 build_cube_surface, build_icosphere, discontinuous_layout, p1_gradients,
                                 p2_dof_layout, read_mesh, triangle_frame, update_vertices, write_mesh)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_icosphere_counts_and_invariants(level):
    mesh = build_icosphere(level)
    assert mesh.n_triangles == 20 * 4 ** level
    assert mesh.n_vertices == 10 * 4 ** level + 2
    assert mesh.euler_characteristic == 2
    assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-14)
    # every edge is shared by two triangles
    assert np.all(mesh.edge_triangles >= 0)
    c = mesh.vertices[mesh.triangles]
    normals = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    assert np.all(np.einsum("fd,fd->f", normals, c.mean(axis=1)) > 0)


def test_level_triangle_counts():
    assert build_icosphere(2).n_triangles == 320
    assert build_icosphere(3).n_triangles == 1280


def test_level_guard():
    with pytest.raises(ValueError, match="level"):
        build_icosphere(MAX_ICOSPHERE_LEVEL + 1)


@pytest.mark.parametrize("level", [0, 1, 2])
def test_cube_surface(level):
    mesh = build_cube_surface(level)
    smap = SurfaceMap.from_mesh(mesh)
    _, areas = smap.normals_areas()
    assert abs(areas.sum() - 24.0) < 1e-12
    assert mesh.euler_characteristic == 2
    assert np.allclose(np.abs(mesh.vertices).max(axis=1), 1.0)
    n, _ = smap.normals_areas()
    assert np.all(np.einsum("fd,fd->f", n, smap.centroids()) > 0)


@pytest.mark.parametrize("level,dofs", [(0, 42), (1, 162), (2, 642), (3, 2562)])
def test_p2_dof_count(level, dofs):
    mesh = build_icosphere(level)
    layout = p2_dof_layout(mesh)
    assert layout.dof_count == mesh.n_vertices + mesh.n_edges == dofs
    # vertex dofs shared between the triangles around a vertex
    assert len(np.unique(layout.local_to_global)) == dofs


def test_p2_basis_is_nodal_and_sums_to_one():
    layout = p2_dof_layout(build_icosphere(0))
    vals = layout.basis_values(layout.nodes)
    assert np.allclose(vals, np.eye(6), atol=1e-14)
    pts = np.random.default_rng(0).random((20, 2)) * 0.5
    assert np.allclose(layout.basis_values(pts).sum(axis=1), 1.0)


def test_p2_interpolation_is_exact_for_quadratics():
    mesh = build_icosphere(1)
    smap = SurfaceMap.from_mesh(mesh)
    layout = p2_dof_layout(mesh)
    f = lambda p: 1 + p[:, 0] - 2 * p[:, 1] * p[:, 2] + p[:, 2] ** 2
    coef = layout.interpolate(smap, f)
    pts = np.array([[0.2, 0.3], [0.6, 0.1]])
    bary = np.column_stack([1 - pts.sum(axis=1), pts])
    images = smap.points_at(bary)  # (F, 2, 3)
    vals = np.einsum("fb,qb->fq", coef[layout.local_to_global], layout.basis_values(pts))
    # the surface is piecewise flat, so quadratics in space are quadratics per facet
    assert np.allclose(vals, f(images.reshape(-1, 3)).reshape(vals.shape), atol=1e-12)


def test_discontinuous_layouts():
    mesh = build_icosphere(1)
    assert discontinuous_layout(mesh, 0).dof_count == 80
    assert discontinuous_layout(mesh, 1).dof_count == 240
    with pytest.raises(ValueError):
        discontinuous_layout(mesh, 3)


def test_triangle_frame_orthonormal():
    smap = SurfaceMap.from_mesh(build_icosphere(1))
    for f in (0, 7, 79):
        fr = triangle_frame(smap, f)
        M = fr.matrix
        assert np.allclose(M @ M.T, np.eye(3), atol=1e-14)
        assert fr.normal @ fr.centroid > 0


def test_p1_gradients_reproduce_linear_functions():
    smap = SurfaceMap.from_mesh(build_icosphere(1))
    a = np.array([0.3, -1.2, 0.7])
    vals = smap.positions @ a
    grads = np.einsum("fk,fkd->fd", vals[smap.triangles], p1_gradients(smap))
    n, _ = smap.normals_areas()
    tangential = a - (n @ a)[:, None] * n
    assert np.allclose(grads, tangential, atol=1e-13)


def test_update_keeps_connectivity_and_guards_degeneracy():
    smap = SurfaceMap.from_mesh(build_icosphere(1))
    new = update_vertices(smap, smap.positions, 0.1)
    assert new.base is smap.base
    assert np.allclose(np.linalg.norm(new.positions, axis=1), 1.1)
    # move the corners of triangle 0 onto its first corner
    tri = smap.triangles[0]
    collapse = np.zeros_like(smap.positions)
    collapse[tri] = smap.positions[tri[0]] - smap.positions[tri]
    with pytest.raises(DegenerateSurfaceError):
        update_vertices(smap, collapse, 1.0)


def test_mesh_roundtrip(tmp_path):
    mesh = build_cube_surface(1)
    path = tmp_path / "cube.txt"
    write_mesh(path, mesh)
    back = read_mesh(path)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.vertices, mesh.vertices)


def test_open_surface_is_rejected():
    mesh = build_icosphere(0)
    with pytest.raises(ValueError):
        TriangleMesh(mesh.vertices, mesh.triangles[:-1])


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 2.0))
def test_scaling_scales_areas(factor):
    smap = SurfaceMap.from_mesh(build_icosphere(1))
    _, a0 = smap.normals_areas()
    _, a1 = smap.scaled(factor).normals_areas()
    assert np.allclose(a1, factor ** 2 * a0)
