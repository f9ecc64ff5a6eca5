"""Benchmark experiments: Hessian accuracy on the cube, EOC table, spectrum."""

import csv
import io

import numpy as np

from .assembly import assemble_load, quadrature_points
from .config import RunConfig
from .driver import initial_state, nash_hormander_step, radial_reference, sphere_model
from .field import FdConfig, StencilFrame, SurfaceField, fd_hessian, hessian_error
from .mesh import SurfaceMap, build_cube_surface, build_icosphere, discontinuous_layout, p2_dof_layout, triangle_frame
from .smoother import assemble_laplace_beltrami, solve_eigenbasis
from .solvers import assemble_system, solve_dirichlet

CUBE_POINT = np.array([1.0, 1.0 / 3.0, 1.0 / 3.0])
EOC_POINT = np.array([0.0, 0.0, 2.0])


def exact_hessian(x):
    """Hessian of 1/|x|: 3 x x^T / |x|^5 - I / |x|^3."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x)
    return 3.0 * np.outer(x, x) / r ** 5 - np.eye(3) / r ** 3


def exact_gradient(points):
    """Gradient of 1/|x| at an (n, 3) array of points."""
    points = np.atleast_2d(points)
    return -points / np.linalg.norm(points, axis=1, keepdims=True) ** 3


def layout_for(mesh, degree):
    """Continuous P2 for degree 2, discontinuous P0 / P1 otherwise."""
    if degree == 2:
        return p2_dof_layout(mesh)
    if degree in (0, 1):
        return discontinuous_layout(mesh, degree)
    raise ValueError(f"polynomial degree must be 0, 1 or 2, got {degree}")


def containing_facet(smap, x, tol=1e-12):
    """Index of the facet whose closure contains x (nearest plane first)."""
    c = smap.corners()
    n, _ = smap.normals_areas()
    dist = np.abs(np.einsum("fd,fd->f", n, x - c[:, 0]))
    for f in np.argsort(dist, kind="stable"):
        if dist[f] > tol:
            break
        e1, e2 = c[f, 1] - c[f, 0], c[f, 2] - c[f, 0]
        G = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        s, t = np.linalg.solve(G, [e1 @ (x - c[f, 0]), e2 @ (x - c[f, 0])])
        if s >= -tol and t >= -tol and s + t <= 1 + tol:
            return int(f)
    raise ValueError(f"point {x} lies on no facet")


def cube_dirichlet_field(level, degree, config=RunConfig()):
    """Single-layer field of the exterior cube problem with data 1/|x|."""
    mesh = build_cube_surface(level)
    smap = SurfaceMap.from_mesh(mesh)
    layout = layout_for(mesh, degree)
    settings = config.quadrature
    system = assemble_system(smap, layout, settings=settings)
    pts = quadrature_points(smap, settings)
    data = 1.0 / np.linalg.norm(pts, axis=2)
    sol = solve_dirichlet(system, assemble_load(smap, layout, data, settings))
    return SurfaceField(smap, layout, sol.total_density(system.side_coefficients)), layout.dof_count


def hessian_at(field, x, fd=FdConfig()):
    """FD Hessian of a field at a surface point, in the frame of its facet."""
    frame = triangle_frame(field.smap, containing_facet(field.smap, x))
    gradient = lambda pts: field.evaluate(pts, groups=np.zeros(len(pts), dtype=np.int64), check_inside=False)[1]
    return fd_hessian(gradient, x, frame, fd)


def hessian_bench(levels=(0, 1, 2, 3), degrees=(0, 1, 2), config=RunConfig(), point=CUBE_POINT):
    """Rows (p, level, dofs, error) of the FD Hessian error at ``point``."""
    H_exact = exact_hessian(point)
    rows = []
    for p in degrees:
        for level in levels:
            field, dofs = cube_dirichlet_field(level, p, config)
            rows.append(dict(p=p, level=level, dofs=dofs,
                             error=hessian_error(hessian_at(field, point, config.fd), H_exact)))
    return rows


def analytic_hessian_error(point=CUBE_POINT, fd=FdConfig()):
    """FD Hessian error with the exact gradient of 1/|x| (no BEM error)."""
    n = np.array([1.0, 0.0, 0.0])
    frame = frame_with_normal(n)
    return hessian_error(fd_hessian(exact_gradient, point, frame, fd), exact_hessian(point))


def frame_with_normal(normal):
    """Orthonormal stencil frame with the given normal."""
    normal = np.asarray(normal, dtype=float) / np.linalg.norm(normal)
    helper = np.eye(3)[np.argmin(np.abs(normal))]
    t1 = np.cross(normal, helper)
    t1 /= np.linalg.norm(t1)
    return StencilFrame(normal, t1, np.cross(normal, t1))


def eoc_table(levels=(0, 1, 2, 3), iterations=3, config=RunConfig(), point=EOC_POINT):
    """Pointwise errors of the linearized solutions u_m at ``point``.

    For every level the iteration is run for ``iterations`` steps; u_m(q)
    is compared with the radial reference iteration.  Returns rows
    (iteration, level, dofs, value, exact, error, eoc, eoc_dof): eoc is
    log2 of the error ratio to the previous level, eoc_dof the same ratio
    per logarithm of the dof ratio.
    """
    damping = None
    if config.smoother and config.vector_smoothing == "componentwise":
        damping = lambda r, theta: np.exp(-(2.0 / (r * r)) ** config.smoother_power / theta)
    ref = radial_reference(iterations, config.theta0, config.kappa, config.target_radius, config.transport, damping)
    exact = [row["c"] / np.linalg.norm(point) for row in ref]
    values, dofs = {}, {}
    for level in levels:
        data = sphere_model(level, config.target_radius)
        dofs[level] = p2_dof_layout(data.phi0.base).dof_count
        state = initial_state(data, config)
        for m in range(iterations):
            diag = nash_hormander_step(state, config, data.phi0, probes=point)
            values[m, level] = float(diag["u_probe"][0])
    rows = []
    for m in range(iterations):
        prev = None
        for level in levels:
            err = abs(values[m, level] - exact[m])
            eoc = eoc_dof = np.nan
            if prev is not None and err > 0:
                eoc = np.log(prev[1] / err) / np.log(2.0)
                eoc_dof = np.log(prev[1] / err) / np.log(dofs[level] / dofs[prev[0]])
            rows.append(dict(iteration=m, level=level, dofs=dofs[level], value=values[m, level], exact=exact[m],
                             error=err, eoc=eoc, eoc_dof=eoc_dof))
            prev = (level, err)
    return rows


def eigenvalues(level, modes=None, shape="icosphere"):
    mesh = build_icosphere(level) if shape == "icosphere" else build_cube_surface(level)
    basis = solve_eigenbasis(assemble_laplace_beltrami(SurfaceMap.from_mesh(mesh)), modes)
    return [dict(j=j, lambda_j=float(lam)) for j, lam in enumerate(basis.eigenvalues)]


def rows_to_csv(rows, columns, echo=(), path=None):
    """CSV text with a ``# key=value`` comment block; floats written with repr."""
    buf = io.StringIO()
    for line in echo:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(row[c])) if isinstance(row[c], (float, np.floating)) else row[c]
                         for c in columns])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
