"""Potential and gravity of surface densities, with finite-difference gravity gradients.

The potential of a P2 density mu on the current surface is

    u(x) = -1/(4 pi) int mu(y) / |x - y| ds_y,   g = grad u.

Panels close to an evaluation point are integrated analytically; distant
panels use a fixed quadrature rule.  The choice is made per group of
points (for instance all points of one finite-difference stencil) so that
difference quotients never mix the two treatments of one panel.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .kernels import INV_4PI, PanelGeometry, panel_eval
from .mesh import DegenerateSurfaceError, p1_gradients, triangle_frame
from .quadrature import composite_rule
from .smoother import p1_mass

EPS_MARUSSI = 1e-8


class OutsideDomainError(ValueError):
    pass


class MarussiError(RuntimeError):
    pass


class FdInstabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FdConfig:
    delta_normal: float = 1e-4
    delta_tangential: float = 1e-5

    def __post_init__(self):
        if not (self.delta_normal > 0 and self.delta_tangential > 0):
            raise ValueError("finite-difference steps must be positive")


@dataclass(frozen=True)
class EvalSettings:
    far_factor: float = 4.0  # group-to-panel distance / panel diameter beyond which quadrature is used
    far_order: int = 8


DEFAULT_EVAL = EvalSettings()


@njit(cache=True)
def _evaluate(points, group, centers, origin, frame, v2, tol, polys, centroid, diam, normal,
              far_x, far_wmu, far_w, far_factor, side):
    P = points.shape[0]
    F = origin.shape[0]
    nq = far_x.shape[1]
    u = np.zeros(P)
    g = np.zeros((P, 3))
    omega = np.zeros(P)
    vals = np.zeros(1)
    grads = np.zeros((1, 3))
    A = np.zeros(6)
    G = np.zeros((6, 3))
    cu = np.zeros(6)
    for p in range(P):
        c = centers[group[p]]
        x = points[p]
        for f in range(F):
            d = np.sqrt((c[0] - centroid[f, 0]) ** 2 + (c[1] - centroid[f, 1]) ** 2 + (c[2] - centroid[f, 2]) ** 2)
            if d > far_factor * diam[f]:
                for q in range(nq):
                    r0 = x[0] - far_x[f, q, 0]
                    r1 = x[1] - far_x[f, q, 1]
                    r2 = x[2] - far_x[f, q, 2]
                    ir = 1.0 / np.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
                    ir3 = ir * ir * ir
                    u[p] -= INV_4PI * far_wmu[f, q] * ir
                    k = INV_4PI * far_wmu[f, q] * ir3
                    g[p, 0] += k * r0
                    g[p, 1] += k * r1
                    g[p, 2] += k * r2
                    omega[p] += far_w[f, q] * (normal[f, 0] * r0 + normal[f, 1] * r1 + normal[f, 2] * r2) * ir3
            else:
                omega[p] += panel_eval(x, origin[f], frame[f], v2[f], tol[f], polys[f], side, vals, grads, A, G, cu)
                u[p] += vals[0]
                g[p, 0] += grads[0, 0]
                g[p, 1] += grads[0, 1]
                g[p, 2] += grads[0, 2]
    return u, g, omega


class SurfaceField:
    """Single-layer field of a density given by P2 (or local) coefficients."""

    def __init__(self, smap, layout, coefficients, settings=DEFAULT_EVAL):
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (layout.dof_count,):
            raise ValueError(f"expected {layout.dof_count} coefficients, got {coefficients.shape}")
        self.smap = smap
        self.layout = layout
        self.coefficients = coefficients
        self.settings = settings
        corners = smap.corners()
        local = coefficients[layout.local_to_global]  # (F, n_local)
        self.geometry = geo = PanelGeometry(corners, layout.basis)
        self._polys = np.ascontiguousarray(np.einsum("fb,fbk->fk", local, geo.polys)[:, None, :])
        rule = composite_rule(settings.far_order)
        self._far_x = np.ascontiguousarray(smap.points_at(rule.barycentric))
        w = rule.weights[None, :] * (2.0 * geo.area)[:, None]
        self._far_w = np.ascontiguousarray(w)
        self._far_wmu = np.ascontiguousarray(w * (local @ layout.basis_values(rule.points).T))

    def evaluate(self, points, side=1.0, groups=None, check_inside=True):
        """Potential and gradient at points.

        Parameters
        ----------
        points : (P, 3) array
        side : float
            +1 for the exterior trace at points lying on a panel, -1 for
            the interior one.
        groups : (P,) int array, optional
            Points sharing a group share the near/far decision per panel,
            taken at the group's mean point.
        check_inside : bool
            Raise for points inside the body (winding number test).

        Returns
        -------
        u : (P,) array
        g : (P, 3) array
        """
        points = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        if groups is None:
            groups = np.arange(len(points))
            centers = points
        else:
            groups = np.asarray(groups, dtype=np.int64)
            counts = np.bincount(groups)
            centers = np.zeros((len(counts), 3))
            np.add.at(centers, groups, points)
            centers = centers / np.maximum(counts, 1)[:, None]
        geo = self.geometry
        u, g, omega = _evaluate(points, groups, np.ascontiguousarray(centers), geo.origin, geo.frame, geo.v2,
                                geo.tol, self._polys, geo.centroid, geo.diam, geo.normal, self._far_x,
                                self._far_wmu, self._far_w, float(self.settings.far_factor), float(side))
        if check_inside:
            inside = np.flatnonzero(omega < -2.0 * np.pi)
            if inside.size:
                raise OutsideDomainError(f"point {inside[0]} lies inside the body")
        return u, g


def eval_field(coefficients, smap, layout, x, side="exterior", settings=DEFAULT_EVAL):
    """u and g = grad u of the density at x (one point or an array of points).

    ``side`` is "exterior" (exterior trace for points on the surface) or
    "off-surface" (points must lie strictly outside).
    """
    if side not in ("exterior", "off-surface"):
        raise ValueError(f"side must be 'exterior' or 'off-surface', got {side!r}")
    x = np.asarray(x, dtype=float)
    u, g = SurfaceField(smap, layout, coefficients, settings).evaluate(x.reshape(-1, 3))
    if x.ndim == 1:
        return u[0], g[0]
    return u, g


@dataclass(frozen=True)
class StencilFrame:
    """Difference directions; need not be orthogonal."""

    normal: np.ndarray
    t1: np.ndarray
    t2: np.ndarray


def stencil_points(x, frame, config=FdConfig()):
    """The 7 points x, x + dn, x + 2dn, x +- dt t1, x +- dt t2."""
    dn, dt = config.delta_normal, config.delta_tangential
    n, t1, t2 = frame.normal, frame.t1, frame.t2
    return np.array([x, x + dn * n, x + 2 * dn * n, x + dt * t1, x - dt * t1, x + dt * t2, x - dt * t2])


def hessian_from_stencil(gvals, frame, config=FdConfig(), noise=None):
    """Symmetrized Hessian from gradients at ``stencil_points``.

    Returns (H, asymmetry) with asymmetry = max |H_raw - H_raw^T|.
    """
    dn, dt = config.delta_normal, config.delta_tangential
    g0, gn1, gn2, gp1, gm1, gp2, gm2 = gvals
    d_n = (4.0 * gn1 - 3.0 * g0 - gn2) / (2.0 * dn)
    d_1 = (gp1 - gm1) / (2.0 * dt)
    d_2 = (gp2 - gm2) / (2.0 * dt)
    if noise is not None:
        diffs = np.array([np.abs(gn1 - g0).max(), np.abs(gp1 - gm1).max(), np.abs(gp2 - gm2).max()])
        if np.any(diffs < 10.0 * noise):
            warnings.warn("finite-difference step too small: differences reach the evaluation noise level",
                          FdInstabilityWarning, stacklevel=3)
    D = np.column_stack([d_n, d_1, d_2])  # directional derivatives of g
    E = np.column_stack([frame.normal, frame.t1, frame.t2])
    H = D @ np.linalg.inv(E)
    return 0.5 * (H + H.T), np.abs(H - H.T).max()


def fd_hessian(gradient, x, frame, config=FdConfig()):
    """Finite-difference Hessian from a gradient evaluator.

    ``gradient`` maps an (n, 3) array of points to (n, 3) gradients.  The
    normal derivative is one-sided (outward, second order), tangential
    derivatives are central.
    """
    x = np.asarray(x, dtype=float)
    pts = stencil_points(x, frame, config)
    gvals = np.asarray(gradient(pts), dtype=float)
    noise = 64 * np.finfo(float).eps * max(np.abs(gvals).max(), np.finfo(float).tiny)
    H, _ = hessian_from_stencil(gvals, frame, config, noise)
    return H


def hessian_error(H_approx, H_exact):
    """Frobenius norm of the difference."""
    return float(np.sqrt(np.sum((np.asarray(H_approx) - np.asarray(H_exact)) ** 2)))


@dataclass(frozen=True)
class GravityFrame:
    g: np.ndarray  # (V, 3)
    grad_g: np.ndarray  # (V, 3, 3)
    det: np.ndarray  # (V,)
    asymmetry: np.ndarray  # (V,) raw Hessian asymmetry


def _facet_stencils(smap, config):
    pts, frames = [], []
    for f in range(smap.n_triangles):
        fr = triangle_frame(smap, f)
        frames.append(fr)
        pts.append(stencil_points(fr.centroid, fr, config))
    return np.vstack(pts), frames


def facet_gravity(field, config=FdConfig()):
    """g and the FD Hessian at every facet centroid (facet frames)."""
    smap = field.smap
    pts, frames = _facet_stencils(smap, config)
    F = smap.n_triangles
    groups = np.repeat(np.arange(F), 7)
    _, g = field.evaluate(pts, groups=groups, check_inside=False)
    g = g.reshape(F, 7, 3)
    noise = 64 * np.finfo(float).eps * max(np.abs(g).max(), np.finfo(float).tiny)
    H = np.empty((F, 3, 3))
    asym = np.empty(F)
    for f in range(F):
        H[f], asym[f] = hessian_from_stencil(g[f], frames[f], config, noise)
    return g[:, 0], H, asym


def _vertex_average(smap, values):
    _, areas = smap.normals_areas()
    tris = smap.triangles
    shape = values.shape[1:]
    acc = np.zeros((smap.n_vertices,) + shape)
    wsum = np.zeros(smap.n_vertices)
    for k in range(3):
        np.add.at(acc, tris[:, k], values * areas.reshape((-1,) + (1,) * len(shape)))
        np.add.at(wsum, tris[:, k], areas)
    return acc / wsum.reshape((-1,) + (1,) * len(shape))


def vertex_frames(smap):
    """Area-averaged vertex normals with orthonormal tangents."""
    n = smap.vertex_normals()
    V = smap.n_vertices
    other = np.zeros(V, dtype=np.int64)
    tris = smap.triangles
    for k in range(3):
        other[tris[:, k]] = tris[:, (k + 1) % 3]
    e = smap.positions[other] - smap.positions
    t1 = e - np.einsum("vi,vi->v", e, n)[:, None] * n
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return n, t1, t2


def p1_projection(smap, samples, rule, consistent=True):
    """Vertex values of the P1 L2 projection of per-point facet samples.

    ``samples`` has shape (F, n_q, ...) at the points of ``rule``.  The
    default solves with the consistent P1 mass matrix; ``consistent=False``
    lumps it.
    """
    _, areas = smap.normals_areas()
    bary = rule.barycentric  # (n_q, 3)
    w = rule.weights[None, :] * (2.0 * areas)[:, None]  # (F, n_q)
    tris = smap.triangles
    shape = samples.shape[2:]
    rhs = np.zeros((smap.n_vertices,) + shape)
    for k in range(3):
        contrib = np.einsum("fq,fq...->f...", w * bary[None, :, k], samples)
        np.add.at(rhs, tris[:, k], contrib)
    if not consistent:
        lumped = np.zeros(smap.n_vertices)
        for k in range(3):
            np.add.at(lumped, tris[:, k], areas / 3.0)
        return rhs / lumped.reshape((-1,) + (1,) * len(shape))
    return np.linalg.solve(p1_mass(smap), rhs.reshape(smap.n_vertices, -1)).reshape(rhs.shape)


def _p1_tangential_derivatives(smap, values, frames):
    """Area-averaged facet gradients of a P1 vector field, along t1 and t2."""
    grads = p1_gradients(smap)  # (F, 3 corners, 3)
    D = np.einsum("fki,fkj->fij", values[smap.triangles], grads)  # dg_i/dx_j per facet
    Dv = _vertex_average(smap, D)
    _, t1, t2 = frames
    return np.stack([np.einsum("vij,vj->vi", Dv, t1), np.einsum("vij,vj->vi", Dv, t2)], axis=2)


def _harmonic_completion(der, frames):
    """Symmetric trace-free Hessians from tangential derivatives of g."""
    n, t1, t2 = frames
    E = np.stack([n, t1, t2], axis=2)  # columns n, t1, t2
    d1, d2 = der[:, :, 0], der[:, :, 1]
    Hl = np.zeros((len(n), 3, 3))
    Hl[:, 1, 1] = np.einsum("vi,vi->v", t1, d1)
    Hl[:, 2, 2] = np.einsum("vi,vi->v", t2, d2)
    h12 = np.einsum("vi,vi->v", t1, d2)
    h21 = np.einsum("vi,vi->v", t2, d1)
    Hl[:, 1, 2] = Hl[:, 2, 1] = 0.5 * (h12 + h21)
    Hl[:, 0, 1] = Hl[:, 1, 0] = np.einsum("vi,vi->v", n, d1)
    Hl[:, 0, 2] = Hl[:, 2, 0] = np.einsum("vi,vi->v", n, d2)
    Hl[:, 0, 0] = -(Hl[:, 1, 1] + Hl[:, 2, 2])
    return np.einsum("vij,vjk,vlk->vil", E, Hl, E), np.abs(h12 - h21)


@dataclass(frozen=True)
class TraceProjection:
    """Exterior traces at facet quadrature points and their P1 projections."""

    u_points: np.ndarray  # (F, n_q)
    g_points: np.ndarray  # (F, n_q, 3)
    u: np.ndarray  # (V,)
    g: np.ndarray  # (V, 3)


def project_trace(field, order=5, consistent=True):
    """Sample u and g on the facets and project both onto P1 vertex values."""
    smap = field.smap
    rule = composite_rule(order)
    pts = smap.points_at(rule.barycentric)  # (F, n_q, 3)
    F, nq = pts.shape[:2]
    groups = np.repeat(np.arange(F), nq)
    u, g = field.evaluate(pts.reshape(-1, 3), groups=groups, check_inside=False)
    u, g = u.reshape(F, nq), g.reshape(F, nq, 3)
    both = p1_projection(smap, np.concatenate([u[..., None], g], axis=2), rule, consistent)
    return TraceProjection(u, g, both[:, 0], both[:, 1:])


def projected_hessian(smap, g):
    """Hessians at the vertices from a P1 gravity field (V, 3).

    Tangential derivatives of the P1 field give two columns; symmetry and
    Laplace's equation complete the matrix.
    """
    frames = vertex_frames(smap)
    return _harmonic_completion(_p1_tangential_derivatives(smap, g, frames), frames)


def vertex_gravity(field, config=FdConfig(), strategy="projected", nudge=1e-3):
    """Per-vertex g and gravity gradient.

    strategy "projected": the exterior trace of g is projected onto P1
    vertex values; tangential derivatives of the projection fill the
    tangential columns of the Hessian, and symmetry plus Laplace's equation
    give the rest.  The step lengths in ``config`` are unused.
    strategy "facet": finite differences at facet centroids in facet frames,
    area-averaged to the vertices.
    strategy "vertex": finite differences at the vertex, moved ``nudge``
    edge lengths into its first incident facet, with the averaged vertex
    normal and that facet's tangents.
    """
    smap = field.smap
    if strategy == "projected":
        g = project_trace(field).g
        return (g,) + projected_hessian(smap, g)
    if strategy == "facet":
        g, H, asym = facet_gravity(field, config)
        return _vertex_average(smap, g), _vertex_average(smap, H), _vertex_average(smap, asym)
    if strategy != "vertex":
        raise ValueError(f"unknown vertex evaluation strategy {strategy!r}")
    V = smap.n_vertices
    tris = smap.triangles
    first = np.full(V, -1)
    for f in range(len(tris) - 1, -1, -1):
        first[tris[f]] = f
    vn = smap.vertex_normals()
    pts = []
    frames = []
    for v in range(V):
        fr = triangle_frame(smap, first[v])
        corners = smap.positions[tris[first[v]]]
        edge = np.linalg.norm(corners - np.roll(corners, 1, axis=0), axis=1).mean()
        x = smap.positions[v]
        direction = fr.centroid - x
        x = x + nudge * edge * direction / np.linalg.norm(direction)
        sf = StencilFrame(vn[v], fr.t1, fr.t2)
        frames.append(sf)
        pts.append(stencil_points(x, sf, config))
    groups = np.repeat(np.arange(V), 7)
    _, g = field.evaluate(np.vstack(pts), groups=groups, check_inside=False)
    g = g.reshape(V, 7, 3)
    noise = 64 * np.finfo(float).eps * max(np.abs(g).max(), np.finfo(float).tiny)
    H = np.empty((V, 3, 3))
    asym = np.empty(V)
    for v in range(V):
        H[v], asym[v] = hessian_from_stencil(g[v], frames[v], config, noise)
    return g[:, 0], H, asym


def marussi_frame(g, H, asym, eps_marussi=EPS_MARUSSI):
    """Bundle vertex gravity data after checking det(grad g) at every vertex."""
    det = np.linalg.det(H)
    bad = np.flatnonzero(~(np.abs(det) > eps_marussi))
    if bad.size:
        raise MarussiError(f"Marussi condition violated at vertex {bad[0]} (det = {det[bad[0]]:.3e})")
    return GravityFrame(g, H, det, asym)


def gravity_frame(field, config=FdConfig(), strategy="projected", eps_marussi=EPS_MARUSSI):
    """g_m and grad g_m at the vertices with the Marussi check."""
    return marussi_frame(*vertex_gravity(field, config, strategy), eps_marussi)
