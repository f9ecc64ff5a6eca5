"""Closed triangulated surfaces with fixed connectivity.

The evolving surface is a piecewise linear map: only vertex positions change
between iterations, so points on different surfaces correspond through
identical barycentric coordinates in the same triangle.
"""

from dataclasses import dataclass, field

import numpy as np

MAX_ICOSPHERE_LEVEL = 6
MAX_CUBE_LEVEL = 7
AREA_GUARD_FACTOR = 1e-12


class DegenerateSurfaceError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int, outward orientation
    refinement_level: int = 0
    edges: np.ndarray = field(init=False, repr=False)  # (E, 2) sorted vertex pairs
    edge_triangles: np.ndarray = field(init=False, repr=False)  # (E, 2)
    triangle_edges: np.ndarray = field(init=False, repr=False)  # (F, 3), edge k = (tri[k], tri[k+1])

    def __post_init__(self):
        tris = np.asarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        pairs = np.stack([tris, np.roll(tris, -1, axis=1)], axis=2).reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts != 2):
            raise ValueError("mesh is not a closed 2-manifold: every edge must bound exactly two triangles")
        tri_of_pair = np.repeat(np.arange(len(tris)), 3)
        order = np.argsort(inverse, kind="stable")
        edge_tris = tri_of_pair[order].reshape(-1, 2)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_triangles", edge_tris)
        object.__setattr__(self, "triangle_edges", inverse.reshape(-1, 3))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(vertices, triangles):
    verts = list(vertices)
    cache = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            m = vertices[a] + vertices[b]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.array(verts), np.array(out)


def build_icosphere(level):
    """Regular icosahedron subdivided ``level`` times, vertices on the unit sphere."""
    if level < 0 or level > MAX_ICOSPHERE_LEVEL:
        raise ValueError(f"icosphere level must be in [0, {MAX_ICOSPHERE_LEVEL}], got {level}")
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
    return TriangleMesh(v, f, level)


def build_cube_surface(level):
    """Boundary of [-1, 1]^3 with 2 * 4**level triangles per face.

    Grid squares are split along the diagonal from (i+1, j) to (i, j+1) of
    the face parametrisation.
    """
    if level < 0 or level > MAX_CUBE_LEVEL:
        raise ValueError(f"cube level must be in [0, {MAX_CUBE_LEVEL}], got {level}")
    n = 2 ** level
    index = {}
    verts = []

    def vid(p):
        if p not in index:
            index[p] = len(verts)
            verts.append(p)
        return index[p]

    tris = []
    for axis in range(3):
        for side in (0, n):
            a1, a2 = [k for k in range(3) if k != axis]
            outward = np.zeros(3)
            outward[axis] = 1.0 if side == n else -1.0
            for i in range(n):
                for j in range(n):
                    ids = {}
                    for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
                        p = [0, 0, 0]
                        p[axis], p[a1], p[a2] = side, i + di, j + dj
                        ids[di, dj] = vid(tuple(p))
                    for tri in ([ids[0, 0], ids[1, 0], ids[0, 1]], [ids[1, 1], ids[0, 1], ids[1, 0]]):
                        pts = np.array([verts[t] for t in tri], dtype=float)
                        normal = np.cross(pts[1] - pts[0], pts[2] - pts[0])
                        if normal @ outward < 0:
                            tri = [tri[0], tri[2], tri[1]]
                        tris.append(tri)
    v = np.array(verts, dtype=float) * (2.0 / n) - 1.0
    return TriangleMesh(v, np.array(tris), level)


def triangle_normals_areas(positions, triangles):
    p0, p1, p2 = (positions[triangles[:, k]] for k in range(3))
    cr = np.cross(p1 - p0, p2 - p0)
    area2 = np.linalg.norm(cr, axis=1)
    return cr / np.where(area2 > 0, area2, 1.0)[:, None], 0.5 * area2


def p1_gradients(smap):
    """Surface gradients of the three barycentric functions per facet, (F, 3, 3)."""
    n, areas = smap.normals_areas()
    c = smap.corners()
    opp = np.stack([c[:, 2] - c[:, 1], c[:, 0] - c[:, 2], c[:, 1] - c[:, 0]], axis=1)
    return np.cross(n[:, None, :], opp) / (2.0 * areas)[:, None, None]


@dataclass(frozen=True)
class SurfaceMap:
    """Current vertex images of a fixed-connectivity mesh."""

    base: TriangleMesh
    positions: np.ndarray
    area_floor: float = 0.0

    @classmethod
    def from_mesh(cls, mesh, positions=None):
        _, areas = triangle_normals_areas(mesh.vertices, mesh.triangles)
        pos = mesh.vertices.copy() if positions is None else np.asarray(positions, dtype=float).copy()
        smap = cls(mesh, pos, AREA_GUARD_FACTOR * float(areas.mean()))
        smap.check_areas()
        return smap

    @property
    def triangles(self):
        return self.base.triangles

    @property
    def n_vertices(self):
        return self.base.n_vertices

    @property
    def n_triangles(self):
        return self.base.n_triangles

    def normals_areas(self):
        return triangle_normals_areas(self.positions, self.base.triangles)

    def corners(self):
        """(F, 3, 3) array of triangle corner positions."""
        return self.positions[self.base.triangles]

    def centroids(self):
        return self.corners().mean(axis=1)

    def check_areas(self):
        _, areas = self.normals_areas()
        bad = np.flatnonzero(areas < self.area_floor)
        if bad.size:
            raise DegenerateSurfaceError(
                f"{bad.size} triangle(s) collapsed below area {self.area_floor:.3e} (first: {bad[0]})")

    def vertex_normals(self):
        """Area-weighted average of incident facet normals."""
        normals, areas = self.normals_areas()
        acc = np.zeros_like(self.positions)
        for k in range(3):
            np.add.at(acc, self.base.triangles[:, k], normals * areas[:, None])
        return acc / np.linalg.norm(acc, axis=1, keepdims=True)

    def points_at(self, barycentric, triangles=None):
        """Images of barycentric points; returns (F, n, 3) for all triangles."""
        c = self.corners() if triangles is None else self.corners()[triangles]
        return np.einsum("qk,fkd->fqd", barycentric, c)

    def scaled(self, factor):
        return SurfaceMap(self.base, self.positions * factor, self.area_floor)


def update_vertices(smap, increment, step):
    """Return ``positions + step * increment`` on the same connectivity."""
    increment = np.asarray(increment, dtype=float)
    if increment.shape != smap.positions.shape:
        raise ValueError(f"increment shape {increment.shape} does not match positions {smap.positions.shape}")
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    new = SurfaceMap(smap.base, smap.positions + step * increment, smap.area_floor)
    new.check_areas()
    return new


@dataclass(frozen=True)
class TriangleFrame:
    normal: np.ndarray
    centroid: np.ndarray
    area: float
    t1: np.ndarray
    t2: np.ndarray

    @property
    def matrix(self):
        """Rows n, t1, t2."""
        return np.vstack([self.normal, self.t1, self.t2])


def triangle_frame(smap, index):
    p0, p1, p2 = smap.positions[smap.base.triangles[index]]
    cr = np.cross(p1 - p0, p2 - p0)
    a2 = np.linalg.norm(cr)
    if a2 <= 2.0 * smap.area_floor or a2 == 0.0:
        raise DegenerateSurfaceError(f"triangle {index} is degenerate")
    n = cr / a2
    t1 = (p1 - p0) / np.linalg.norm(p1 - p0)
    t2 = np.cross(n, t1)
    return TriangleFrame(n, (p0 + p1 + p2) / 3.0, 0.5 * a2, t1, t2)


# local dofs: vertices 0, 1, 2 then edge midpoints (0,1), (1,2), (2,0)
_P2_NODES = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]])
# coefficients on the reference monomials 1, s, t, s^2, s t, t^2
_P2_BASIS = np.array([
    [1, -3, -3, 2, 4, 2],
    [0, -1, 0, 2, 0, 0],
    [0, 0, -1, 0, 0, 2],
    [0, 4, 0, -4, -4, 0],
    [0, 0, 0, 0, 4, 0],
    [0, 0, 4, 0, -4, -4],
], dtype=float)
_P1_BASIS = np.array([[1, -1, -1, 0, 0, 0], [0, 1, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0]], dtype=float)
_P1_NODES = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
_P0_BASIS = np.array([[1, 0, 0, 0, 0, 0]], dtype=float)
_P0_NODES = np.array([[1 / 3, 1 / 3]])


def reference_monomials(points):
    s, t = points[:, 0], points[:, 1]
    return np.column_stack([np.ones_like(s), s, t, s * s, s * t, t * t])


@dataclass(frozen=True)
class DofLayout:
    """Indexing of a (dis)continuous polynomial boundary element space."""

    degree: int
    continuous: bool
    dof_count: int
    local_to_global: np.ndarray  # (F, n_local)
    basis: np.ndarray  # (n_local, 6) reference-monomial coefficients
    nodes: np.ndarray  # (n_local, 2) reference interpolation nodes

    @property
    def n_local(self):
        return self.basis.shape[0]

    def basis_values(self, points):
        """(n_points, n_local) basis values at reference points."""
        return reference_monomials(points) @ self.basis.T

    def interpolate(self, smap, func):
        """Nodal interpolation coefficients of ``func`` (vectorised over points)."""
        pts = smap.points_at(_bary(self.nodes))  # (F, n_local, 3)
        vals = np.asarray(func(pts.reshape(-1, 3)), dtype=float).reshape(pts.shape[:2])
        coef = np.zeros(self.dof_count)
        coef[self.local_to_global.ravel()] = vals.ravel()
        return coef


def _bary(points):
    return np.column_stack([1.0 - points[:, 0] - points[:, 1], points[:, 0], points[:, 1]])


def p2_dof_layout(mesh):
    """Continuous piecewise quadratic layout: V vertex dofs then E edge dofs."""
    V = mesh.n_vertices
    l2g = np.hstack([mesh.triangles, V + mesh.triangle_edges])
    return DofLayout(2, True, V + mesh.n_edges, l2g, _P2_BASIS, _P2_NODES)


def discontinuous_layout(mesh, degree):
    """Per-triangle P0 or P1 layout (used by the Hessian benchmark)."""
    F = mesh.n_triangles
    if degree == 0:
        basis, nodes = _P0_BASIS, _P0_NODES
    elif degree == 1:
        basis, nodes = _P1_BASIS, _P1_NODES
    else:
        raise ValueError(f"discontinuous layouts support degree 0 or 1, got {degree}")
    n = basis.shape[0]
    return DofLayout(degree, False, F * n, np.arange(F * n).reshape(F, n), basis, nodes)


def write_mesh(path, mesh, positions=None):
    pos = mesh.vertices if positions is None else positions
    with open(path, "w") as fh:
        fh.write(f"{len(pos)} {mesh.n_triangles}\n")
        for p in pos:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")


def read_mesh(path):
    with open(path) as fh:
        nv, nf = (int(x) for x in fh.readline().split())
        data = fh.read().split()
    v = np.array(data[: 3 * nv], dtype=float).reshape(nv, 3)
    f = np.array(data[3 * nv: 3 * nv + 3 * nf], dtype=np.int64).reshape(nf, 3)
    return TriangleMesh(v, f)
