"""Closed-form single-layer integrals over flat triangles.

For a triangle T, a point x and a polynomial density b of degree <= 2 the
routines return

    value    = -1/(4 pi) * int_T b(y) / |x - y| ds_y
    gradient = grad_x value

Note the negative kernel sign, which is used throughout the package.

The integrals are reduced to edge integrals and the signed solid angle in
a local frame (e1, e2, n) of the triangle.  With u the in-plane offset from
the projection of x and z the height of x over the plane, the divergence
identity

    div_u (u u^a / R) = (1 + |a|) u^a / R + z^2 u^a / R^3

turns area moments of u^a / R into boundary terms.  Gradients follow from
grad_x (1/R) = -grad_y (1/R) and one integration by parts.  Points in the
plane of the triangle and inside it get the exterior (side=+1) or interior
(side=-1) limit; points on an edge or vertex are rejected.
"""

import numpy as np
from numba import njit

INV_4PI = 1.0 / (4.0 * np.pi)
PLANE_TOL = 1e-10  # relative to triangle diameter


class EdgeSingularityError(ValueError):
    pass


@njit(cache=True)
def _edge_integrals(sm, sp, rho2):
    """int s^k / sqrt(s^2 + rho2) ds over [sm, sp] for k = 0, 1, 2."""
    Rm = np.sqrt(sm * sm + rho2)
    Rp = np.sqrt(sp * sp + rho2)
    dR = (sp - sm) * (sp + sm) / (Rp + Rm)
    if sm >= 0.0:
        E0 = np.log1p((sp - sm + dR) / (sm + Rm))
    elif sp <= 0.0:
        E0 = np.log1p((sp - sm - dR) / (Rp - sp))
    else:
        E0 = np.log((sp + Rp) * (Rm - sm) / rho2)
    E2 = 0.5 * (sp * Rp - sm * Rm) - 0.5 * rho2 * E0
    return E0, dR, E2


@njit(cache=True)
def local_moments(px, py, z, v2, side, tol, A, G):
    """Moments of u^a / R and their gradients for a triangle in its frame.

    Parameters
    ----------
    px, py, z : float
        Local coordinates of x relative to vertex 0.
    v2 : (3, 2) array
        In-plane vertex coordinates, counter-clockwise about the normal.
    side : float
        +1 or -1, the side taken for in-plane points inside the triangle.
    tol : float
        Absolute tolerance for "in the plane" and "on an edge".
    A : (6,) output
        int u^a / R for a = 1, u1, u2, u1^2, u1 u2, u2^2.
    G : (6, 3) output
        grad_x of the entries of A in (e1, e2, n) components, the density
        held fixed as a function of y.
    """
    cx0 = v2[0, 0] - px
    cy0 = v2[0, 1] - py
    cx1 = v2[1, 0] - px
    cy1 = v2[1, 1] - py
    cx2 = v2[2, 0] - px
    cy2 = v2[2, 1] - py
    cx = (cx0, cx1, cx2)
    cy = (cy0, cy1, cy2)

    inplane = abs(z) <= tol
    if inplane:
        z = 0.0
        dmin = 1e300
        for k in range(3):
            ax, ay = cx[k], cy[k]
            bx, by = cx[(k + 1) % 3], cy[(k + 1) % 3]
            L = np.hypot(bx - ax, by - ay)
            d = (ax * (by - ay) - ay * (bx - ax)) / L
            dmin = min(dmin, d)
        if dmin > tol:
            omega = side * 2.0 * np.pi
        elif dmin >= -tol:
            raise EdgeSingularityError("evaluation point lies on a panel edge or vertex")
        else:
            omega = 0.0
    else:
        # signed solid angle (Van Oosterom-Strackee), positive for z > 0
        r0 = np.sqrt(cx0 * cx0 + cy0 * cy0 + z * z)
        r1 = np.sqrt(cx1 * cx1 + cy1 * cy1 + z * z)
        r2 = np.sqrt(cx2 * cx2 + cy2 * cy2 + z * z)
        zz = z * z
        triple = -z * (cx0 * cy1 - cy0 * cx1 + cx1 * cy2 - cy1 * cx2 + cx2 * cy0 - cy2 * cx0)
        den = (r0 * r1 * r2 + (cx0 * cx1 + cy0 * cy1 + zz) * r2
               + (cx0 * cx2 + cy0 * cy2 + zz) * r1 + (cx1 * cx2 + cy1 * cy2 + zz) * r0)
        omega = -2.0 * np.arctan2(triple, den)

    D = np.zeros(6)
    N1 = np.zeros(6)
    N2 = np.zeros(6)
    for k in range(3):
        ax, ay = cx[k], cy[k]
        bx, by = cx[(k + 1) % 3], cy[(k + 1) % 3]
        L = np.hypot(bx - ax, by - ay)
        t1 = (bx - ax) / L
        t2 = (by - ay) / L
        m1 = t2
        m2 = -t1
        d = ax * m1 + ay * m2
        sm = ax * t1 + ay * t2
        sp = bx * t1 + by * t2
        rho2 = d * d + z * z
        if rho2 <= tol * tol and sm < 0.0 < sp:
            raise EdgeSingularityError("evaluation point lies on a panel edge or vertex")
        E0, E1, E2 = _edge_integrals(sm, sp, rho2)
        q0 = E0
        q1 = d * m1 * E0 + t1 * E1
        q2 = d * m2 * E0 + t2 * E1
        q3 = d * d * m1 * m1 * E0 + 2.0 * d * m1 * t1 * E1 + t1 * t1 * E2
        q4 = d * d * m1 * m2 * E0 + d * (m1 * t2 + m2 * t1) * E1 + t1 * t2 * E2
        q5 = d * d * m2 * m2 * E0 + 2.0 * d * m2 * t2 * E1 + t2 * t2 * E2
        q = (q0, q1, q2, q3, q4, q5)
        for a in range(6):
            D[a] += d * q[a]
            N1[a] += m1 * q[a]
            N2[a] += m2 * q[a]

    zz = z * z
    A[0] = D[0] - z * omega
    B1 = -N1[0]
    B2 = -N2[0]
    A[1] = 0.5 * (D[1] - zz * B1)
    A[2] = 0.5 * (D[2] - zz * B2)
    B3 = -N1[1] + A[0]
    B4 = -N1[2]
    B5 = -N2[2] + A[0]
    A[3] = (D[3] - zz * B3) / 3.0
    A[4] = (D[4] - zz * B4) / 3.0
    A[5] = (D[5] - zz * B5) / 3.0

    G[0, 0] = -N1[0]
    G[0, 1] = -N2[0]
    G[0, 2] = -omega
    G[1, 0] = -N1[1] + A[0]
    G[1, 1] = -N2[1]
    G[1, 2] = -z * B1
    G[2, 0] = -N1[2]
    G[2, 1] = -N2[2] + A[0]
    G[2, 2] = -z * B2
    G[3, 0] = -N1[3] + 2.0 * A[1]
    G[3, 1] = -N2[3]
    G[3, 2] = -z * B3
    G[4, 0] = -N1[4] + A[2]
    G[4, 1] = -N2[4] + A[1]
    G[4, 2] = -z * B4
    G[5, 0] = -N1[5]
    G[5, 1] = -N2[5] + 2.0 * A[2]
    G[5, 2] = -z * B5
    return omega


@njit(cache=True)
def _shift(c, px, py, out):
    """Coefficients in xi-monomials -> coefficients in u-monomials, xi = u + p."""
    out[0] = c[0] + c[1] * px + c[2] * py + c[3] * px * px + c[4] * px * py + c[5] * py * py
    out[1] = c[1] + 2.0 * c[3] * px + c[4] * py
    out[2] = c[2] + c[4] * px + 2.0 * c[5] * py
    out[3] = c[3]
    out[4] = c[4]
    out[5] = c[5]


@njit(cache=True)
def panel_eval(x, origin, frame, v2, tol, polys, side, vals, grads, A, G, cu):
    """SLP values and world-frame gradients for several densities on one panel.

    ``polys`` is (nb, 6): densities as polynomials in the in-plane
    coordinates xi relative to vertex 0.  Results include -1/(4 pi).
    Returns the signed solid angle of the panel seen from x.
    """
    dx = x[0] - origin[0]
    dy = x[1] - origin[1]
    dz = x[2] - origin[2]
    px = dx * frame[0, 0] + dy * frame[0, 1] + dz * frame[0, 2]
    py = dx * frame[1, 0] + dy * frame[1, 1] + dz * frame[1, 2]
    z = dx * frame[2, 0] + dy * frame[2, 1] + dz * frame[2, 2]
    omega = local_moments(px, py, z, v2, side, tol, A, G)
    for b in range(polys.shape[0]):
        _shift(polys[b], px, py, cu)
        v = 0.0
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for a in range(6):
            v += cu[a] * A[a]
            g0 += cu[a] * G[a, 0]
            g1 += cu[a] * G[a, 1]
            g2 += cu[a] * G[a, 2]
        vals[b] = -INV_4PI * v
        for k in range(3):
            grads[b, k] = -INV_4PI * (g0 * frame[0, k] + g1 * frame[1, k] + g2 * frame[2, k])
    return omega


def reference_to_xi(v2):
    """(6, 6) matrix P with [1, s, t, s^2, s t, t^2] = P @ [1, xi1, xi2, xi1^2, xi1 xi2, xi2^2]."""
    J = np.array([[v2[1, 0], v2[2, 0]], [v2[1, 1], v2[2, 1]]])
    (m11, m12), (m21, m22) = np.linalg.inv(J)
    return np.array([
        [1, 0, 0, 0, 0, 0],
        [0, m11, m12, 0, 0, 0],
        [0, m21, m22, 0, 0, 0],
        [0, 0, 0, m11 * m11, 2 * m11 * m12, m12 * m12],
        [0, 0, 0, m11 * m21, m11 * m22 + m12 * m21, m12 * m22],
        [0, 0, 0, m21 * m21, 2 * m21 * m22, m22 * m22],
    ])


class PanelGeometry:
    """Per-triangle frames and basis polynomials used by the kernels."""

    def __init__(self, corners, basis):
        corners = np.asarray(corners, dtype=float)
        F = len(corners)
        e1 = corners[:, 1] - corners[:, 0]
        len1 = np.linalg.norm(e1, axis=1)
        cr = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        a2 = np.linalg.norm(cr, axis=1)
        if np.any(a2 <= 0) or np.any(len1 <= 0):
            raise ValueError("degenerate triangle")
        e1 = e1 / len1[:, None]
        n = cr / a2[:, None]
        e2 = np.cross(n, e1)
        self.origin = corners[:, 0].copy()
        self.frame = np.ascontiguousarray(np.stack([e1, e2, n], axis=1))
        rel = corners[:, 2] - corners[:, 0]
        self.v2 = np.zeros((F, 3, 2))
        self.v2[:, 1, 0] = len1
        self.v2[:, 2, 0] = np.einsum("fk,fk->f", rel, e1)
        self.v2[:, 2, 1] = np.einsum("fk,fk->f", rel, e2)
        edges = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 1],
                          corners[:, 0] - corners[:, 2]], axis=1)
        self.diam = np.linalg.norm(edges, axis=2).max(axis=1)
        self.tol = PLANE_TOL * self.diam
        self.area = 0.5 * a2
        self.normal = n
        self.centroid = corners.mean(axis=1)
        basis = np.asarray(basis, dtype=float)
        self.polys = np.ascontiguousarray(
            np.stack([basis @ reference_to_xi(self.v2[f]) for f in range(F)]))

    def __len__(self):
        return len(self.origin)


def slp_panel(x, triangle, density, side=1):
    """Single-layer value and gradient of one panel.

    Parameters
    ----------
    x : (3,) array
        Evaluation point.
    triangle : (3, 3) array
        Vertices; the normal is (v1 - v0) x (v2 - v0).
    density : int or (6,) array
        A P2 local basis index 0..5 (vertices then edges 01, 12, 20), or
        coefficients on the reference monomials 1, s, t, s^2, s t, t^2.
    side : {1, -1}
        Limit taken when x lies inside the panel: +1 is the side the
        normal points to.

    Returns
    -------
    value : float
    gradient : (3,) array
    """
    from .mesh import _P2_BASIS

    if np.ndim(density) == 0:
        coef = _P2_BASIS[int(density)][None, :]
    else:
        coef = np.asarray(density, dtype=float).reshape(1, 6)
    geo = PanelGeometry(np.asarray(triangle, dtype=float)[None], coef)
    vals = np.zeros(1)
    grads = np.zeros((1, 3))
    panel_eval(np.asarray(x, dtype=float), geo.origin[0], geo.frame[0], geo.v2[0], geo.tol[0],
               geo.polys[0], float(side), vals, grads, np.zeros(6), np.zeros((6, 3)), np.zeros(6))
    return vals[0], grads[0]
