"""Galerkin matrices of the single-layer and oblique operators.

With the negative kernel, V is negative definite; ``assemble_slp`` returns
the positive definite matrix ``S = -<V b_j, b_i>``.  The oblique operator is

    B mu = V mu + (h . grad V mu)|_exterior
         = V mu + p.v. h . grad V mu + 1/2 (h . n) mu,

so its matrix is ``-S + T`` with T built from exterior-trace gradients.
Inner integrals are analytic; outer integrals use one of three rules per
facet pair: an edge-graded rule for pairs that share a vertex, a raised
order for nearby pairs and the base rule otherwise.
"""

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .kernels import INV_4PI, PanelGeometry, panel_eval
from .quadrature import composite_rule, edge_graded_rule, opposite_edge_rule, vertex_graded_rule


@dataclass(frozen=True)
class QuadratureSettings:
    """Outer quadrature per facet-pair class.

    Identical pairs and pairs sharing an edge or a vertex use rules graded
    toward the shared entity: ``levels`` geometric pieces of ratio
    ``ratio`` with Gauss counts growing linearly up to ``near_points``
    away from it, ``along_points`` in the other direction and
    ``end_levels`` pieces toward the ends of shared edges.  Pairs with
    centroid distance below ``mid_factor`` diameters use ``mid_order``
    with analytic inner integrals.  Beyond that, tensor rules on both
    facets with the kernel sampled pointwise: ``order`` up to
    ``far_factor`` diameters, ``far_order`` further out.  Right-hand sides are sampled at the points
    of the rule of ``load_order``.
    """

    order: int = 8
    load_order: int = 5
    near_points: int = 12
    along_points: int = 8
    ratio: float = 0.15
    levels: int = 6
    end_levels: int = 3
    mid_factor: float = 3.0
    mid_order: int = 10
    far_factor: float = 6.0
    far_order: int = 6

    def rules(self):
        """Canonical rules: identical, shared edge (1, 2), shared vertex 0, mid, far, farther."""
        n, m, s, L = self.near_points, self.along_points, self.ratio, self.levels
        return (edge_graded_rule(n, s, L, self.end_levels, m, linear=True),
                opposite_edge_rule(n, s, L, self.end_levels, m),
                vertex_graded_rule(n, s, L, m),
                composite_rule(max(self.mid_order, self.order)),
                composite_rule(self.order),
                composite_rule(min(self.far_order, self.order)))

    def raised(self, step=2):
        """Settings with every rule refined by ``step`` points or orders."""
        return replace(self, order=self.order + step, mid_order=self.mid_order + step,
                       far_order=self.far_order + step,
                       near_points=self.near_points + step, along_points=self.along_points + step)


DEFAULT_QUADRATURE = QuadratureSettings()

@njit(cache=True)
def _pair_class(tris, f, g, centroids, diam, mid_factor, far_factor):
    """(class, rotation): 0 identical, 1 shared edge, 2 shared vertex, 3 mid, 4 far, 5 farther."""
    if f == g:
        return 0, 0
    shared = 0
    first = -1
    second = -1
    for a in range(3):
        for b in range(3):
            if tris[f, a] == tris[g, b]:
                shared += 1
                if first < 0:
                    first = a
                else:
                    second = a
    if shared == 2:
        start = first if (first + 1) % 3 == second else second
        return 1, (start - 1) % 3
    if shared == 1:
        return 2, first
    d = 0.0
    for k in range(3):
        d += (centroids[f, k] - centroids[g, k]) ** 2
    d = np.sqrt(d) / max(diam[f], diam[g])
    if d < mid_factor:
        return 3, 0
    if d < far_factor:
        return 4, 0
    return 5, 0


@njit(cache=True)
def _assemble(corners, tris, l2g, n_dofs, origin, frame, v2, tol, polys, centroids, diam, area,
              mid_factor, far_factor, rule_pts, rule_w, rule_basis, rule_start, far_x, far_wb, far2_x, far2_wb,
              h, want_t, want_v):
    F = corners.shape[0]
    nl = polys.shape[1]
    MV = np.zeros((n_dofs, n_dofs)) if want_v else np.zeros((1, 1))
    T = np.zeros((n_dofs, n_dofs)) if want_t else np.zeros((1, 1))
    vals = np.zeros(nl)
    grads = np.zeros((nl, 3))
    A = np.zeros(6)
    G = np.zeros((6, 3))
    cu = np.zeros(6)
    x = np.zeros(3)
    blkV = np.zeros((nl, nl))
    blkT = np.zeros((nl, nl))
    nq = max(far_x.shape[1], far2_x.shape[1])
    KV = np.zeros((nq, nq))
    KT = np.zeros((nq, nq))
    tmp = np.zeros((nq, nl))
    for f in range(F):
        jac = 2.0 * area[f]
        for g in range(F):
            cls, rot = _pair_class(tris, f, g, centroids, diam, mid_factor, far_factor)
            if cls == 4:
                _far_pair(f, g, far_x, far_wb, h, want_t, want_v, l2g, MV, T, KV, KT, tmp)
                continue
            if cls == 5:
                _far_pair(f, g, far2_x, far2_wb, h, want_t, want_v, l2g, MV, T, KV, KT, tmp)
                continue
            q0 = rule_start[3 * cls + rot]
            q1 = rule_start[3 * cls + rot + 1]
            blkV[:, :] = 0.0
            blkT[:, :] = 0.0
            for q in range(q0, q1):
                s = rule_pts[q, 0]
                t = rule_pts[q, 1]
                for k in range(3):
                    x[k] = corners[f, 0, k] + s * (corners[f, 1, k] - corners[f, 0, k]) \
                        + t * (corners[f, 2, k] - corners[f, 0, k])
                panel_eval(x, origin[g], frame[g], v2[g], tol[g], polys[g], 1.0, vals, grads, A, G, cu)
                w = rule_w[q] * jac
                if want_t:
                    for j in range(nl):
                        cu[j] = h[f, 0] * grads[j, 0] + h[f, 1] * grads[j, 1] + h[f, 2] * grads[j, 2]
                for i in range(nl):
                    wb = w * rule_basis[q, i]
                    if wb == 0.0:
                        continue
                    for j in range(nl):
                        if want_v:
                            blkV[i, j] += wb * vals[j]
                        if want_t:
                            blkT[i, j] += wb * cu[j]
            for i in range(nl):
                I = l2g[f, i]
                for j in range(nl):
                    J = l2g[g, j]
                    if want_v:
                        MV[I, J] += blkV[i, j]
                    if want_t:
                        T[I, J] += blkT[i, j]
    return MV, T


@njit(cache=True)
def _far_pair(f, g, far_x, far_wb, h, want_t, want_v, l2g, MV, T, KV, KT, tmp):
    nq = far_x.shape[1]
    nl = far_wb.shape[2]
    for p in range(nq):
        for q in range(nq):
            r0 = far_x[f, p, 0] - far_x[g, q, 0]
            r1 = far_x[f, p, 1] - far_x[g, q, 1]
            r2 = far_x[f, p, 2] - far_x[g, q, 2]
            ir = 1.0 / np.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
            KV[p, q] = -INV_4PI * ir
            if want_t:
                KT[p, q] = INV_4PI * (h[f, 0] * r0 + h[f, 1] * r1 + h[f, 2] * r2) * ir * ir * ir
    for which in range(2):
        if (which == 0 and not want_v) or (which == 1 and not want_t):
            continue
        K = KV if which == 0 else KT
        # tmp = K @ Wb_g, then block = Wb_f^T @ tmp
        for p in range(nq):
            for j in range(nl):
                acc = 0.0
                for q in range(nq):
                    acc += K[p, q] * far_wb[g, q, j]
                tmp[p, j] = acc
        for i in range(nl):
            I = l2g[f, i]
            for j in range(nl):
                acc = 0.0
                for p in range(nq):
                    acc += far_wb[f, p, i] * tmp[p, j]
                if which == 0:
                    MV[I, l2g[g, j]] += acc
                else:
                    T[I, l2g[g, j]] += acc


def _rotated(points, shift):
    """Reference points after cyclic relabelling: local vertex (k + shift) gets canonical weight k."""
    bary = np.column_stack([1.0 - points[:, 0] - points[:, 1], points[:, 0], points[:, 1]])
    local = np.empty_like(bary)
    for k in range(3):
        local[:, (k + shift) % 3] = bary[:, k]
    return local[:, 1:].copy()


def _stacked_rules(layout, settings):
    pts, wts, sizes = [], [], [0]
    for rule in settings.rules():
        for rot in range(3):
            pts.append(_rotated(rule.points, rot))
            wts.append(rule.weights)
            sizes.append(len(rule))
    pts = np.vstack(pts)
    return pts, np.concatenate(wts), layout.basis_values(pts), np.cumsum(sizes).astype(np.int64)


def _run(smap, layout, h, want_t, want_v, settings):
    corners = np.ascontiguousarray(smap.corners())
    geo = PanelGeometry(corners, layout.basis)
    pts, w, bvals, start = _stacked_rules(layout, settings)
    far_data = []
    for far in settings.rules()[4:]:
        far_data.append(np.ascontiguousarray(smap.points_at(far.barycentric)))
        far_data.append(np.ascontiguousarray(
            (2.0 * geo.area)[:, None, None] * (far.weights[:, None] * layout.basis_values(far.points))[None]))
    hh = np.zeros((1, 3)) if h is None else np.ascontiguousarray(h, dtype=float)
    return _assemble(corners, smap.triangles, layout.local_to_global, layout.dof_count, geo.origin,
                     geo.frame, geo.v2, geo.tol, geo.polys, geo.centroid, geo.diam, geo.area,
                     float(settings.mid_factor), float(settings.far_factor), pts, w, bvals, start,
                     *far_data, hh, want_t, want_v)


def assemble_slp(smap, layout, settings=DEFAULT_QUADRATURE):
    """Stored single-layer matrix ``S = -<V b_j, b_i>`` (symmetric positive definite)."""
    MV, _ = _run(smap, layout, None, False, True, settings)
    S = -0.5 * (MV + MV.T)
    return S


def check_oblique_field(smap, h):
    h = np.asarray(h, dtype=float)
    if h.shape != (smap.n_triangles, 3):
        raise ValueError(f"oblique field must have shape ({smap.n_triangles}, 3), got {h.shape}")
    if np.any(np.linalg.norm(h, axis=1) == 0.0):
        raise ValueError("oblique field h vanishes on a triangle")
    return h


def assemble_oblique(smap, layout, h, settings=DEFAULT_QUADRATURE, slp=None, include_trace=True):
    """Galerkin matrix of B = V + h . grad V (exterior trace).

    Parameters
    ----------
    h : (F, 3) array
        Facet-constant oblique vectors.
    slp : array, optional
        Previously assembled ``assemble_slp`` output for the same surface;
        reused instead of recomputing the V block.
    include_trace : bool
        Diagnostic switch.  With False the jump and p.v. terms are dropped
        and the V block alone is returned.
    """
    h = check_oblique_field(smap, h)
    if not include_trace:
        return -(slp if slp is not None else assemble_slp(smap, layout, settings))
    if slp is None:
        MV, T = _run(smap, layout, h, True, True, settings)
        return 0.5 * (MV + MV.T) + T
    _, T = _run(smap, layout, h, True, False, settings)
    return -slp + T


def assemble_slp_and_oblique(smap, layout, h, settings=DEFAULT_QUADRATURE):
    """Both matrices from one pass over facet pairs: (S, B)."""
    h = check_oblique_field(smap, h)
    MV, T = _run(smap, layout, h, True, True, settings)
    S = -0.5 * (MV + MV.T)
    return S, -S + T


def load_rule(settings=DEFAULT_QUADRATURE):
    """Outer rule at whose points right-hand sides are sampled."""
    return composite_rule(settings.load_order)


def quadrature_points(smap, settings=DEFAULT_QUADRATURE):
    """(F, n_q, 3) images of the load rule points on every facet."""
    return smap.points_at(load_rule(settings).barycentric)


def assemble_load(smap, layout, values, settings=DEFAULT_QUADRATURE):
    """``<F, b_i>`` from samples of F at the load rule points.

    ``values`` has shape (F, n_q) matching ``quadrature_points``.
    """
    rule = load_rule(settings)
    values = np.asarray(values, dtype=float)
    if values.shape != (smap.n_triangles, len(rule)):
        raise ValueError(f"load values must have shape ({smap.n_triangles}, {len(rule)}), got {values.shape}")
    _, areas = smap.normals_areas()
    bv = layout.basis_values(rule.points)  # (n_q, n_local)
    local = np.einsum("fq,q,qi->fi", values, rule.weights, bv) * (2.0 * areas)[:, None]
    out = np.zeros(layout.dof_count)
    np.add.at(out, layout.local_to_global.ravel(), local.ravel())
    return out


def assemble_mass(smap, layout, weight=None):
    """``<w b_j, b_i>`` with an optional facet-constant weight."""
    rule = composite_rule(4)
    _, areas = smap.normals_areas()
    scale = 2.0 * areas * (1.0 if weight is None else np.asarray(weight, dtype=float))
    bv = layout.basis_values(rule.points)
    ref = np.einsum("q,qi,qj->ij", rule.weights, bv, bv)
    out = np.zeros((layout.dof_count, layout.dof_count))
    l2g = layout.local_to_global
    for f in range(smap.n_triangles):
        out[np.ix_(l2g[f], l2g[f])] += scale[f] * ref
    return out


def side_functions(points):
    """A_j(x) = x_j / |x|^3, shape (..., 3)."""
    points = np.asarray(points, dtype=float)
    r = np.linalg.norm(points, axis=-1, keepdims=True)
    if np.any(r == 0.0):
        raise ValueError("side functions are singular at the origin")
    return points / r ** 3


def assemble_aux_and_constraints(smap, layout, operator_matrix, order=8):
    """Auxiliary columns and constraint rows for the side functions A_j.

    Parameters
    ----------
    operator_matrix : array
        Galerkin matrix of the operator applied to A_j (``-S`` for V, the
        oblique matrix for B).  A_j enters through its nodal interpolant.
    order : int
        Quadrature order for the constraint rows ``<b_i, A_k>``.

    Returns
    -------
    aux : (n, 3) array
    constraints : (3, n) array
    """
    if np.linalg.norm(smap.positions, axis=1).min() == 0.0:
        raise ValueError("surface passes through the origin")
    coef = np.column_stack([layout.interpolate(smap, lambda p, j=j: side_functions(p)[:, j]) for j in range(3)])
    aux = operator_matrix @ coef
    rule = composite_rule(order)
    _, areas = smap.normals_areas()
    pts = smap.points_at(rule.barycentric)  # (F, q, 3)
    Aval = side_functions(pts)  # (F, q, 3)
    bv = layout.basis_values(rule.points)
    local = np.einsum("fqk,q,qi->fik", Aval, rule.weights, bv) * (2.0 * areas)[:, None, None]
    cons = np.zeros((3, layout.dof_count))
    for k in range(3):
        np.add.at(cons[k], layout.local_to_global.ravel(), local[:, :, k].ravel())
    return aux, cons


def dump_matrix(path, matrix):
    """Row-major float64 dump preceded by two int64 dimensions."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        np.asarray(matrix.shape, dtype="<i8").tofile(fh)
        matrix.tofile(fh)


def load_matrix_dump(path):
    with open(path, "rb") as fh:
        shape = tuple(np.fromfile(fh, dtype="<i8", count=2))
        return np.fromfile(fh, dtype="<f8").reshape(shape)
