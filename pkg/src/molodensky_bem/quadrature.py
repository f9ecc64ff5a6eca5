"""Quadrature rules on the reference triangle {(s, t): s, t >= 0, s + t <= 1}.

Points are returned as reference coordinates (s, t); the barycentric
coordinates are (1 - s - t, s, t).  Weights sum to 1/2, the reference area.
"""

from dataclasses import dataclass, field

import numpy as np

REFERENCE_AREA = 0.5


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n, 2) reference coordinates
    weights: np.ndarray  # (n,)
    order: int
    grading: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.weights)

    @property
    def barycentric(self):
        s, t = self.points[:, 0], self.points[:, 1]
        return np.column_stack([1.0 - s - t, s, t])


def gauss_01(n):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def graded_1d(n, sigma, levels, toward="left", linear=False):
    """Composite Gauss rule on [0, 1] with geometric refinement.

    ``toward`` is "left", "right", "both" or "none".  Each geometric piece
    carries ``n`` Gauss points, or with ``linear=True`` a count growing
    linearly from 2 next to the singular end to ``n`` on the outermost
    piece (hp grading).
    """
    if toward == "none" or levels == 0:
        return gauss_01(n)
    if toward == "both":
        xl, wl = graded_1d(n, sigma, levels, "left", linear)
        xr, wr = graded_1d(n, sigma, levels, "right", linear)
        return np.concatenate([0.5 * xl, 0.5 + 0.5 * xr]), 0.5 * np.concatenate([wl, wr])
    breaks = np.concatenate([[0.0], sigma ** np.arange(levels, 0, -1), [1.0]])
    xs, ws = [], []
    for k, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        m = max(2, int(np.ceil(n * (k + 1) / (levels + 1)))) if linear else n
        g, gw = gauss_01(m)
        xs.append(a + (b - a) * g)
        ws.append((b - a) * gw)
    x, w = np.concatenate(xs), np.concatenate(ws)
    if toward == "right":
        x = 1.0 - x[::-1]
        w = w[::-1]
    return x, w


# Symmetric rules with positive weights; orbits in barycentric form,
# weights rescaled to the reference area on return.
def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


def _symmetric(order):
    if order <= 1:
        bary, wts = [(1 / 3, 1 / 3, 1 / 3)], [1.0]
    elif order == 2:
        bary, wts = _orbit3(1 / 6, 1 / 3)
    elif order <= 4:
        b1, w1 = _orbit3(0.445948490915965, 0.223381589678011)
        b2, w2 = _orbit3(0.091576213509771, 0.109951743655322)
        bary, wts = b1 + b2, w1 + w2
    else:
        a1 = (6.0 - np.sqrt(15.0)) / 21.0
        a2 = (6.0 + np.sqrt(15.0)) / 21.0
        b1, q1 = _orbit3(a1, (155.0 - np.sqrt(15.0)) / 2400.0)
        b2, q2 = _orbit3(a2, (155.0 + np.sqrt(15.0)) / 2400.0)
        bary = [(1 / 3, 1 / 3, 1 / 3)] + b1 + b2
        wts = [9.0 / 80.0] + q1 + q2
    bary = np.asarray(bary)
    wts = np.asarray(wts)
    wts = wts / wts.sum() * REFERENCE_AREA
    return bary[:, 1:].copy(), wts


def _gauss_points(order):
    return max(1, int(np.ceil((order + 2) / 2)))


def duffy_rule(n_rho, n_eta, sigma=0.15, levels=0, rho_toward="left", eta_toward="none", eta_levels=None,
               linear=False):
    """Collapsed rule with apex at vertex (0, 0): (s, t) = rho * (1 - eta, eta)."""
    r, wr = graded_1d(n_rho, sigma, levels, rho_toward, linear)
    e, we = graded_1d(n_eta, sigma, levels if eta_levels is None else eta_levels, eta_toward, linear)
    R, E = np.meshgrid(r, e, indexing="ij")
    W = np.outer(wr * r, we)
    pts = np.column_stack([(R * (1.0 - E)).ravel(), (R * E).ravel()])
    return pts, W.ravel()


def composite_rule(order, grading=None):
    """Quadrature rule on the reference triangle.

    Parameters
    ----------
    order : int
        Polynomial degree integrated exactly.
    grading : dict, optional
        ``{"ratio": sigma, "levels": L}``.  With ``L > 0`` the rule is a
        collapsed (Duffy) product rule whose radial direction is split
        geometrically toward vertex (0, 0), so integrands with a 1/r
        singularity there are integrated to high accuracy.

    Returns
    -------
    QuadratureRule
    """
    grading = dict(grading or {})
    sigma = float(grading.get("ratio", 0.15))
    levels = int(grading.get("levels", 0))
    if int(order) != order or order < 1:
        raise ValueError(f"quadrature order must be a positive integer, got {order!r}")
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"grading ratio must lie in (0, 1), got {sigma}")
    if levels < 0:
        raise ValueError(f"grading levels must be non-negative, got {levels}")
    order = int(order)
    if levels == 0 and order <= 5:
        pts, wts = _symmetric(order)
    elif levels == 0:
        n = _gauss_points(order)
        pts, wts = duffy_rule(n, n)
    else:
        # the angular factor of 1/r after collapsing is analytic but not
        # polynomial, hence the extra points across the wedge
        pts, wts = duffy_rule(_gauss_points(order), 2 * order + 1, sigma, levels)
    return QuadratureRule(pts, wts, order, {"ratio": sigma, "levels": levels})


def vertex_graded_rule(n, sigma=0.15, levels=6, n_eta=None):
    """Duffy rule graded toward vertex (0, 0) with hp-growing radial counts."""
    pts, wts = duffy_rule(n, n_eta or n, sigma, levels, rho_toward="left", linear=True)
    return QuadratureRule(pts, wts, 1, {"ratio": sigma, "levels": levels, "toward": "vertex 0"})


def opposite_edge_rule(n, sigma=0.15, levels=6, end_levels=3, n_along=None):
    """Rule graded toward the edge from (1, 0) to (0, 1) and its endpoints."""
    pts, wts = duffy_rule(n, n_along or n, sigma, levels, rho_toward="right", eta_toward="both",
                          eta_levels=end_levels, linear=True)
    return QuadratureRule(pts, wts, 1, {"ratio": sigma, "levels": levels, "toward": "edge 12"})


def edge_graded_rule(n, sigma=0.15, levels=3, end_levels=None, n_along=None, linear=False):
    """Rule refined toward all three edges and vertices of the triangle.

    The triangle is split at its centroid into three sub-triangles; each is
    collapsed toward the centroid and graded toward its base edge and the
    two base vertices.  Used for outer integration of singular and
    near-singular Galerkin pairs, whose inner potentials lose smoothness
    along panel edges.
    """
    pts, wts = duffy_rule(n, n_along or n, sigma, levels, rho_toward="right", eta_toward="both",
                          eta_levels=end_levels, linear=linear)
    centroid = np.array([1 / 3, 1 / 3])
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    out_p, out_w = [], []
    for k in range(3):
        a, b = corners[k] - centroid, corners[(k + 1) % 3] - centroid
        jac = abs(a[0] * b[1] - a[1] * b[0])
        out_p.append(centroid + pts[:, :1] * a + pts[:, 1:] * b)
        out_w.append(wts * jac)
    order = 1 if linear else 2 * min(n, n_along or n) - 2
    return QuadratureRule(np.vstack(out_p), np.concatenate(out_w), order,
                          {"ratio": sigma, "levels": levels, "toward": "edges"})
