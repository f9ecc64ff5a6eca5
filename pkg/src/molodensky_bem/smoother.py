"""Heat-semigroup smoothing with P1 Laplace-Beltrami eigenpairs.

For vertex data F on a triangulated surface,

    S_theta F = sum_j exp(-lambda_j / theta) beta_j psi_j,   beta_j = psi_j^T A F,

where C psi_j = lambda_j A psi_j with the cotangent stiffness C and the
consistent mass A, and the psi_j are A-orthonormal.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .mesh import DegenerateSurfaceError, p1_gradients


class SmootherError(RuntimeError):
    pass


@dataclass(frozen=True)
class LaplaceBeltramiFem:
    stiffness: np.ndarray  # C, (V, V)
    mass: np.ndarray  # A, (V, V)


@dataclass(frozen=True)
class EigenBasis:
    eigenvalues: np.ndarray  # (M + 1,) ascending
    vectors: np.ndarray  # (V, M + 1), A-orthonormal columns

    @property
    def truncation(self):
        return len(self.eigenvalues) - 1


def _scatter(smap, local):
    V = smap.n_vertices
    out = np.zeros((V, V))
    tris = smap.triangles
    rows = np.repeat(tris, 3, axis=1)
    cols = np.tile(tris, (1, 3))
    np.add.at(out, (rows.ravel(), cols.ravel()), local.reshape(len(tris), 9).ravel())
    return out


def p1_mass(smap):
    """Consistent P1 mass matrix: area/12 * (1 + delta_ij) per facet."""
    _, areas = smap.normals_areas()
    local = (np.ones((3, 3)) + np.eye(3))[None] * (areas / 12.0)[:, None, None]
    return _scatter(smap, local)


def p1_stiffness(smap):
    """P1 stiffness int grad phi_i . grad phi_j (the cotangent weights)."""
    _, areas = smap.normals_areas()
    grads = p1_gradients(smap)
    local = np.einsum("fid,fjd->fij", grads, grads) * areas[:, None, None]
    return _scatter(smap, local)


def assemble_laplace_beltrami(smap):
    try:
        smap.check_areas()
    except DegenerateSurfaceError as exc:
        raise SmootherError(f"cannot assemble the Laplace-Beltrami operator: {exc}") from exc
    C = p1_stiffness(smap)
    A = p1_mass(smap)
    return LaplaceBeltramiFem(0.5 * (C + C.T), 0.5 * (A + A.T))


def solve_eigenbasis(fem, M=None):
    """Smallest M + 1 generalized eigenpairs of C psi = lambda A psi.

    M defaults to V - 1 (the full basis).
    """
    V = fem.mass.shape[0]
    if M is None:
        M = V - 1
    if not 0 <= M < V:
        raise ValueError(f"truncation index M must satisfy 0 <= M < {V}, got {M}")
    try:
        lam, psi = scipy.linalg.eigh(fem.stiffness, fem.mass, subset_by_index=[0, M])
    except np.linalg.LinAlgError as exc:
        raise SmootherError(f"mass matrix factorization failed: {exc}") from exc
    # C is semidefinite; clip the roundoff below zero
    lam = np.where(lam < 0, 0.0, lam)
    return EigenBasis(lam, psi)


def heat_smooth(F, basis, fem, t, power=1.0):
    """Heat flow of F for time t; ``power`` replaces lambda by lambda**power."""
    F = np.asarray(F, dtype=float)
    beta = basis.vectors.T @ (fem.mass @ F)
    damp = np.exp(-t * basis.eigenvalues ** power)
    return basis.vectors @ (damp.reshape((-1,) + (1,) * (F.ndim - 1)) * beta)


def smooth_field(F, basis, fem, theta, power=1.0):
    """S_theta F with t = 1/theta; vector fields (V, 3) are smoothed per column."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    return heat_smooth(F, basis, fem, 1.0 / theta, power)


def smooth_vectors(F, basis, fem, theta, normals=None, mode="componentwise", power=1.0):
    """Smooth a vertex vector field.

    mode "componentwise" smooths the Cartesian components.  Mode
    "normal-tangential" smooths the normal component F.n as a scalar and
    the tangential remainder per component, then recombines with
    ``normals``; it leaves fields c * n with constant c unchanged.
    """
    F = np.asarray(F, dtype=float)
    if mode == "componentwise":
        return smooth_field(F, basis, fem, theta, power)
    if mode != "normal-tangential":
        raise ValueError(f"unknown vector smoothing mode {mode!r}")
    if normals is None:
        raise ValueError("normal-tangential smoothing needs vertex normals")
    fn = np.einsum("vi,vi->v", F, normals)
    ft = F - fn[:, None] * normals
    both = smooth_field(np.column_stack([fn, ft]), basis, fem, theta, power)
    return both[:, :1] * normals + both[:, 1:]


class HeatSmoother:
    """Eigenbasis of one surface together with its FEM matrices."""

    def __init__(self, smap, modes=None, power=1.0, vector_mode="componentwise"):
        self.fem = assemble_laplace_beltrami(smap)
        self.basis = solve_eigenbasis(self.fem, modes)
        self.normals = smap.vertex_normals()
        self.power = power
        self.vector_mode = vector_mode

    def scalar(self, F, theta):
        return smooth_field(F, self.basis, self.fem, theta, self.power)

    def vector(self, F, theta):
        return smooth_vectors(F, self.basis, self.fem, theta, self.normals, self.vector_mode, self.power)
