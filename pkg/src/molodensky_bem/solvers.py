"""Saddle-point solves for the linearized and the Dirichlet problem.

Both systems have the form

    [ M  aux ] [mu]   [load]
    [ C   0  ] [ a] = [  0 ]

with M the Galerkin matrix of B (linearized problem) or V (Dirichlet
problem), ``aux`` the images of the side functions A_j = x_j/|x|^3 and
``C`` the constraint rows <b_i, A_k>.  The side functions enter the field
as extra density, so the represented potential is V(mu + sum_j a_j A_j).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .assembly import (DEFAULT_QUADRATURE, assemble_aux_and_constraints, assemble_slp,
                       assemble_slp_and_oblique, side_functions)

MAX_CONDITION = 1e12
RESIDUAL_TOL = 1e-9


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class AssembledSystem:
    """Matrices of one surface; the oblique part is present only when h was given."""

    slp: np.ndarray
    constraints: np.ndarray
    aux_slp: np.ndarray
    side_coefficients: np.ndarray  # (n, 3) nodal interpolants of A_j
    oblique: np.ndarray = None
    aux_oblique: np.ndarray = None


def assemble_system(smap, layout, h=None, settings=DEFAULT_QUADRATURE):
    """Assemble V (stored as S = -V), optionally B, and the side-function blocks."""
    if h is None:
        S, B = assemble_slp(smap, layout, settings), None
    else:
        S, B = assemble_slp_and_oblique(smap, layout, h, settings)
    aux_v, cons = assemble_aux_and_constraints(smap, layout, -S)
    coef = side_coefficients(smap, layout)
    aux_b = None if B is None else B @ coef
    return AssembledSystem(S, cons, aux_v, coef, B, aux_b)


def side_coefficients(smap, layout):
    return np.column_stack([layout.interpolate(smap, lambda p, j=j: side_functions(p)[:, j])
                            for j in range(3)])


@dataclass(frozen=True)
class RobinSolution:
    mu: np.ndarray
    a: np.ndarray
    condition: float = np.nan

    def total_density(self, side_coef):
        return self.mu + side_coef @ self.a


@dataclass(frozen=True)
class DirichletSolution(RobinSolution):
    pass


def _saddle_solve(M, aux, cons, load, label):
    n = M.shape[0]
    load = np.asarray(load, dtype=float)
    if load.shape != (n,):
        raise ValueError(f"load must have shape ({n},), got {load.shape}")
    # balance the side blocks against the operator block
    scale_m = np.abs(M).max()
    sa = scale_m / max(np.abs(aux).max(), np.finfo(float).tiny)
    sc = scale_m / max(np.abs(cons).max(), np.finfo(float).tiny)
    K = np.zeros((n + 3, n + 3))
    K[:n, :n] = M
    K[:n, n:] = aux * sa
    K[n:, :n] = cons * sc
    rhs = np.concatenate([load, np.zeros(3)])
    lu, piv = scipy.linalg.lu_factor(K, check_finite=True)
    anorm = np.abs(K).sum(axis=0).max()
    rcond, info = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if not cond < MAX_CONDITION:
        raise SolverError(f"{label}: saddle-point system ill-conditioned (condition estimate {cond:.2e})")
    sol = scipy.linalg.lu_solve((lu, piv), rhs)
    res = np.linalg.norm(K @ sol - rhs)
    ref = np.linalg.norm(rhs) + np.abs(K).max() * np.linalg.norm(sol)
    if ref > 0 and res > RESIDUAL_TOL * ref:
        raise SolverError(f"{label}: residual {res:.2e} exceeds tolerance")
    return sol[:n], sol[n:] * sa, cond


def solve_linearized(system, load, iteration=None):
    """Solve <B mu, psi> + sum_j a_j <B A_j, psi> = <F, psi>, <mu, A_k> = 0."""
    if system.oblique is None:
        raise ValueError("system was assembled without an oblique field")
    label = "linearized solve" + ("" if iteration is None else f" (iteration {iteration})")
    mu, a, cond = _saddle_solve(system.oblique, system.aux_oblique, system.constraints, load, label)
    return RobinSolution(mu, a, cond)


def solve_dirichlet(system, load, iteration=None):
    """Solve <V mu, xi> + sum_j a_j <V A_j, xi> = <w, xi>, <mu, A_k> = 0."""
    label = "Dirichlet solve" + ("" if iteration is None else f" (iteration {iteration})")
    mu, a, cond = _saddle_solve(-system.slp, system.aux_slp, system.constraints, load, label)
    return DirichletSolution(mu, a, cond)


@dataclass
class PotentialHistory:
    """Write-once per-iteration potential samples at the load quadrature points.

    Entry i holds ``delta_i * u_i`` sampled on surface i, plus an optional
    transport term carrying it to surface i+1.  The running total makes
    each ``accumulate`` call cost independent of the iteration count.
    """

    base: np.ndarray  # v_0 samples, (F, n_q)
    entries: list = field(default_factory=list)
    transports: dict = field(default_factory=dict)
    _total: np.ndarray = None

    def __post_init__(self):
        self.base = np.array(self.base, dtype=float)
        self.base.setflags(write=False)
        self._total = self.base.copy()

    def __len__(self):
        return len(self.entries)

    def append(self, values, delta):
        values = np.array(values, dtype=float) * float(delta)
        if values.shape != self.base.shape:
            raise ValueError(f"history entry must have shape {self.base.shape}, got {values.shape}")
        values.setflags(write=False)
        self.entries.append(values)
        self._total += values

    def add_transport(self, index, values):
        if index in self.transports:
            raise ValueError(f"transport term for iteration {index} already stored")
        if index >= len(self.entries):
            raise KeyError(f"no history entry for iteration {index}")
        values = np.array(values, dtype=float)
        values.setflags(write=False)
        self.transports[index] = values
        self._total += values

    def total(self):
        return self._total.copy()


def accumulate_dirichlet_data(history, u_values, delta, m):
    """Append ``delta * u_m`` and return w_m at the quadrature points.

    ``u_values`` are the samples of the current linearized solution on the
    current surface; ``m`` is its iteration index, which must equal the
    number of stored entries.
    """
    if len(history) != m:
        raise KeyError(f"history holds {len(history)} entries, cannot append iteration {m}")
    history.append(u_values, delta)
    return history.total()
