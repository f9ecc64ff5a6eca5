"""Smoothed Nash-Hormander iteration for the nonlinear Molodensky problem.

Each iteration m on the current surface phi_m:

(a) theta_m = (theta_0^kappa + m)^(1/kappa), Delta_m = theta_{m+1} - theta_m
(b) smoothed potential increment  Wd_m
(c) smoothed gravity increment    Gd_m
(d) linearized oblique problem    u_m + grad u_m . h_m = Wd_m + Gd_m . h_m
(e) Dirichlet problem for         w_m = W_{m-1} + Delta_m u_m
(f) g_m, grad g_m at the vertices
(g) phi_{m+1} = phi_m + Delta_m (grad g_m)^{-1} (Gd_m - grad u_m)
(h) h_{m+1} = -(grad g_m)^{-1} g_m per facet,  G_{m+1} = g_m

Vertex data live on the fixed connectivity, so composing with phi_m^{-1}
is a relabeling.
"""

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_load, load_rule
from .config import RunConfig
from .field import (MarussiError, SurfaceField, marussi_frame, p1_projection, project_trace, projected_hessian,
                    vertex_gravity)
from .mesh import DegenerateSurfaceError, SurfaceMap, build_icosphere, p2_dof_layout, update_vertices
from .smoother import HeatSmoother, p1_mass
from .solvers import PotentialHistory, SolverError, assemble_system, solve_dirichlet, solve_linearized

log = logging.getLogger(__name__)

SMALL_LOAD = 1e-12
CSV_HEADER = ["iter", "theta", "delta", "radius_mean", "radius_err", "res_G", "res_W", "a1", "a2", "a3", "wall_s"]


class DriverError(RuntimeError):
    """An iteration failed; ``report`` holds the rows logged before the failure."""

    def __init__(self, message, iteration, report=None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.report = report


def theta_schedule(theta0, kappa, m):
    """theta_m and Delta_m = theta_{m+1} - theta_m."""
    if not theta0 > 1:
        raise ValueError(f"theta0 must be > 1, got {theta0}")
    if not kappa > 1:
        raise ValueError(f"kappa must be > 1, got {kappa}")
    if m < 0:
        raise ValueError(f"iteration index must be non-negative, got {m}")
    base = theta0 ** kappa
    theta = (base + m) ** (1.0 / kappa)
    return theta, (base + m + 1) ** (1.0 / kappa) - theta


def radius_error(positions, r):
    """Mean vertex radius and (1/V) * sqrt(sum (|x_i| - r)^2)."""
    if not r > 0:
        raise ValueError(f"target radius must be positive, got {r}")
    radii = np.linalg.norm(np.asarray(positions, dtype=float), axis=1)
    return radii.mean(), np.sqrt(np.sum((radii - r) ** 2)) / len(radii)


class IdentitySmoother:
    """Stand-in for runs without smoothing."""

    def scalar(self, F, theta):
        return np.asarray(F, dtype=float)

    def vector(self, F, theta):
        return np.asarray(F, dtype=float)


@dataclass
class ModelData:
    """Measured data and starting values, as vertex data on the reference mesh."""

    W: np.ndarray  # (V,)
    G: np.ndarray  # (V, 3)
    W0: np.ndarray
    G0: np.ndarray
    h0: np.ndarray  # (F, 3)
    phi0: SurfaceMap


def sphere_model(level, radius=1.1):
    """The radius-`radius` sphere sought from the unit icosphere."""
    mesh = build_icosphere(level)
    x = mesh.vertices
    phi0 = SurfaceMap.from_mesh(mesh)
    return ModelData(
        W=np.full(len(x), 1.0 / radius),
        G=-x / radius ** 2,
        W0=np.ones(len(x)),
        G0=-x.copy(),
        h0=0.5 * phi0.centroids(),
        phi0=phi0,
    )


@dataclass
class IterationState:
    phi: SurfaceMap
    W: np.ndarray
    G: np.ndarray
    W0: np.ndarray
    G0: np.ndarray
    Gm: np.ndarray
    h: np.ndarray
    history: PotentialHistory
    theta0: float
    kappa: float
    m: int = 0
    g_sum: np.ndarray = None  # sum_{j<m} Delta_j Gd_j
    g_arg_prev: np.ndarray = None  # argument of S in Gd_{m-1}
    last: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.g_sum is None:
            self.g_sum = np.zeros_like(self.G)


def _p1_at_points(smap, values, rule):
    """P1 interpolation of vertex values at the rule points of every facet."""
    return np.einsum("qk,fk...->fq...", rule.barycentric, np.asarray(values)[smap.triangles])


def initial_state(data, config=RunConfig()):
    rule = load_rule(config.quadrature)
    base = _p1_at_points(data.phi0, data.W0, rule)
    return IterationState(data.phi0, data.W, data.G, data.W0.copy(), data.G0.copy(), data.G0.copy(),
                          data.h0.copy(), PotentialHistory(base), config.theta0, config.kappa)


def make_smoother(state, config, reference=None):
    if not config.smoother:
        return IdentitySmoother()
    surface = reference if config.smoother_surface == "reference" and reference is not None else state.phi
    modes = None if config.modes < 0 else min(config.modes, surface.n_vertices - 1)
    return HeatSmoother(surface, modes, config.smoother_power, config.vector_smoothing)


def smoothed_w_increment(state, smoother):
    m, (theta, delta) = state.m, theta_schedule(state.theta0, state.kappa, state.m)
    diff = state.W - state.W0
    if m == 0:
        return smoother.scalar(diff / delta, theta)
    theta_prev, _ = theta_schedule(state.theta0, state.kappa, m - 1)
    return (smoother.scalar(diff, theta) - smoother.scalar(diff, theta_prev)) / delta


def smoothed_g_increment(state, smoother):
    """Gd_m; the caller adds Delta_m * Gd_m to ``state.g_sum`` afterwards."""
    m, (theta, delta) = state.m, theta_schedule(state.theta0, state.kappa, state.m)
    arg = state.G - state.Gm + state.g_sum
    if m == 0:
        out = smoother.vector(arg / delta, theta)
    else:
        theta_prev, _ = theta_schedule(state.theta0, state.kappa, m - 1)
        out = (smoother.vector(arg, theta) - smoother.vector(state.g_arg_prev, theta_prev)) / delta
    state.g_arg_prev = arg
    return out


def _vertex_frame(field_, config, rule_order):
    """Vertex potential and gravity of a field, with its gravity gradient."""
    proj = project_trace(field_, rule_order)
    if config.gravity == "projected":
        g, (H, asym) = proj.g, projected_hessian(field_.smap, proj.g)
    else:
        g, H, asym = vertex_gravity(field_, config.fd, config.gravity)
    return proj.u, marussi_frame(g, H, asym, config.eps_marussi)


def mass_norm(mass, values):
    values = np.asarray(values, dtype=float).reshape(mass.shape[0], -1)
    return float(np.sqrt(np.einsum("vk,vw,wk->", values, mass, values)))


def nash_hormander_step(state, config=RunConfig(), reference=None, probes=None):
    """Run one iteration in place; returns the diagnostics of the step.

    ``probes`` are exterior points at which u_m is reported as ``u_probe``.
    """
    m = state.m
    phi = state.phi
    settings = config.quadrature
    rule = load_rule(settings)
    theta, delta = theta_schedule(state.theta0, state.kappa, m)
    smoother = make_smoother(state, config, reference)

    w_dot = smoothed_w_increment(state, smoother)
    g_dot = smoothed_g_increment(state, smoother)
    state.g_sum = state.g_sum + delta * g_dot

    # (d) linearized problem with F_m at the load points
    F = _p1_at_points(phi, w_dot, rule) + np.einsum("fqd,fd->fq", _p1_at_points(phi, g_dot, rule), state.h)
    load_norm = float(np.abs(F).max())
    if load_norm < SMALL_LOAD:
        log.warning("iteration %d: linearized load %.3e is below %.0e (over-smoothing)", m, load_norm, SMALL_LOAD)
    layout = p2_dof_layout(phi.base)
    system = assemble_system(phi, layout, state.h, settings)
    lin = solve_linearized(system, assemble_load(phi, layout, F, settings), iteration=m)
    u_field = SurfaceField(phi, layout, lin.total_density(system.side_coefficients))
    u_trace = project_trace(u_field, settings.load_order)
    u_probe = None if probes is None else u_field.evaluate(np.atleast_2d(probes))[0]

    # (e) Dirichlet problem for the accumulated potential
    state.history.append(u_trace.u_points, delta)
    w = state.history.total()
    dirichlet = solve_dirichlet(system, assemble_load(phi, layout, w, settings), iteration=m)
    v_field = SurfaceField(phi, layout, dirichlet.total_density(system.side_coefficients))

    # (f) gravity frame
    v_vertex, frame = _vertex_frame(v_field, config, settings.load_order)

    # (g) surface update
    rhs = g_dot - u_trace.g
    phi_dot = np.linalg.solve(frame.grad_g, rhs[..., None])[..., 0]
    step = delta * phi_dot
    new_phi = update_vertices(phi, phi_dot, delta)

    # (h) direction field and gravity for the next surface
    hv = -np.linalg.solve(frame.grad_g, frame.g[..., None])[..., 0]
    new_h = hv[phi.triangles].mean(axis=1)
    new_G = frame.g.copy()
    if config.transport == "taylor":
        new_G += np.einsum("vij,vj->vi", frame.grad_g, step)
        g_pts = _p1_at_points(phi, frame.g, rule)
        state.history.add_transport(m, np.einsum("fqd,fqd->fq", g_pts, _p1_at_points(phi, step, rule)))

    mass = p1_mass(phi)
    diag = dict(
        theta=theta, delta=delta,
        res_G=mass_norm(mass, frame.g - state.G),
        res_W=mass_norm(mass, v_vertex - state.W),
        a=lin.a, a_dirichlet=dirichlet.a, load_norm=load_norm,
        det_min=float(frame.det.min()), det_max=float(frame.det.max()),
        step_max=float(np.abs(step).max()), u_probe=u_probe,
    )
    state.phi, state.h, state.Gm = new_phi, new_h, new_G
    state.m = m + 1
    state.last = diag
    return diag


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    config_echo: list = field(default_factory=list)
    initial_radius: tuple = (np.nan, np.nan)
    converged: bool = False
    final_positions: np.ndarray = None
    dirichlet_a: list = field(default_factory=list)

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    def to_csv(self, path=None):
        buf = io.StringIO()
        for line in self.config_echo:
            buf.write(f"# {line}\n")
        buf.write(f"# initial radius_mean={self.initial_radius[0]!r} radius_err={self.initial_radius[1]!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow([row["iter"]] + [repr(float(row[k])) for k in CSV_HEADER[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _restart(state, config):
    """Re-base the data at the current iterate and reset the schedule."""
    W0 = project_vertex_values(state.phi, state.history.total(), config)
    return IterationState(state.phi, state.W, state.G, W0, state.Gm.copy(), state.Gm.copy(), state.h.copy(),
                          PotentialHistory(state.history.total()), config.theta0, config.kappa)


def project_vertex_values(smap, samples, config):
    return p1_projection(smap, np.asarray(samples)[..., None], load_rule(config.quadrature))[:, 0]


def run(config=RunConfig(), data=None):
    """Iterate until the residual drops below ``config.tol`` or ``max_iter`` is hit."""
    if data is None:
        if config.shape != "icosphere":
            raise ValueError("the model problem is posed on the icosphere")
        data = sphere_model(config.level, config.target_radius)
    state = initial_state(data, config)
    report = ConvergenceReport(config_echo=config.echo(),
                               initial_radius=radius_error(state.phi.positions, config.target_radius))
    reference = data.phi0
    for it in range(config.max_iter):
        if config.restart_every and it > 0 and it % config.restart_every == 0:
            state = _restart(state, config)
        start = time.perf_counter()
        try:
            diag = nash_hormander_step(state, config, reference)
        except (MarussiError, DegenerateSurfaceError, SolverError, np.linalg.LinAlgError) as exc:
            raise DriverError(str(exc), it, report) from exc
        mean_r, err_r = radius_error(state.phi.positions, config.target_radius)
        row = dict(iter=it, theta=diag["theta"], delta=diag["delta"], radius_mean=mean_r, radius_err=err_r,
                   res_G=diag["res_G"], res_W=diag["res_W"], a1=diag["a"][0], a2=diag["a"][1], a3=diag["a"][2],
                   wall_s=time.perf_counter() - start)
        report.rows.append(row)
        report.dirichlet_a.append(diag["a_dirichlet"])
        log.info("iter %d theta %.5f radius %.6f err %.3e res_G %.3e res_W %.3e", it, diag["theta"], mean_r, err_r,
                 diag["res_G"], diag["res_W"])
        if diag["res_G"] + diag["res_W"] < config.tol:
            report.converged = True
            break
    report.final_positions = state.phi.positions.copy()
    return report


def radial_reference(iterations, theta0=2.6, kappa=6.0, radius=1.1, transport="taylor", damping=None):
    """The iteration for the sphere model problem with exact radial fields.

    All fields stay radial, so every quantity is a scalar: the surface is a
    sphere of radius r, h = h n, the linearized solution is u_m = c_m / |x|
    and the Dirichlet solution is w_m r / |x|.  ``damping(r, theta)`` is the
    factor the smoother applies to radial vector fields (1 for smoothing
    that preserves them).  Returns per-iteration dicts with r (before the
    update), c and F.
    """
    W, W0 = 1.0 / radius, 1.0
    G, G0 = -1.0 / radius ** 2, -1.0
    r, h, Gm, w_acc = 1.0, 0.5, G0, W0
    g_sum, arg_prev = 0.0, None
    out = []
    for m in range(iterations):
        theta, delta = theta_schedule(theta0, kappa, m)
        damp = (lambda t: 1.0) if damping is None else (lambda t, r=r: damping(r, t))
        arg = G - Gm + g_sum
        if m == 0:
            w_dot = (W - W0) / delta
            g_dot = damp(theta) * arg / delta
        else:
            w_dot = 0.0  # S preserves constants
            theta_prev, _ = theta_schedule(theta0, kappa, m - 1)
            g_dot = (damp(theta) * arg - damp(theta_prev) * arg_prev) / delta
        arg_prev = arg
        g_sum += delta * g_dot
        F = w_dot + g_dot * h
        # u = c/|x|: u + h du/dr = c (1/r - h/r^2)
        c = F / (1.0 / r - h / r ** 2)
        w = w_acc + delta * c / r
        g, H = -w / r, 2.0 * w / r ** 2  # radial gravity and d g_r / dr of w r/|x|
        grad_u = -c / r ** 2
        step = delta * (g_dot - grad_u) / H
        out.append(dict(m=m, r=r, h=h, F=F, c=c, w=w))
        h = -g / H
        if transport == "taylor":
            Gm, w_acc = g + H * step, w + g * step
        else:
            Gm, w_acc = g, w
        r += step
    return out
