"""Homogenized limit models with an explicit interface temperature.

The macro problem keeps one unknown per interface face: the trace value that
balances the one-sided fluxes against the grain heat sink.  Because that
balance is a scalar linear relation per face, the trace is eliminated
locally into the two adjacent cell rows, which keeps the macro system the
size of a plain diffusion system and makes zero exchange exactly equal to
perfect contact.

Two grain-side closures plug into the same macro step:

* a bank of transient grain problems at sampled interface points, whose
  boundary exchange integrals are interpolated onto the interface faces
  (disconnected grains), and
* a lateral heat equation on the interface itself with the effective
  conductivity tensor of the connected layer.

Each time step couples the two sides by a fixed-point iteration with
optional over-relaxation; the stopping metric combines the fluid, solid,
and grain L2 increments between successive sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import cells, geometry
from .grid import (DomainLabels, Field, Grid, Label, TransmissionSpec,
                   assemble_advection, assemble_diffusion, norm_l2)
from .linalg import SolverConfig, SparseSystem, SolverError, combine, solve_linear
from .micro import CONNECTED, DISCONNECTED, PhysicalParams, VelocitySpec


@dataclass
class EffectiveConfig:
    """Setup for one homogenized run (either grain regime)."""

    shape: object
    params: PhysicalParams
    extent: tuple
    h: float
    dt: float = 0.01
    t_end: float = 1.0
    tol: float = 1e-6
    relaxation: float = 1.0
    max_inner: int = 200
    bank_size: int = 16
    cell_resolution: int = 64
    k_eff: np.ndarray | None = None  # lateral block; computed when omitted
    measures: geometry.GeometryMeasures | None = None
    velocity: VelocitySpec | None = None
    top_bc: str = "neumann"
    top_value: float = 0.0
    lateral_periodic: bool = False
    stationary: bool = False
    initial: float = 0.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    raise_on_nonconvergence: bool = True

    def __post_init__(self):
        if not 1.0 <= self.relaxation < 2.0:
            raise ValueError("relaxation factor must lie in [1, 2)")
        if self.tol <= 0.0:
            raise ValueError("coupling tolerance must be positive")
        if self.bank_size < 1:
            raise ValueError("bank size must be at least 1")
        if self.stationary and self.top_bc != "dirichlet":
            raise ValueError("stationary runs need a Dirichlet top boundary")

    @property
    def dim(self) -> int:
        return len(self.extent)

    def grain_measures(self) -> geometry.GeometryMeasures:
        return self.measures or geometry.exact_measures(self.shape)


@dataclass
class IterationReport:
    """Record of the fixed-point loop for one time step."""

    step_index: int
    errors: list
    relaxation: float
    converged: bool
    iterations: int


@dataclass
class CoupledState:
    """Macro field, interface trace, and grain data at one time level."""

    t: float
    theta: np.ndarray
    trace: np.ndarray
    grain: object


class MacroProblem:
    """Macro heat equation on the fluid-solid bilayer with the interface
    trace eliminated into the adjacent cell rows.

    The sink on each interface face is ``a*trace - b`` per unit area with a
    constant coefficient ``a``; only ``b`` changes between coupling sweeps,
    so the operator is assembled once per time-step size.
    """

    def __init__(self, cfg: EffectiveConfig, sink_coefficient: float):
        p = cfg.params
        self.cfg = cfg
        self.domain = geometry.build_layered_domain(
            cfg.extent, cfg.h, cfg.dim, lateral_periodic=cfg.lateral_periodic)
        g = self.domain.grid
        self.grid = g
        mid = self.domain.face_sets("midplane")[0]
        self.midplane = mid

        dirichlet = None
        if cfg.top_bc == "dirichlet":
            dirichlet = {(g.ndim - 1, "high"): cfg.top_value}
        base = assemble_diffusion(
            self.domain,
            {Label.FLUID: p.kappa_fluid, Label.SOLID: p.kappa_solid},
            TransmissionSpec(), dirichlet=dirichlet, skip_faces=mid)

        h = g.spacing[g.ndim - 1]
        area = mid.area
        self.g_fluid = 2.0 * p.kappa_fluid * area / h
        self.g_solid = 2.0 * p.kappa_solid * area / h
        self.sink = float(sink_coefficient)
        if self.sink < 0.0:
            raise ValueError("interface sink coefficient must be nonnegative")
        self.sink_total = self.sink * area
        self.denom = self.g_fluid + self.g_solid + self.sink_total

        n = g.num_cells
        lo, hi = mid.lo, mid.hi  # lo solid side, hi fluid side
        gf, gs, dd = self.g_fluid, self.g_solid, self.denom
        rows = np.concatenate([hi, lo, hi, lo])
        cols = np.concatenate([hi, lo, lo, hi])
        vals = np.concatenate([
            np.full(len(mid), gf * (gs + self.sink_total) / dd),
            np.full(len(mid), gs * (gf + self.sink_total) / dd),
            np.full(len(mid), -gf * gs / dd),
            np.full(len(mid), -gf * gs / dd),
        ])
        interface = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

        advection = None
        if cfg.velocity is not None and cfg.velocity.magnitude != 0.0:
            advection = assemble_advection(self.domain, cfg.velocity,
                                           p.rho_c_fluid)
        self.symmetric = advection is None
        stiff = base.matrix + interface
        if advection is not None:
            stiff = stiff + advection.matrix
        self.stiffness = stiff.tocsr()
        self.base_rhs = base.rhs + (advection.rhs if advection is not None else 0.0)

        lab = self.domain.labels
        self.capacity = np.where(lab == Label.FLUID, p.rho_c_fluid,
                                 p.rho_c_solid)
        self.source = np.where(lab == Label.FLUID, p.source_fluid,
                               p.source_solid)
        self.fluid_cells = self.domain.cells_of(Label.FLUID)
        self.solid_cells = self.domain.cells_of(Label.SOLID)
        self._lhs_cache = {}

        if cfg.top_bc == "dirichlet":
            self.dirichlet_cells = g.boundary_cells(g.ndim - 1, "high")
            kap = np.where(lab[self.dirichlet_cells] == Label.FLUID,
                           p.kappa_fluid, p.kappa_solid)
            self.dirichlet_coef = 2.0 * kap * g.face_area(g.ndim - 1) / h
        else:
            self.dirichlet_cells = None
            self.dirichlet_coef = None

    @property
    def face_centers_lateral(self) -> np.ndarray:
        """Lateral coordinates of the interface faces, shape (faces, d-1)."""
        g = self.grid
        centers = g.cell_centers()[self.midplane.hi]
        return centers[:, :-1]

    def _lhs(self, dt):
        key = dt
        if key not in self._lhs_cache:
            if dt is None:
                self._lhs_cache[key] = self.stiffness
            else:
                c = self.capacity * self.grid.cell_volume / dt
                self._lhs_cache[key] = (self.stiffness + sp.diags(c)).tocsr()
        return self._lhs_cache[key]

    def step(self, theta_old: np.ndarray, b_faces: np.ndarray,
             dt: float | None, x0: np.ndarray | None = None):
        """Solve one (transient or stationary) macro problem for the given
        per-face sink offsets; returns the new field and the interface trace."""
        g = self.grid
        mid = self.midplane
        b_total = np.asarray(b_faces, dtype=float) * mid.area
        rhs = self.base_rhs + self.source * g.cell_volume
        rhs = rhs.copy()
        np.add.at(rhs, mid.hi, self.g_fluid * b_total / self.denom)
        np.add.at(rhs, mid.lo, self.g_solid * b_total / self.denom)
        if dt is not None:
            rhs += self.capacity * g.cell_volume / dt * theta_old
        system = SparseSystem(matrix=self._lhs(dt), rhs=rhs,
                              symmetric=self.symmetric, pure_neumann=False)
        guess = theta_old if x0 is None else x0
        theta = solve_linear(system, self.cfg.solver, x0=guess)
        trace = (self.g_fluid * theta[mid.hi] + self.g_solid * theta[mid.lo]
                 + b_total) / self.denom
        return theta, trace

    def trace_of(self, theta: np.ndarray, b_faces: np.ndarray) -> np.ndarray:
        mid = self.midplane
        b_total = np.asarray(b_faces, dtype=float) * mid.area
        return (self.g_fluid * theta[mid.hi] + self.g_solid * theta[mid.lo]
                + b_total) / self.denom

    def stored_energy(self, theta: np.ndarray) -> float:
        return float(np.sum(self.capacity * self.grid.cell_volume * theta))

    def source_rate(self) -> float:
        return float(np.sum(self.source * self.grid.cell_volume))

    def boundary_flux_rate(self, theta: np.ndarray) -> float:
        if self.dirichlet_cells is None:
            return 0.0
        return float(np.sum(self.dirichlet_coef
                            * (self.cfg.top_value - theta[self.dirichlet_cells])))


def _interp_regular(axes, values, query):
    """Multilinear interpolation on a regular point grid with clamping.

    ``axes`` are the per-axis sample coordinates, ``values`` the sample array
    (shape = lengths of axes), ``query`` an (N, k) coordinate array.  Outside
    the hull the value extends constantly.
    """
    k = len(axes)
    values = np.asarray(values, dtype=float).reshape([len(ax) for ax in axes])
    n = query.shape[0]
    idx0 = []
    frac = []
    for a in range(k):
        ax = axes[a]
        q = np.clip(query[:, a], ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, q) - 1, 0, max(len(ax) - 2, 0))
        if len(ax) == 1:
            idx0.append(np.zeros(n, dtype=int))
            frac.append(np.zeros(n))
        else:
            w = (q - ax[i]) / (ax[i + 1] - ax[i])
            idx0.append(i)
            frac.append(np.clip(w, 0.0, 1.0))
    out = np.zeros(n)
    for corner in range(1 << k):
        weight = np.ones(n)
        pos = []
        for a in range(k):
            if corner >> a & 1:
                weight = weight * frac[a]
                pos.append(np.minimum(idx0[a] + 1, len(axes[a]) - 1))
            else:
                weight = weight * (1.0 - frac[a])
                pos.append(idx0[a])
        out += weight * values[tuple(pos)]
    return out


class CellBank:
    """Transient grain problems at uniformly placed interface points.

    Quadrature weights are uniform (|interface|/M); exchange integrals are
    interpolated multilinearly onto the interface faces, constant beyond the
    outermost points.  The macro trace is sampled back at the points by the
    same multilinear rule.
    """

    def __init__(self, cfg: EffectiveConfig, macro: MacroProblem):
        p = cfg.params
        self.cfg = cfg
        lateral_extent = cfg.extent[:-1]
        d_lat = len(lateral_extent)
        m = cfg.bank_size
        if d_lat == 2:
            side = int(round(np.sqrt(m)))
            if side * side != m:
                raise ValueError("bank size must be a perfect square in 3D")
            counts = (side, side)
        else:
            counts = (m,)
        self.axes = [ (np.arange(c) + 0.5) * L / c
                      for c, L in zip(counts, lateral_extent) ]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.positions = np.stack([a.ravel() for a in mesh], axis=1)
        self.counts = counts
        self.size = self.positions.shape[0]
        self.weight = float(np.prod(lateral_extent)) / self.size

        margin_half = None  # full reference box; shared with corrector solves
        self.problem = cells.build_cell_problem(
            cfg.shape, cfg.cell_resolution, p.kappa_grain,
            p.alpha_fluid, p.alpha_solid, p.rho_c_grain,
            half_height=margin_half)
        self.source_values = p.grain_source(self.positions)
        self.measures = cfg.grain_measures()
        self.face_axes = None
        self.face_query = macro.face_centers_lateral
        # face centers form a regular lateral grid themselves
        g = macro.grid
        self.face_grid_axes = [g.axis_centers(a) for a in range(g.ndim - 1)]
        self.cell_volume = self.problem.cell_volume

    def initial_state(self, value: float = 0.0) -> list:
        n = self.problem.num_unknowns
        return [np.full(n, value) for _ in range(self.size)]

    def sample_trace(self, trace_faces: np.ndarray) -> np.ndarray:
        return _interp_regular(self.face_grid_axes, trace_faces, self.positions)

    def step_from(self, grain_old: list, trace_faces: np.ndarray,
                  dt: float | None) -> list:
        traces = self.sample_trace(trace_faces)
        out = []
        for j in range(self.size):
            out.append(cells.cell_heat_step(
                self.problem, grain_old[j], float(traces[j]), dt,
                float(self.source_values[j]), self.cfg.solver))
        return out

    def exchange_rhs(self, grain: list) -> np.ndarray:
        p = self.cfg.params
        g_f = np.empty(self.size)
        g_s = np.empty(self.size)
        for j in range(self.size):
            g_f[j], g_s[j] = cells.boundary_exchange_integrals(
                self.problem, grain[j])
        b_points = p.alpha_fluid * g_f + p.alpha_solid * g_s
        return _interp_regular(self.axes, b_points.reshape(self.counts),
                               self.face_query)

    def relax(self, accepted: list, tilde: list, eta: float) -> list:
        return [a + eta * (t - a) for a, t in zip(accepted, tilde)]

    def e_norm(self, a: list, b: list) -> float:
        total = 0.0
        for va, vb in zip(a, b):
            diff = va - vb
            total += self.weight * self.cell_volume * float(diff @ diff)
        return float(np.sqrt(total))

    def stored_energy(self, grain: list) -> float:
        p = self.cfg.params
        total = 0.0
        for v in grain:
            total += self.weight * p.rho_c_grain * self.cell_volume * float(v.sum())
        return total

    def source_rate(self) -> float:
        inside_vol = self.problem.inside_volume
        return float(np.sum(self.weight * self.source_values * inside_vol))

    def mean_temperatures(self, grain: list) -> np.ndarray:
        return np.array([float(v.mean()) for v in grain])


class InterfaceLayer:
    """Lateral heat equation on the interface for the connected regime.

    Unknowns live on the interface faces (one lateral cell each); the
    effective tensor enters through its diagonal, cross terms being
    unrepresentable in a two-point flux (they vanish for the shape catalog).
    """

    def __init__(self, cfg: EffectiveConfig, macro: MacroProblem):
        p = cfg.params
        self.cfg = cfg
        meas = cfg.grain_measures()
        self.volume = meas.volume
        self.exchange_total = (p.alpha_fluid * meas.area_fluid
                               + p.alpha_solid * meas.area_solid)
        g = macro.grid
        d_lat = g.ndim - 1
        k_eff = cfg.k_eff
        if k_eff is None:
            eff = cells.effective_conductivity(cfg.shape, cfg.cell_resolution,
                                               p.kappa_grain)
            k_eff = eff.tensor[:d_lat, :d_lat]
        k_eff = np.atleast_2d(np.asarray(k_eff, dtype=float))[:d_lat, :d_lat]
        off = np.abs(k_eff - np.diag(np.diag(k_eff))).max(initial=0.0)
        if off > 0.02 * max(np.trace(k_eff), 1e-300):
            raise ValueError("effective tensor has significant off-diagonal "
                             "entries; not representable by two-point fluxes")
        self.k_eff = k_eff

        dims = g.dims[:-1]
        self.grid = Grid(dims=dims, spacing=g.spacing[:-1],
                         origin=g.origin[:-1], periodic=g.periodic[:-1])
        lat = self.grid
        n = lat.num_cells
        rows, cols, vals = [], [], []
        for axis in range(lat.ndim):
            lo, hi = lat.neighbor_pairs(axis)
            if lo.size == 0:
                continue
            coef = np.full(lo.size, self.k_eff[axis, axis]
                           * lat.face_area(axis) / lat.spacing[axis])
            rows += [lo, hi, lo, hi]
            cols += [lo, hi, hi, lo]
            vals += [coef, coef, -coef, -coef]
        if rows:
            stiff = sp.coo_matrix(
                (np.concatenate(vals),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(n, n)).tocsr()
        else:
            stiff = sp.csr_matrix((n, n))
        self.area = lat.cell_volume  # one lateral cell per interface face
        self.stiffness = stiff + sp.diags(
            np.full(n, self.exchange_total * self.area))
        self.source_values = p.grain_source(lat.cell_centers())
        self._lhs_cache = {}

    def initial_state(self, value: float = 0.0) -> np.ndarray:
        return np.full(self.grid.num_cells, value)

    def _lhs(self, dt):
        if dt not in self._lhs_cache:
            if dt is None:
                self._lhs_cache[dt] = self.stiffness
            else:
                p = self.cfg.params
                c = self.volume * p.rho_c_grain * self.area / dt
                self._lhs_cache[dt] = (self.stiffness
                                       + sp.diags(np.full(self.grid.num_cells, c))).tocsr()
        return self._lhs_cache[dt]

    def step_from(self, grain_old: np.ndarray, trace_faces: np.ndarray,
                  dt: float | None) -> np.ndarray:
        p = self.cfg.params
        rhs = (self.volume * self.source_values
               + self.exchange_total * trace_faces) * self.area
        if dt is not None:
            rhs = rhs + self.volume * p.rho_c_grain * self.area / dt * grain_old
        system = SparseSystem(matrix=self._lhs(dt), rhs=rhs, symmetric=True,
                              pure_neumann=False)
        return solve_linear(system, self.cfg.solver, x0=grain_old)

    def exchange_rhs(self, grain: np.ndarray) -> np.ndarray:
        return self.exchange_total * grain

    def relax(self, accepted, tilde, eta):
        return accepted + eta * (tilde - accepted)

    def e_norm(self, a: np.ndarray, b: np.ndarray) -> float:
        diff = a - b
        return float(np.sqrt(self.area * diff @ diff))

    def stored_energy(self, grain: np.ndarray) -> float:
        p = self.cfg.params
        return float(self.volume * p.rho_c_grain * self.area * grain.sum())

    def source_rate(self) -> float:
        return float(self.volume * self.area * self.source_values.sum())

    def mean_temperatures(self, grain: np.ndarray) -> np.ndarray:
        return grain


class NullGrain:
    """Degenerate grain side with no exchange at all."""

    def __init__(self, cfg: EffectiveConfig, macro: MacroProblem):
        self.faces = len(macro.midplane)

    def initial_state(self, value: float = 0.0) -> np.ndarray:
        return np.zeros(self.faces)

    def step_from(self, grain_old, trace_faces, dt):
        return np.zeros(self.faces)

    def exchange_rhs(self, grain) -> np.ndarray:
        return np.zeros(self.faces)

    def relax(self, accepted, tilde, eta):
        return np.zeros(self.faces)

    def e_norm(self, a, b) -> float:
        return 0.0

    def stored_energy(self, grain) -> float:
        return 0.0

    def source_rate(self) -> float:
        return 0.0

    def mean_temperatures(self, grain) -> np.ndarray:
        return np.zeros(self.faces)


def sink_coefficient(cfg: EffectiveConfig) -> float:
    """Total interfacial exchange coefficient per unit interface area."""
    p = cfg.params
    meas = cfg.grain_measures()
    return p.alpha_fluid * meas.area_fluid + p.alpha_solid * meas.area_solid


def build_problem(cfg: EffectiveConfig):
    """Construct the macro problem and the matching grain side."""
    macro = MacroProblem(cfg, sink_coefficient(cfg))
    meas = cfg.grain_measures()
    if meas.area_fluid + meas.area_solid == 0.0:
        grain = NullGrain(cfg, macro)
    elif cfg.params.regime == DISCONNECTED:
        grain = CellBank(cfg, macro)
    else:
        grain = InterfaceLayer(cfg, macro)
    return macro, grain


def initial_state(cfg: EffectiveConfig, macro: MacroProblem, grain) -> CoupledState:
    theta = np.full(macro.grid.num_cells, cfg.initial)
    g0 = grain.initial_state(cfg.initial)
    trace = macro.trace_of(theta, grain.exchange_rhs(g0))
    return CoupledState(t=0.0, theta=theta, trace=trace, grain=g0)


def compute_E(macro: MacroProblem, grain, theta_new, theta_old,
              grain_new, grain_old) -> float:
    """Combined L2 increment of fluid, solid, and grain fields."""
    diff = Field(macro.grid, theta_new - theta_old)
    e_f = norm_l2(diff, macro.fluid_cells)
    e_s = norm_l2(diff, macro.solid_cells)
    e_g = grain.e_norm(grain_new, grain_old)
    return float(np.sqrt(e_f**2 + e_s**2 + e_g**2))


def coupled_time_step(state: CoupledState, macro: MacroProblem, grain,
                      cfg: EffectiveConfig, dt: float | None,
                      step_index: int = 0):
    """One time step of the coupled system via fixed-point iteration.

    A predictor advances every field with the previous step's coupling data;
    each subsequent sweep redoes the macro step with the current grain data,
    then the grain step with the fresh trace, and applies the relaxation
    update to all fields.  Iteration stops when the combined increment drops
    below the tolerance.
    """
    eta = cfg.relaxation
    b0 = grain.exchange_rhs(state.grain)
    theta_i, trace_i = macro.step(state.theta, b0, dt, x0=state.theta)
    grain_i = grain.step_from(state.grain, state.trace, dt)

    errors = []
    converged = False
    for _ in range(cfg.max_inner):
        b = grain.exchange_rhs(grain_i)
        theta_t, trace_t = macro.step(state.theta, b, dt, x0=theta_i)
        grain_t = grain.step_from(state.grain, trace_t, dt)
        theta_next = theta_i + eta * (theta_t - theta_i)
        trace_next = trace_i + eta * (trace_t - trace_i)
        grain_next = grain.relax(grain_i, grain_t, eta)
        err = compute_E(macro, grain, theta_next, theta_i, grain_next, grain_i)
        errors.append(err)
        theta_i, trace_i, grain_i = theta_next, trace_next, grain_next
        if err < cfg.tol:
            converged = True
            break

    report = IterationReport(step_index=step_index, errors=errors,
                             relaxation=eta, converged=converged,
                             iterations=len(errors))
    if not converged and cfg.raise_on_nonconvergence:
        raise SolverError(
            f"coupling iteration did not reach {cfg.tol:g} within "
            f"{cfg.max_inner} sweeps", errors)
    t_new = state.t + (dt if dt is not None else 0.0)
    return CoupledState(t=t_new, theta=theta_i, trace=trace_i,
                        grain=grain_i), report


@dataclass
class EffectiveRun:
    """Trajectory record of one homogenized run."""

    cfg: EffectiveConfig
    macro: MacroProblem
    grain: object
    states: list
    reports: list
    times: np.ndarray
    stored: np.ndarray
    injected: np.ndarray
    boundary: np.ndarray

    @property
    def final(self) -> CoupledState:
        return self.states[-1]

    def final_field(self) -> Field:
        return Field(self.macro.grid, self.final.theta)


def run_effective(cfg: EffectiveConfig, keep_states: bool = False) -> EffectiveRun:
    """March the homogenized model to ``t_end`` (or solve its stationary
    limit) with the coupling iteration per step."""
    macro, grain = build_problem(cfg)
    state = initial_state(cfg, macro, grain)

    times = [0.0]
    stored = [macro.stored_energy(state.theta) + grain.stored_energy(state.grain)]
    injected = [0.0]
    boundary = [0.0]
    states = [state]
    reports = []

    if cfg.stationary:
        steps = [(None, 1)]
    else:
        n_steps = int(round(cfg.t_end / cfg.dt))
        steps = [(cfg.dt, i + 1) for i in range(n_steps)]

    source_rate = macro.source_rate() + grain.source_rate()
    for dt, index in steps:
        state, report = coupled_time_step(state, macro, grain, cfg, dt,
                                          step_index=index)
        reports.append(report)
        times.append(state.t)
        stored.append(macro.stored_energy(state.theta)
                      + grain.stored_energy(state.grain))
        dt_eff = dt if dt is not None else 0.0
        injected.append(injected[-1] + dt_eff * source_rate)
        boundary.append(boundary[-1]
                        + dt_eff * macro.boundary_flux_rate(state.theta))
        if keep_states:
            states.append(state)
        else:
            states = [state]

    return EffectiveRun(cfg=cfg, macro=macro, grain=grain, states=states,
                        reports=reports, times=np.array(times),
                        stored=np.array(stored), injected=np.array(injected),
                        boundary=np.array(boundary))
