"""Cartesian cell-centered finite-volume core.

Provides grids, material labels, interface face sets, operator assembly for
heterogeneous diffusion with transmission conditions, first-order upwind
advection, backward-Euler time stepping, and discrete norms.

Temperature jumps across grain boundaries come for free in this layout:
adjacent cells in different materials couple only through the Robin exchange
term, so no degrees of freedom are duplicated at interfaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import scipy.sparse as sp

from .linalg import SolverConfig, SparseSystem, combine, solve_linear


class Label(IntEnum):
    FLUID = 0
    SOLID = 1
    GRAIN = 2


class AssemblyError(ValueError):
    """A face class is present but has no transmission rule, or a boundary
    condition conflicts with the grid."""


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid of cell-centered unknowns.

    The last axis is the vertical direction; lateral axes may be periodic.
    Cells are stored flat in C order.
    """

    dims: tuple
    spacing: tuple
    origin: tuple
    periodic: tuple

    def __post_init__(self):
        d = len(self.dims)
        if not (len(self.spacing) == len(self.origin) == len(self.periodic) == d):
            raise ValueError("grid descriptor lengths disagree")
        if any(n < 1 for n in self.dims):
            raise ValueError("grid dimensions must be positive")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def face_area(self, axis: int) -> float:
        return self.cell_volume / self.spacing[axis]

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        h = self.spacing[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * h

    def cell_centers(self) -> np.ndarray:
        """Coordinates of all cell centers, shape (num_cells, ndim)."""
        axes = [self.axis_centers(a) for a in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def index_array(self) -> np.ndarray:
        return np.arange(self.num_cells).reshape(self.dims)

    def neighbor_pairs(self, axis: int, wrap=None):
        """Flat indices (lo, hi) of cells adjacent along ``axis``.

        With ``wrap`` (defaults to the axis periodicity) the pair between the
        last and first cell along the axis is appended.
        """
        if wrap is None:
            wrap = self.periodic[axis]
        idx = np.moveaxis(self.index_array(), axis, -1)
        lo = idx[..., :-1].ravel()
        hi = idx[..., 1:].ravel()
        if wrap and self.dims[axis] > 1:
            lo = np.concatenate([lo, idx[..., -1].ravel()])
            hi = np.concatenate([hi, idx[..., 0].ravel()])
        return lo, hi

    def boundary_cells(self, axis: int, side: str) -> np.ndarray:
        """Flat indices of the cell layer at the low/high end of ``axis``."""
        idx = np.moveaxis(self.index_array(), axis, -1)
        layer = idx[..., 0] if side == "low" else idx[..., -1]
        return layer.ravel()


@dataclass
class Field:
    """A scalar unknown attached to the cells of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.num_cells:
            raise ValueError("field length does not match cell count")

    def reshape(self) -> np.ndarray:
        return self.values.reshape(self.grid.dims)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


@dataclass
class FaceSet:
    """A set of interior faces belonging to one interface class.

    ``lo``/``hi`` are flat cell indices on each side (lo has the smaller
    running coordinate, so for vertical midplane faces lo is the solid side).
    ``correction`` rescales the staircase face measure so the class total
    matches the exact interface measure.
    """

    axis: int
    lo: np.ndarray
    hi: np.ndarray
    area: float
    correction: float = 1.0

    def __len__(self) -> int:
        return int(self.lo.size)

    @property
    def measure(self) -> float:
        return len(self) * self.area * self.correction


@dataclass(frozen=True)
class PerfectContact:
    """Temperature and normal-flux continuity (harmonic-mean two-point flux)."""


@dataclass(frozen=True)
class Robin:
    """Interfacial flux proportional to the temperature jump."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("Robin exchange coefficient must be positive")


@dataclass(frozen=True)
class TransmissionSpec:
    """Per-interface-class coupling rules used during assembly."""

    fluid_solid: object = PerfectContact()
    fluid_grain: object = None
    solid_grain: object = None


@dataclass
class DomainLabels:
    """Per-cell material tags plus classified interface face lists.

    ``faces`` maps interface class names ("fluid_solid", "fluid_grain",
    "solid_grain", "midplane") to lists of FaceSet (one per axis present).
    ``corrections`` holds the global staircase-to-exact surface factors for
    the grain Robin classes.
    """

    grid: Grid
    labels: np.ndarray
    faces: dict
    corrections: dict

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8).ravel()
        if self.labels.size != self.grid.num_cells:
            raise ValueError("label array does not match cell count")
        self.corrections = {"fluid_grain": 1.0, "solid_grain": 1.0,
                            **self.corrections}

    def cells_of(self, label: Label) -> np.ndarray:
        return np.flatnonzero(self.labels == int(label))

    def face_sets(self, name: str) -> list:
        return self.faces.get(name, [])


def uniform_labels(grid: Grid, label: Label = Label.FLUID) -> DomainLabels:
    """Single-material domain; handy for plain diffusion problems and tests."""
    labels = np.full(grid.num_cells, int(label), dtype=np.int8)
    return DomainLabels(grid=grid, labels=labels, faces={}, corrections={})


def _face_keys(grid: Grid, axis: int, lo: np.ndarray) -> np.ndarray:
    # an (axis, lo-cell) pair identifies an interior face uniquely
    return axis * grid.num_cells + lo


class _CooBuilder:
    """Accumulates COO triplets and a right-hand side."""

    def __init__(self, n: int):
        self.n = n
        self.rows = []
        self.cols = []
        self.vals = []
        self.rhs = np.zeros(n)

    def add(self, rows, cols, vals):
        rows = np.asarray(rows)
        self.rows.append(rows)
        self.cols.append(np.asarray(cols))
        self.vals.append(np.broadcast_to(np.asarray(vals, dtype=float),
                                         rows.shape).copy())

    def add_symmetric_pairs(self, lo, hi, coef):
        self.add(lo, lo, coef)
        self.add(hi, hi, coef)
        self.add(lo, hi, -coef)
        self.add(hi, lo, -coef)

    def matrix(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((self.n, self.n))
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n)).tocsr()


def assemble_diffusion(domain: DomainLabels, kappa: dict,
                       trans: TransmissionSpec | None = None,
                       dirichlet: dict | None = None,
                       skip_faces=None) -> SparseSystem:
    """Assemble the diffusion/exchange operator for a labeled domain.

    Conduction faces (same material, or fluid|solid under perfect contact)
    get the harmonic-mean two-point flux.  Faces between a grain cell and a
    fluid/solid cell couple the two adjacent cells purely through the Robin
    coefficient times the corrected face area; there is no geometric
    conductivity term across such a face, so the temperature jump is the
    plain difference of the two cell values.

    Outer boundaries are zero-flux unless a Dirichlet value is configured for
    an ``(axis, side)`` pair; Dirichlet caps use the ghost-value flux
    ``2*kappa*(value - theta_cell)/h``.

    ``skip_faces`` excludes the given FaceSet(s) from assembly so that a
    caller can install its own interface stencil there (used by the
    effective models for the midplane).
    """
    trans = trans or TransmissionSpec()
    g = domain.grid
    n = g.num_cells
    lab = domain.labels
    kap = _kappa_per_cell(lab, kappa, n)

    skip_keys = None
    if skip_faces is not None:
        sets = skip_faces if isinstance(skip_faces, (list, tuple)) else [skip_faces]
        if sets:
            skip_keys = np.concatenate([_face_keys(g, fs.axis, fs.lo) for fs in sets])

    b = _CooBuilder(n)

    for axis in range(g.ndim):
        lo, hi = g.neighbor_pairs(axis)
        if lo.size == 0:
            continue
        if skip_keys is not None:
            keep = ~np.isin(_face_keys(g, axis, lo), skip_keys)
            lo, hi = lo[keep], hi[keep]
        area = g.face_area(axis)
        h = g.spacing[axis]
        ll, lr = lab[lo], lab[hi]
        pair_min = np.minimum(ll, lr)
        pair_max = np.maximum(ll, lr)

        same = ll == lr
        fs_pair = (pair_min == Label.FLUID) & (pair_max == Label.SOLID)
        fg_pair = (pair_min == Label.FLUID) & (pair_max == Label.GRAIN)
        sg_pair = (pair_min == Label.SOLID) & (pair_max == Label.GRAIN)

        conduction = same.copy()
        robin_classes = []
        if isinstance(trans.fluid_solid, PerfectContact):
            conduction |= fs_pair
        elif isinstance(trans.fluid_solid, Robin):
            robin_classes.append((fs_pair, trans.fluid_solid, 1.0))
        elif fs_pair.any():
            raise AssemblyError("fluid|solid faces present but no rule given")

        if fg_pair.any():
            if not isinstance(trans.fluid_grain, Robin):
                raise AssemblyError("fluid|grain faces present but no rule given")
            robin_classes.append((fg_pair, trans.fluid_grain,
                                  domain.corrections.get("fluid_grain", 1.0)))
        if sg_pair.any():
            if not isinstance(trans.solid_grain, Robin):
                raise AssemblyError("solid|grain faces present but no rule given")
            robin_classes.append((sg_pair, trans.solid_grain,
                                  domain.corrections.get("solid_grain", 1.0)))

        if conduction.any():
            kl, kr = kap[lo[conduction]], kap[hi[conduction]]
            coef = (2.0 * kl * kr / (kl + kr)) * area / h
            b.add_symmetric_pairs(lo[conduction], hi[conduction], coef)
        for mask, rule, corr in robin_classes:
            if mask.any():
                b.add_symmetric_pairs(lo[mask], hi[mask],
                                      rule.alpha * area * corr)

    if dirichlet:
        for (axis, side), value in dirichlet.items():
            if g.periodic[axis]:
                raise AssemblyError("Dirichlet value on a periodic axis")
            cells = g.boundary_cells(axis, side)
            coef = 2.0 * kap[cells] * g.face_area(axis) / g.spacing[axis]
            b.add(cells, cells, coef)
            b.rhs[cells] += coef * value

    return SparseSystem(matrix=b.matrix(), rhs=b.rhs, symmetric=True,
                        pure_neumann=not dirichlet)


def _kappa_per_cell(labels: np.ndarray, kappa: dict, n: int) -> np.ndarray:
    kap = np.full(n, np.nan)
    for label, value in kappa.items():
        if value <= 0.0:
            raise ValueError("conductivity must be positive")
        kap[labels == int(label)] = value
    if np.isnan(kap).any():
        missing = np.unique(labels[np.isnan(kap)])
        raise AssemblyError(f"no conductivity given for labels {missing.tolist()}")
    return kap


def assemble_advection(domain: DomainLabels, velocity, rho_c: float,
                       inflow_value: float = 0.0) -> SparseSystem:
    """First-order upwind advection over fluid cells.

    ``velocity`` maps an (N, d) array of points to (N, d) velocities; it must
    be divergence free and vanish on every non-fluid cell (checked at cell
    centers) and on faces touching non-fluid cells.  At non-periodic outer
    boundaries, outflow uses the upwind interior value and inflow carries
    ``inflow_value``.
    """
    g = domain.grid
    n = g.num_cells
    lab = domain.labels
    centers = g.cell_centers()

    non_fluid = lab != Label.FLUID
    if non_fluid.any():
        v_cells = np.asarray(velocity(centers[non_fluid]))
        if np.abs(v_cells).max(initial=0.0) > 0.0:
            raise AssemblyError("nonzero velocity sampled on a non-fluid cell")

    b = _CooBuilder(n)

    for axis in range(g.ndim):
        lo, hi = g.neighbor_pairs(axis)
        if lo.size == 0:
            continue
        area = g.face_area(axis)
        h = g.spacing[axis]
        face_pts = centers[lo].copy()
        face_pts[:, axis] += 0.5 * h
        v_face = np.asarray(velocity(face_pts))[:, axis]

        fluid_pair = (lab[lo] == Label.FLUID) & (lab[hi] == Label.FLUID)
        mixed = ~fluid_pair & (np.abs(v_face) > 0.0)
        if mixed.any():
            raise AssemblyError("nonzero velocity on a face touching a "
                                "non-fluid cell")

        q = rho_c * v_face * area
        pos = fluid_pair & (q > 0.0)
        neg = fluid_pair & (q < 0.0)
        if pos.any():
            b.add(lo[pos], lo[pos], q[pos])
            b.add(hi[pos], lo[pos], -q[pos])
        if neg.any():
            b.add(lo[neg], hi[neg], q[neg])
            b.add(hi[neg], hi[neg], -q[neg])

        if not g.periodic[axis]:
            for side, sign in (("low", -1.0), ("high", 1.0)):
                cells = g.boundary_cells(axis, side)
                fluid = cells[lab[cells] == Label.FLUID]
                if fluid.size == 0:
                    continue
                pts = centers[fluid].copy()
                pts[:, axis] += sign * 0.5 * h
                vn = sign * np.asarray(velocity(pts))[:, axis]
                out = vn > 0.0
                if out.any():
                    b.add(fluid[out], fluid[out], rho_c * vn[out] * area)
                inflow = vn < 0.0
                if inflow.any() and inflow_value != 0.0:
                    b.rhs[fluid[inflow]] -= rho_c * vn[inflow] * area * inflow_value

    return SparseSystem(matrix=b.matrix(), rhs=b.rhs, symmetric=False,
                        pure_neumann=False)


def backward_euler_step(state: Field, capacity, systems, source,
                        dt: float, cfg: SolverConfig | None = None,
                        x0: np.ndarray | None = None) -> Field:
    """One implicit Euler step ``(C/dt + A) u = C/dt u_old + b + source*vol``.

    ``capacity`` is the volumetric heat capacity per cell (scalar or array),
    ``systems`` one SparseSystem or a list to be summed, ``source`` a
    volumetric source density per cell.  The capacity matrix is the diagonal
    of capacity times cell volume.
    """
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    grid = state.grid
    vol = grid.cell_volume
    n = grid.num_cells
    cap = np.broadcast_to(np.asarray(capacity, dtype=float), (n,))
    if (cap <= 0.0).any():
        raise ValueError("capacity must be positive in every cell")
    sys_all = combine(systems if isinstance(systems, (list, tuple)) else [systems])
    c_over_dt = cap * vol / dt
    matrix = sys_all.matrix + sp.diags(c_over_dt)
    src = np.broadcast_to(np.asarray(source, dtype=float), (n,))
    rhs = c_over_dt * state.values + sys_all.rhs + src * vol
    full = SparseSystem(matrix=matrix.tocsr(), rhs=rhs,
                        symmetric=sys_all.symmetric, pure_neumann=False)
    guess = state.values if x0 is None else x0
    return Field(grid, solve_linear(full, cfg, x0=guess))


def solve_stationary(grid: Grid, systems, source,
                     cfg: SolverConfig | None = None,
                     x0: np.ndarray | None = None) -> Field:
    """Solve ``A u = b + source*vol`` for the combined operator."""
    sys_all = combine(systems if isinstance(systems, (list, tuple)) else [systems])
    src = np.broadcast_to(np.asarray(source, dtype=float), (grid.num_cells,))
    full = SparseSystem(matrix=sys_all.matrix,
                        rhs=sys_all.rhs + src * grid.cell_volume,
                        symmetric=sys_all.symmetric,
                        pure_neumann=sys_all.pure_neumann)
    return Field(grid, solve_linear(full, cfg, x0=x0))


# ---------------------------------------------------------------------------
# discrete norms

def norm_l2(field: Field, cells: np.ndarray | None = None) -> float:
    """Volume-weighted L2 norm, optionally restricted to a cell subset."""
    v = field.values if cells is None else field.values[cells]
    return float(np.sqrt(field.grid.cell_volume * np.sum(v * v)))


def norm_linf(field: Field, cells: np.ndarray | None = None) -> float:
    v = field.values if cells is None else field.values[cells]
    return float(np.abs(v).max(initial=0.0))


def norm_jump(field: Field, face_sets) -> float:
    """Face-area-weighted L2 norm of the jump across the given face sets."""
    sets = face_sets if isinstance(face_sets, (list, tuple)) else [face_sets]
    total = 0.0
    for fs in sets:
        if len(fs) == 0:
            continue
        jump = field.values[fs.hi] - field.values[fs.lo]
        total += fs.area * fs.correction * float(np.sum(jump * jump))
    return float(np.sqrt(total))


def grad_norm_sq(field: Field, pair_sets) -> float:
    """Squared L2 norm of the face-based gradient over (axis, lo, hi) sets.

    Each face contributes ``area*h*((u_hi-u_lo)/h)^2``, i.e. the cell volume
    share it represents; summed over all axes this is the standard discrete
    Dirichlet energy with unit conductivity.
    """
    g = field.grid
    total = 0.0
    for axis, lo, hi in pair_sets:
        if lo.size == 0:
            continue
        h = g.spacing[axis]
        diff = (field.values[hi] - field.values[lo]) / h
        total += g.face_area(axis) * h * float(np.sum(diff * diff))
    return total
