"""Unit-cell problems on the reference grain.

Two kinds of solves live here:

* transient heat steps on one grain, driven through Robin exchange by the
  macroscopic temperature trace at the grain's interface location (the
  per-point problems of the disconnected-layer limit model), and
* stationary corrector solves on a laterally periodic cell that yield the
  effective lateral conductivity tensor of a connected grain layer.

The corrector problems use an ersatz-material formulation: the complement of
the grain is filled with a near-zero conductivity so the whole periodic box
can be solved with plain volumetric assembly.  Imposing the corrector's
Neumann data on the staircase boundary directly would misrepresent the
surface normals (they are axis-aligned), while the volumetric form needs no
boundary normals at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from . import geometry
from .grid import Grid
from .linalg import SolverConfig, SparseSystem, solve_linear


class CellProblemError(ValueError):
    pass


@dataclass
class CellProblem:
    """Shared discrete operators for transient heat solves on one grain.

    Unknowns are the inside cells of the raster; Robin faces couple each
    boundary cell to the macro trace with its corrected face measure.  All
    per-point problems of a bank share this object read-only.
    """

    raster: geometry.RasterMask
    kappa: float
    alpha_fluid: float
    alpha_solid: float
    rho_c: float
    inner_index: np.ndarray      # raster cell -> local unknown (-1 outside)
    conduction: sp.csr_matrix    # grain-internal diffusion
    robin_diag: np.ndarray       # alpha-weighted corrected face measure
    upper_cells: np.ndarray      # local unknowns behind upper faces
    upper_measure: np.ndarray    # corrected measure per upper face
    lower_cells: np.ndarray
    lower_measure: np.ndarray

    @property
    def num_unknowns(self) -> int:
        return int(self.conduction.shape[0])

    @property
    def cell_volume(self) -> float:
        return self.raster.grid.cell_volume

    @property
    def inside_volume(self) -> float:
        return self.num_unknowns * self.cell_volume


def build_cell_problem(shape, n: int, kappa: float, alpha_fluid: float,
                       alpha_solid: float, rho_c: float,
                       half_height: float | None = None) -> CellProblem:
    """Rasterize the shape and assemble the grain-side operators once."""
    raster = geometry.rasterize(shape, n, half_height=half_height)
    g = raster.grid
    inside = raster.inside
    n_in = int(inside.sum())
    if n_in == 0:
        raise CellProblemError("rasterized grain is empty")
    inner_index = np.full(g.num_cells, -1, dtype=np.int64)
    inner_index[inside] = np.arange(n_in)

    rows, cols, vals = [], [], []
    for axis in range(g.ndim):
        lo, hi = g.neighbor_pairs(axis)
        both = inside[lo] & inside[hi]
        if not both.any():
            continue
        il = inner_index[lo[both]]
        ih = inner_index[hi[both]]
        coef = np.full(il.size, kappa * g.face_area(axis) / g.spacing[axis])
        rows += [il, ih, il, ih]
        cols += [il, ih, ih, il]
        vals += [coef, coef, -coef, -coef]
    if rows:
        conduction = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_in, n_in)).tocsr()
    else:
        conduction = sp.csr_matrix((n_in, n_in))

    robin_diag = np.zeros(n_in)
    up = raster.faces_upper
    lo_f = raster.faces_lower
    upper_cells = inner_index[up.inner]
    lower_cells = inner_index[lo_f.inner]
    upper_measure = np.full(len(up), up.area * up.correction)
    lower_measure = np.full(len(lo_f), lo_f.area * lo_f.correction)
    np.add.at(robin_diag, upper_cells, alpha_fluid * upper_measure)
    np.add.at(robin_diag, lower_cells, alpha_solid * lower_measure)

    return CellProblem(raster=raster, kappa=kappa, alpha_fluid=alpha_fluid,
                       alpha_solid=alpha_solid, rho_c=rho_c,
                       inner_index=inner_index, conduction=conduction,
                       robin_diag=robin_diag,
                       upper_cells=upper_cells, upper_measure=upper_measure,
                       lower_cells=lower_cells, lower_measure=lower_measure)


@dataclass
class CellProblemState:
    """Grain temperature at one interface sampling point."""

    location_index: int
    position: np.ndarray
    values: np.ndarray
    t: float = 0.0


def cell_heat_step(problem: CellProblem, values: np.ndarray, trace: float,
                   dt: float | None, source: float,
                   cfg: SolverConfig | None = None) -> np.ndarray:
    """One backward-Euler step of the grain heat equation (``dt=None`` solves
    the stationary problem).

    The Robin boundary is driven by the scalar macro trace: upper faces with
    the fluid-side coefficient, lower faces with the solid-side one.  The
    conductivity is the unscaled grain value; the layer-period factors cancel
    in the limit model.
    """
    cfg = cfg or SolverConfig()
    p = problem
    vol = p.cell_volume
    lhs = p.conduction + sp.diags(p.robin_diag)
    rhs = np.full(p.num_unknowns, source * vol)
    drive = np.zeros(p.num_unknowns)
    np.add.at(drive, p.upper_cells, p.alpha_fluid * p.upper_measure)
    np.add.at(drive, p.lower_cells, p.alpha_solid * p.lower_measure)
    rhs += drive * trace
    if dt is not None:
        if dt <= 0.0:
            raise ValueError("time step must be positive")
        c_over_dt = p.rho_c * vol / dt
        lhs = lhs + sp.diags(np.full(p.num_unknowns, c_over_dt))
        rhs = rhs + c_over_dt * values
    system = SparseSystem(matrix=lhs.tocsr(), rhs=rhs, symmetric=True,
                          pure_neumann=False)
    return solve_linear(system, cfg, x0=values)


def boundary_exchange_integrals(problem: CellProblem, values: np.ndarray):
    """Surface integrals of the grain temperature over the upper and lower
    boundary, with corrected face measures.

    The macro-side sink for exchange coefficient ``alpha_k`` is then
    ``alpha_k * (gamma_k * trace - g_k)``.
    """
    g_f = float(np.sum(problem.upper_measure * values[problem.upper_cells]))
    g_s = float(np.sum(problem.lower_measure * values[problem.lower_cells]))
    return g_f, g_s


# ---------------------------------------------------------------------------
# effective lateral conductivity of a connected layer

@dataclass
class EffectiveConductivity:
    """Effective tensor with its corrector fields.

    The vertical row and column vanish identically; the lateral block is
    symmetric positive semidefinite and bounded by ``kappa * volume``.
    """

    tensor: np.ndarray
    correctors: list
    grid: Grid
    inside: np.ndarray
    kappa: float


def _connected_components_periodic(inside: np.ndarray, dims) -> int:
    """Count inside-cell components with lateral periodic adjacency."""
    mask = inside.reshape(dims)
    structure = ndi.generate_binary_structure(mask.ndim, 1)
    labels, count = ndi.label(mask, structure=structure)
    if count <= 1:
        return count
    parent = list(range(count + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    for axis in range(mask.ndim - 1):  # lateral axes only
        first = np.take(labels, 0, axis=axis).ravel()
        last = np.take(labels, -1, axis=axis).ravel()
        for a, b in zip(first, last):
            if a > 0 and b > 0:
                union(int(a), int(b))
    return len({find(i) for i in range(1, count + 1)})


def effective_conductivity(shape, n: int, kappa_grain: float = 1.0,
                           void_factor: float = 1e-6,
                           cfg: SolverConfig | None = None) -> EffectiveConductivity:
    """Solve the lateral corrector problems and assemble the effective
    conductivity tensor of a connected grain layer.

    For each lateral direction the periodic fluctuation corrector solves a
    Laplace problem on the whole box, with the grain carrying ``kappa_grain``
    and the complement the ersatz value ``void_factor * kappa_grain``.  The
    tensor entry (i, j) is the grain-volume integral of the j-component of
    the corrected unit gradient of corrector i; its vertical corrector is
    identically zero.
    """
    if n < 16:
        raise CellProblemError("corrector solves need at least 16 cells per unit")
    if not getattr(shape, "spans_lateral", False):
        raise CellProblemError("shape does not span the lateral directions; "
                               "no connected layer exists")
    margin = 2.0 / n
    half = min(1.0, math.ceil((shape.vertical_extent + margin) * n) / n)
    raster = geometry.rasterize(shape, n, half_height=half)
    g = raster.grid
    inside = raster.inside
    d = g.ndim

    if _connected_components_periodic(inside, g.dims) != 1:
        raise CellProblemError("rasterized grain is not a single connected "
                               "component under lateral periodicity")

    kap = np.where(inside, kappa_grain, void_factor * kappa_grain)
    pairs = []
    for axis in range(d):
        lo, hi = g.neighbor_pairs(axis)
        kl, kr = kap[lo], kap[hi]
        face_k = 2.0 * kl * kr / (kl + kr)
        pairs.append((axis, lo, hi, face_k))

    nn = g.num_cells
    rows, cols, vals = [], [], []
    for axis, lo, hi, face_k in pairs:
        coef = face_k * g.face_area(axis) / g.spacing[axis]
        rows += [lo, hi, lo, hi]
        cols += [lo, hi, hi, lo]
        vals += [coef, coef, -coef, -coef]
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nn, nn)).tocsr()

    cfg = cfg or SolverConfig(tol=1e-8, project_nullspace=True)
    if not cfg.project_nullspace:
        cfg = SolverConfig(method=cfg.method, tol=cfg.tol,
                           max_iter=cfg.max_iter, project_nullspace=True)

    vol = g.cell_volume
    tensor = np.zeros((d, d))
    correctors = []
    guess = None
    for i in range(d - 1):
        rhs = np.zeros(nn)
        axis, lo, hi, face_k = pairs[i]
        flux = face_k * g.face_area(axis)
        np.add.at(rhs, lo, flux)
        np.add.at(rhs, hi, -flux)
        system = SparseSystem(matrix=matrix, rhs=rhs, symmetric=True,
                              pure_neumann=True)
        psi = solve_linear(system, cfg, x0=guess)
        guess = psi
        correctors.append(psi)
        for j in range(d - 1):
            axis_j, lo_j, hi_j, _ = pairs[j]
            grad_face = (psi[hi_j] - psi[lo_j]) / g.spacing[axis_j]
            if j == i:
                grad_face = grad_face + 1.0
            # average the two faces adjacent to each cell along axis j
            cell_grad = np.zeros(nn)
            counts = np.zeros(nn)
            np.add.at(cell_grad, lo_j, grad_face)
            np.add.at(cell_grad, hi_j, grad_face)
            np.add.at(counts, lo_j, 1.0)
            np.add.at(counts, hi_j, 1.0)
            cell_grad /= np.maximum(counts, 1.0)
            tensor[i, j] = kappa_grain * vol * float(cell_grad[inside].sum())
    correctors.append(np.zeros(nn))  # vertical corrector vanishes

    return EffectiveConductivity(tensor=tensor, correctors=correctors,
                                 grid=g, inside=inside, kappa=kappa_grain)
