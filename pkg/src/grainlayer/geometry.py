"""Grain geometry: reference shapes, exact measures, rasterization, tiling.

The reference cell is the box (0,1)^(d-1) x (-1,1); a grain shape sits inside
it, symmetric about the midplane y_d = 0, periodic in the lateral directions.
Scaling the cell by the layer period ``eps`` and tiling it along the flat
fluid-solid interface produces the resolved perforated domain.

Rasterization is staircase (a cell belongs to the grain iff its center does,
ties resolve to inside) with one global per-side correction factor: the raw
staircase perimeter of a disc tends to 8r instead of 2*pi*r, and uncorrected
Robin exchange would converge to the wrong effective coefficient, so face
measures are rescaled to make the total exchange surface exact per side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .grid import DomainLabels, FaceSet, Grid, Label


class GeometryError(ValueError):
    """Invalid shape parameters or grid misalignment."""


_CENTER = 0.5  # lateral center of the reference cell


@dataclass(frozen=True)
class GeometryMeasures:
    """Exact measures of one reference grain.

    ``area_fluid``/``area_solid`` are the grain surface above/below the
    midplane, ``area_contact`` the flat fluid-solid contact region left open
    in one reference cell.
    """

    volume: float
    area_fluid: float
    area_solid: float
    area_contact: float


@dataclass(frozen=True)
class Disc:
    """Circular grain in a 2D cell, centered on the midplane."""

    r: float
    dim: ClassVar[int] = 2
    spans_lateral: ClassVar[bool] = False

    def __post_init__(self):
        if not 0.0 < self.r < 0.5:
            raise GeometryError("disc radius must lie in (0, 0.5)")

    @property
    def vertical_extent(self) -> float:
        return self.r

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return (pts[:, 0] - _CENTER) ** 2 + pts[:, 1] ** 2 <= self.r**2

    def measures(self) -> GeometryMeasures:
        half = math.pi * self.r
        return GeometryMeasures(volume=math.pi * self.r**2,
                                area_fluid=half, area_solid=half,
                                area_contact=1.0 - 2.0 * self.r)


@dataclass(frozen=True)
class Sphere:
    """Spherical grain in a 3D cell, centered on the midplane."""

    r: float
    dim: ClassVar[int] = 3
    spans_lateral: ClassVar[bool] = False

    def __post_init__(self):
        if not 0.0 < self.r < 0.5:
            raise GeometryError("sphere radius must lie in (0, 0.5)")

    @property
    def vertical_extent(self) -> float:
        return self.r

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return ((pts[:, 0] - _CENTER) ** 2 + (pts[:, 1] - _CENTER) ** 2
                + pts[:, 2] ** 2) <= self.r**2

    def measures(self) -> GeometryMeasures:
        half = 2.0 * math.pi * self.r**2
        return GeometryMeasures(volume=4.0 / 3.0 * math.pi * self.r**3,
                                area_fluid=half, area_solid=half,
                                area_contact=1.0 - math.pi * self.r**2)


@dataclass(frozen=True)
class SphereWithConnectors:
    """Sphere joined to its lateral neighbors by cylinders along both
    lateral axes, forming a connected sieve that still leaves fluid and
    solid in direct contact.

    Closed-form measures require the connector radius to satisfy
    r_c <= r/sqrt(2), which keeps the cylinder-cylinder overlap and the
    sphere caps cut by the connectors strictly inside the sphere.
    """

    r: float
    r_c: float
    dim: ClassVar[int] = 3
    spans_lateral: ClassVar[bool] = True

    def __post_init__(self):
        if not 0.0 < self.r < 0.5:
            raise GeometryError("sphere radius must lie in (0, 0.5)")
        if not 0.0 < self.r_c < self.r:
            raise GeometryError("connector radius must lie in (0, r)")
        if self.r_c > self.r / math.sqrt(2.0):
            raise GeometryError("connector radius must not exceed r/sqrt(2)")

    @property
    def vertical_extent(self) -> float:
        return self.r

    def inside(self, pts: np.ndarray) -> np.ndarray:
        dx = pts[:, 0] - _CENTER
        dy = pts[:, 1] - _CENTER
        dz = pts[:, 2]
        in_sphere = dx * dx + dy * dy + dz * dz <= self.r**2
        in_cyl_x = dy * dy + dz * dz <= self.r_c**2  # axis along y_1
        in_cyl_y = dx * dx + dz * dz <= self.r_c**2  # axis along y_2
        return in_sphere | in_cyl_x | in_cyl_y

    def measures(self) -> GeometryMeasures:
        r, rc = self.r, self.r_c
        a = math.sqrt(r * r - rc * rc)  # axial half-length where the
        # connector is swallowed by the sphere
        # volume: sphere plus two cylinders of length 1, minus their parts
        # inside the sphere (the cylinder-cylinder overlap lies inside it)
        cyl_in_sphere = math.pi * (2.0 * a * rc * rc
                                   + 2.0 * (r * r * (r - a) - (r**3 - a**3) / 3.0))
        volume = (4.0 / 3.0 * math.pi * r**3
                  + 2.0 * (math.pi * rc * rc - cyl_in_sphere))
        # surface: sphere minus four caps where connectors enter, plus the
        # lateral connector surface outside the sphere
        cos_w = a / r
        sphere_part = 4.0 * math.pi * r * r - 4.0 * 2.0 * math.pi * r * r * (1.0 - cos_w)
        cyl_part = 2.0 * 2.0 * math.pi * rc * (1.0 - 2.0 * a)
        half = 0.5 * (sphere_part + cyl_part)
        # midplane cross section: disc plus two strips, inclusion-exclusion
        strip_disc = 2.0 * (rc * a + r * r * math.asin(rc / r))
        cross = (math.pi * r * r + 4.0 * rc
                 - 2.0 * strip_disc - 4.0 * rc * rc + 4.0 * rc * rc)
        return GeometryMeasures(volume=volume, area_fluid=half,
                                area_solid=half, area_contact=1.0 - cross)


@dataclass(frozen=True)
class FullCell:
    """The whole reference cell is grain; no fluid-solid contact remains."""

    dim: int = 3
    spans_lateral: ClassVar[bool] = True

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GeometryError("dimension must be 1, 2, or 3")

    @property
    def vertical_extent(self) -> float:
        return 1.0

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return np.ones(pts.shape[0], dtype=bool)

    def measures(self) -> GeometryMeasures:
        return GeometryMeasures(volume=2.0, area_fluid=1.0,
                                area_solid=1.0, area_contact=0.0)


@dataclass(frozen=True)
class NoGrain:
    """Empty grain set: the domain degenerates to a plain fluid-solid
    bilayer with perfect contact everywhere."""

    dim: int = 2
    spans_lateral: ClassVar[bool] = False

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GeometryError("dimension must be 1, 2, or 3")

    @property
    def vertical_extent(self) -> float:
        return 0.0

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros(pts.shape[0], dtype=bool)

    def measures(self) -> GeometryMeasures:
        return GeometryMeasures(volume=0.0, area_fluid=0.0,
                                area_solid=0.0, area_contact=1.0)


@dataclass(frozen=True)
class Slab:
    """Full horizontal slab of thickness w, the layered-media oracle shape."""

    w: float
    dim: int = 3
    spans_lateral: ClassVar[bool] = True

    def __post_init__(self):
        if not 0.0 < self.w < 2.0:
            raise GeometryError("slab thickness must lie in (0, 2)")
        if self.dim not in (1, 2, 3):
            raise GeometryError("dimension must be 1, 2, or 3")

    @property
    def vertical_extent(self) -> float:
        return 0.5 * self.w

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return np.abs(pts[:, -1]) <= 0.5 * self.w

    def measures(self) -> GeometryMeasures:
        return GeometryMeasures(volume=self.w, area_fluid=1.0,
                                area_solid=1.0, area_contact=0.0)


def shape_from_config(kind: str, r: float = 0.4, r_c: float = 0.2,
                      dim: int = 3):
    """Build a shape from its config-file spelling."""
    kind = kind.strip().lower()
    if kind == "disc":
        return Disc(r=r)
    if kind == "sphere":
        return Sphere(r=r)
    if kind == "connected":
        return SphereWithConnectors(r=r, r_c=r_c)
    if kind == "full":
        return FullCell(dim=dim)
    raise GeometryError(f"unknown shape kind {kind!r}")


def exact_measures(shape) -> GeometryMeasures:
    """Exact surface and volume measures of a reference grain."""
    try:
        return shape.measures()
    except AttributeError:
        raise GeometryError(f"unsupported shape {type(shape).__name__!r}") from None


@dataclass
class BoundaryFaces:
    """Staircase boundary faces on one side of a rasterized grain.

    ``inner``/``outer`` are flat cell indices of the grain cell and its
    non-grain neighbor across each face; ``correction`` is the global factor
    that makes the total corrected measure match the exact one.
    """

    inner: np.ndarray
    outer: np.ndarray
    area: float
    correction: float

    def __len__(self) -> int:
        return int(self.inner.size)

    @property
    def measure(self) -> float:
        return len(self) * self.area * self.correction


@dataclass
class RasterMask:
    """A grain shape voxelized onto a unit-cell grid.

    The grid is laterally periodic; the vertical span may be truncated to a
    band around the grain since the exterior carries no physics in the cell
    problems.  ``faces_upper``/``faces_lower`` list the inside|outside faces
    above/below the midplane with their corrected measures.
    """

    shape: object
    resolution: int
    grid: Grid
    inside: np.ndarray
    faces_upper: BoundaryFaces
    faces_lower: BoundaryFaces

    @property
    def inside_volume(self) -> float:
        return float(self.inside.sum()) * self.grid.cell_volume


def _raster_grid(dim: int, n: int, half_height: float) -> Grid:
    nz = int(round(2.0 * half_height * n))
    if abs(nz - 2.0 * half_height * n) > 1e-9 or nz < 2:
        raise GeometryError("vertical extent must align with the resolution")
    dims = (n,) * (dim - 1) + (nz,)
    spacing = (1.0 / n,) * dim
    origin = (0.0,) * (dim - 1) + (-half_height,)
    periodic = (True,) * (dim - 1) + (False,)
    return Grid(dims=dims, spacing=spacing, origin=origin, periodic=periodic)


def rasterize(shape, n: int, half_height: float | None = None) -> RasterMask:
    """Voxelize a shape at ``n`` cells per unit length.

    The correction factors are chosen so that the corrected staircase measure
    of the upper (resp. lower) boundary equals the exact fluid-side (resp.
    solid-side) surface measure.  Vertical box faces are never boundary
    faces: catalog shapes either stay clear of y_d = +-1 or fill the cell
    completely.
    """
    if n < 8:
        raise GeometryError("resolution must be at least 8 cells per unit")
    if half_height is None:
        half_height = 1.0
    if half_height > 1.0:
        raise GeometryError("half height cannot exceed the reference cell")
    if shape.vertical_extent > half_height + 1e-12:
        raise GeometryError("truncated box does not contain the grain")
    g = _raster_grid(shape.dim, n, half_height)
    inside = shape.inside(g.cell_centers())
    measures = exact_measures(shape)

    up_inner, up_outer, lo_inner, lo_outer = [], [], [], []
    centers_z = g.cell_centers()[:, -1]
    for axis in range(g.ndim):
        wrap = g.periodic[axis]
        lo, hi = g.neighbor_pairs(axis, wrap=wrap)
        cross = inside[lo] != inside[hi]
        if not cross.any():
            continue
        lo_c, hi_c = lo[cross], hi[cross]
        inner = np.where(inside[lo_c], lo_c, hi_c)
        outer = np.where(inside[lo_c], hi_c, lo_c)
        if axis == g.ndim - 1:
            face_z = np.maximum(centers_z[lo_c], centers_z[hi_c]) - 0.5 * g.spacing[-1]
        else:
            face_z = centers_z[lo_c]
        upper = face_z > 0.0
        if np.any(np.abs(face_z) < 0.25 * g.spacing[-1]):
            raise GeometryError("boundary face on the midplane: shape is not "
                                "symmetric about y_d = 0")
        up_inner.append(inner[upper])
        up_outer.append(outer[upper])
        lo_inner.append(inner[~upper])
        lo_outer.append(outer[~upper])

    area = g.face_area(0)  # uniform spacing: every face has the same area

    def _bundle(inner_parts, outer_parts, exact: float) -> BoundaryFaces:
        inner = np.concatenate(inner_parts) if inner_parts else np.empty(0, dtype=int)
        outer = np.concatenate(outer_parts) if outer_parts else np.empty(0, dtype=int)
        staircase = inner.size * area
        corr = exact / staircase if staircase > 0.0 else 1.0
        return BoundaryFaces(inner=inner, outer=outer, area=area, correction=corr)

    return RasterMask(shape=shape, resolution=n, grid=g, inside=inside,
                      faces_upper=_bundle(up_inner, up_outer, measures.area_fluid),
                      faces_lower=_bundle(lo_inner, lo_outer, measures.area_solid))


def _check_alignment(extent, eps: float, h: float):
    """Validate the tiling constraints and suggest a spacing on failure."""
    d = len(extent)
    lateral = extent[:-1]
    height = extent[-1]
    problems = []
    m = eps / h
    if abs(m - round(m)) > 1e-9 * m or round(m) < 8:
        problems.append("h must divide eps with at least 8 cells per period")
    p = height / h
    if abs(p - round(p)) > 1e-9 * max(p, 1.0):
        problems.append("h must divide the domain height so the midplane "
                        "falls on a face layer")
    for L in lateral:
        k = L / eps
        if abs(k - round(k)) > 1e-9 * max(k, 1.0):
            problems.append("eps must divide every lateral extent")
            break
    if problems:
        m_min = max(8, math.ceil(eps / h - 1e-9))
        while m_min < 10_000:
            cand = eps / m_min
            if abs(height / cand - round(height / cand)) < 1e-9 * max(height / cand, 1.0):
                break
            m_min += 1
        suggestion = eps / m_min
        raise GeometryError("; ".join(problems)
                            + f"; smallest valid spacing <= h is {suggestion:.12g}")
    return int(round(m))


def build_perforated_domain(shape, eps: float, extent, h: float,
                            lateral_periodic: bool = False) -> DomainLabels:
    """Label a Cartesian grid over ``prod (0, L_i) x (-H, H)`` with an
    eps-periodic grain layer and classify its interface faces.

    ``extent`` gives the lateral lengths and the half-height H as its last
    entry.  Robin face corrections are global per side and scale the
    staircase measure to the exact per-grain surface ``eps^(d-1) * gamma``.
    """
    d = shape.dim
    if len(extent) != d:
        raise GeometryError("extent length must match the shape dimension")
    m = _check_alignment(extent, eps, h)
    lateral_dims = tuple(int(round(L / h)) for L in extent[:-1])
    nz = 2 * int(round(extent[-1] / h))
    dims = lateral_dims + (nz,)
    grid = Grid(dims=dims, spacing=(h,) * d,
                origin=(0.0,) * (d - 1) + (-extent[-1],),
                periodic=(lateral_periodic,) * (d - 1) + (False,))

    # reference coordinates from integer indices: exact periodicity
    idx = np.indices(dims)
    z_index = idx[-1] - nz // 2  # cell center sits at (z_index + 0.5) * h
    zc = (z_index + 0.5).astype(float)
    labels = np.where(zc > 0.0, int(Label.FLUID), int(Label.SOLID)).astype(np.int8)
    layer = np.abs(zc) < m
    if layer.any():
        ref = np.empty((int(layer.sum()), d))
        for a in range(d - 1):
            ref[:, a] = ((idx[a][layer] % m) + 0.5) / m
        ref[:, -1] = zc[layer] / m
        grain = shape.inside(ref)
        layer_labels = labels[layer]
        layer_labels[grain] = int(Label.GRAIN)
        labels[layer] = layer_labels
    labels = labels.ravel()

    n_grains = 1.0
    for L in extent[:-1]:
        n_grains *= round(L / eps)
    measures = exact_measures(shape)
    exact_f = n_grains * eps ** (d - 1) * measures.area_fluid
    exact_s = n_grains * eps ** (d - 1) * measures.area_solid

    faces = {"fluid_solid": [], "fluid_grain": [], "solid_grain": [],
             "midplane": []}
    area = grid.face_area(0)
    count_f = 0
    count_s = 0
    for axis in range(d):
        lo, hi = grid.neighbor_pairs(axis)
        if lo.size == 0:
            continue
        ll, lr = labels[lo], labels[hi]
        pair_min = np.minimum(ll, lr)
        pair_max = np.maximum(ll, lr)
        fs = (pair_min == Label.FLUID) & (pair_max == Label.SOLID)
        fg = (pair_min == Label.FLUID) & (pair_max == Label.GRAIN)
        sg = (pair_min == Label.SOLID) & (pair_max == Label.GRAIN)
        if fs.any():
            faces["fluid_solid"].append(FaceSet(axis, lo[fs], hi[fs], area))
        if fg.any():
            faces["fluid_grain"].append(FaceSet(axis, lo[fg], hi[fg], area))
            count_f += int(fg.sum())
        if sg.any():
            faces["solid_grain"].append(FaceSet(axis, lo[sg], hi[sg], area))
            count_s += int(sg.sum())
    # midplane faces: vertical-axis pairs whose face sits at x_d = 0
    lo, hi = grid.neighbor_pairs(d - 1)
    ml = (lo % nz) == nz // 2 - 1
    faces["midplane"].append(FaceSet(d - 1, lo[ml], hi[ml], area))

    corr_f = exact_f / (count_f * area) if count_f else 1.0
    corr_s = exact_s / (count_s * area) if count_s else 1.0
    for fs in faces["fluid_grain"]:
        fs.correction = corr_f
    for fs in faces["solid_grain"]:
        fs.correction = corr_s
    faces = {k: v for k, v in faces.items() if v}

    return DomainLabels(grid=grid, labels=labels, faces=faces,
                        corrections={"fluid_grain": corr_f,
                                     "solid_grain": corr_s})


def build_layered_domain(extent, h: float, dim: int,
                         lateral_periodic: bool = False) -> DomainLabels:
    """Grain-free fluid/solid bilayer used by the effective models.

    Same box convention as the perforated builder; the midplane face list
    carries the interface where the homogenized exchange acts.
    """
    if len(extent) != dim:
        raise GeometryError("extent length must match the dimension")
    lateral_dims = tuple(int(round(L / h)) for L in extent[:-1])
    for L, nl in zip(extent[:-1], lateral_dims):
        if abs(nl * h - L) > 1e-9 * max(L, 1.0):
            raise GeometryError("h must divide every lateral extent")
    nz = 2 * int(round(extent[-1] / h))
    if abs(nz * h - 2.0 * extent[-1]) > 1e-9:
        raise GeometryError("h must divide the domain height")
    dims = lateral_dims + (nz,)
    grid = Grid(dims=dims, spacing=(h,) * dim,
                origin=(0.0,) * (dim - 1) + (-extent[-1],),
                periodic=(lateral_periodic,) * (dim - 1) + (False,))
    idx = np.indices(dims)
    above = idx[-1] >= nz // 2
    labels = np.where(above, int(Label.FLUID), int(Label.SOLID)).astype(np.int8).ravel()

    lo, hi = grid.neighbor_pairs(dim - 1)
    ml = (lo % nz) == nz // 2 - 1
    midplane = FaceSet(dim - 1, lo[ml], hi[ml], grid.face_area(dim - 1))
    faces = {"fluid_solid": [midplane], "midplane": [midplane]}
    return DomainLabels(grid=grid, labels=labels, faces=faces, corrections={})
