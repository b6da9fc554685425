"""Meridian cross-section of an axisymmetric domain and its structured grid.

The 3-D domain is the solid of revolution of the rectangle
``[r_min, r_max] x [z_min, z_max]`` about the z-axis: a solid torus when
``r_min > 0`` and a solid cylinder when ``r_min == 0``.  Node arrays are
indexed ``[i, j]`` with ``i`` along r and ``j`` along z.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERIOR = 0
BOUNDARY = 1
AXIS = 2


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class MeridianDomain:
    r_min: float
    r_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        if self.r_min < 0:
            raise GeometryError(f"r_min must be >= 0, got {self.r_min}")
        if not self.r_max > self.r_min:
            raise GeometryError("r_max must exceed r_min")
        if not self.z_max > self.z_min:
            raise GeometryError("z_max must exceed z_min")

    @property
    def touches_axis(self) -> bool:
        return self.r_min == 0.0

    @property
    def d(self) -> float:
        """sup of r over the domain."""
        return self.r_max

    def contains(self, r, z, tol=1e-12) -> bool:
        return (self.r_min - tol <= r <= self.r_max + tol
                and self.z_min - tol <= z <= self.z_max + tol)

    def scaled(self, factor: float) -> "MeridianDomain":
        return MeridianDomain(self.r_min * factor, self.r_max * factor,
                              self.z_min * factor, self.z_max * factor)


@dataclass(frozen=True)
class MeridianGrid:
    domain: MeridianDomain
    n_r: int
    n_z: int
    r: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    kind: np.ndarray = field(repr=False)

    @property
    def h_r(self) -> float:
        return (self.domain.r_max - self.domain.r_min) / (self.n_r - 1)

    @property
    def h_z(self) -> float:
        return (self.domain.z_max - self.domain.z_min) / (self.n_z - 1)

    @property
    def shape(self):
        return (self.n_r, self.n_z)

    @property
    def R(self) -> np.ndarray:
        return np.broadcast_to(self.r[:, None], self.shape)

    @property
    def Z(self) -> np.ndarray:
        return np.broadcast_to(self.z[None, :], self.shape)

    @property
    def interior(self) -> np.ndarray:
        return self.kind == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.kind == BOUNDARY

    @property
    def axis(self) -> np.ndarray:
        return self.kind == AXIS

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def volume_weights(self) -> np.ndarray:
        """Trapezoid weights for the 3-D volume measure ``2 pi r dr dz``.

        On the axis column the cell weight is the exact ``int_0^{h/2} r dr``.
        """
        wr = self.r * self.h_r
        wr[0] *= 0.5
        wr[-1] *= 0.5
        if self.domain.touches_axis:
            wr[0] = self.h_r ** 2 / 8.0
        wz = np.full(self.n_z, self.h_z)
        wz[0] *= 0.5
        wz[-1] *= 0.5
        return 2.0 * np.pi * wr[:, None] * wz[None, :]


def build_grid(domain: MeridianDomain, n_r: int, n_z: int) -> MeridianGrid:
    if n_r < 3 or n_z < 3:
        raise GeometryError(f"need n_r, n_z >= 3, got ({n_r}, {n_z})")
    r = domain.r_min + np.arange(n_r) * ((domain.r_max - domain.r_min) / (n_r - 1))
    z = domain.z_min + np.arange(n_z) * ((domain.z_max - domain.z_min) / (n_z - 1))
    # pin the end nodes exactly to the faces
    r[-1] = domain.r_max
    z[-1] = domain.z_max
    kind = np.full((n_r, n_z), INTERIOR, dtype=np.int8)
    kind[-1, :] = BOUNDARY
    kind[:, 0] = BOUNDARY
    kind[:, -1] = BOUNDARY
    if domain.touches_axis:
        kind[0, 1:-1] = AXIS
    else:
        kind[0, :] = BOUNDARY
    for arr in (r, z, kind):
        arr.flags.writeable = False
    return MeridianGrid(domain, n_r, n_z, r, z, kind)


def _faces_at(grid: MeridianGrid, i: int, j: int):
    faces = []
    if i == 0 and not grid.domain.touches_axis:
        faces.append((-1.0, 0.0))
    if i == grid.n_r - 1:
        faces.append((1.0, 0.0))
    if j == 0:
        faces.append((0.0, -1.0))
    if j == grid.n_z - 1:
        faces.append((0.0, 1.0))
    return faces


def outward_normal(grid: MeridianGrid, i: int, j: int) -> np.ndarray:
    """Outward unit normal ``(n_r, n_z)`` at a boundary node."""
    if grid.kind[i, j] != BOUNDARY:
        raise GeometryError(f"node ({i}, {j}) is not a physical-boundary node")
    faces = _faces_at(grid, i, j)
    if len(faces) != 1:
        raise GeometryError(f"ambiguous normal at corner node ({i}, {j})")
    return np.array(faces[0])


def wall_distance(grid_or_domain, r, z):
    """Distance from (r, z) to the physical boundary of the 3-D solid.

    For a rectangular meridian the nearest boundary point lies in the same
    meridian half-plane, so this is the minimum distance to the physical faces.
    The r = 0 edge is not part of the boundary when the domain touches the axis.
    Accepts scalars or arrays.
    """
    dom = getattr(grid_or_domain, "domain", grid_or_domain)
    r_arr = np.asarray(r, dtype=float)
    z_arr = np.asarray(z, dtype=float)
    tol = 1e-12 * max(1.0, dom.r_max, abs(dom.z_max), abs(dom.z_min))
    outside = ((r_arr < dom.r_min - tol) | (r_arr > dom.r_max + tol)
               | (z_arr < dom.z_min - tol) | (z_arr > dom.z_max + tol))
    if np.any(outside):
        raise GeometryError("point outside domain")
    d = np.minimum.reduce([dom.r_max - r_arr, z_arr - dom.z_min, dom.z_max - z_arr])
    if not dom.touches_axis:
        d = np.minimum(d, r_arr - dom.r_min)
    d = np.maximum(d, 0.0)
    return float(d) if d.ndim == 0 else d


def wall_distance_field(grid: MeridianGrid) -> np.ndarray:
    return wall_distance(grid, grid.R, grid.Z)
