"""
Voxel grid model.

The build volume is a dense, regular grid of voxels addressed as
``(x, y, z)`` with ``z`` the slice index.  Per-slice data is stored as
``(ny, nx)`` planes and stacked volumes are ``(nz, ny, nx)`` arrays, so
``plane[y, x]`` and ``volume[z, y, x]`` are the usual access patterns.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

MM_PER_INCH = 25.4


class VoxelClass(enum.IntEnum):
    EXTERIOR = 0
    INTERIOR = 1
    SURFACE = 2


class VoxelCoord(NamedTuple):
    x: int
    y: int
    z: int


@dataclass(frozen=True)
class GridSpec:
    """Regular voxel grid over a physical box.

    Voxel ``(x, y, z)`` spans ``[origin + c * pitch, origin + (c + 1) * pitch)``
    per axis; distances are measured between voxel centers.
    """

    dims: tuple[int, int, int]
    pitch: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        pitch = tuple(float(p) for p in self.pitch)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(pitch) != 3 or len(origin) != 3:
            raise ValueError("dims, pitch and origin must be triples")
        if min(dims) <= 0:
            raise ValueError(f"grid dims must be positive, got {dims}")
        if min(pitch) <= 0:
            raise ValueError(f"grid pitch must be positive, got {pitch}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "pitch", pitch)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def from_bounds(cls, lo, hi, pitch, pad: int = 1) -> "GridSpec":
        """Grid covering the box ``[lo, hi]`` plus ``pad`` empty voxels per side.

        The padding guarantees every voxel of a shape inside the box has
        its full 3x3x3 window in the grid.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        pitch = np.asarray(pitch, dtype=float)
        extent = np.maximum(hi - lo, 0.0)
        # tolerate float noise on extents that are exact multiples of the pitch
        n = np.ceil(extent / pitch - 1e-9).astype(int)
        n = np.maximum(n, 1) + 2 * pad
        origin = lo - pad * pitch
        return cls(tuple(n), tuple(pitch), tuple(origin))

    @classmethod
    def from_dpi(cls, lo, hi, dpi, pad: int = 1) -> "GridSpec":
        pitch = [MM_PER_INCH / float(d) for d in dpi]
        return cls.from_bounds(lo, hi, pitch, pad=pad)

    @property
    def nx(self) -> int:
        return self.dims[0]

    @property
    def ny(self) -> int:
        return self.dims[1]

    @property
    def nz(self) -> int:
        return self.dims[2]

    @property
    def plane_shape(self) -> tuple[int, int]:
        return (self.dims[1], self.dims[0])

    @property
    def layer_thickness(self) -> float:
        """Voxel size along the axis of lowest resolution."""
        return max(self.pitch)

    def center(self, x, y, z):
        """Physical center of voxel(s); accepts scalars or arrays."""
        ox, oy, oz = self.origin
        px, py, pz = self.pitch
        return (
            ox + (np.asarray(x) + 0.5) * px,
            oy + (np.asarray(y) + 0.5) * py,
            oz + (np.asarray(z) + 0.5) * pz,
        )

    def slice_z(self, s: int) -> float:
        return self.origin[2] + (s + 0.5) * self.pitch[2]

    def contains(self, v) -> bool:
        return all(0 <= int(c) < d for c, d in zip(v, self.dims))


def halo_slices(d_max: float, pz: float) -> int:
    """Slices of overlap needed so distance transfer and upward error
    diffusion across a chunk boundary are exact."""
    return int(math.ceil(d_max / pz - 1e-12)) + 1


def neighbors26(v, spec: GridSpec) -> list[VoxelCoord]:
    """In-bounds voxels of the 3x3x3 window around ``v``, excluding ``v``."""
    x, y, z = (int(c) for c in v)
    nx, ny, nz = spec.dims
    out = []
    for dz in (-1, 0, 1):
        zz = z + dz
        if not 0 <= zz < nz:
            continue
        for dy in (-1, 0, 1):
            yy = y + dy
            if not 0 <= yy < ny:
                continue
            for dx in (-1, 0, 1):
                xx = x + dx
                if (dx or dy or dz) and 0 <= xx < nx:
                    out.append(VoxelCoord(xx, yy, zz))
    return out


def in_slice_neighbors(v, class_plane: np.ndarray) -> list[VoxelCoord]:
    """Surface voxels among the 8 in-slice neighbors of ``v``."""
    x, y, z = (int(c) for c in v)
    ny, nx = class_plane.shape
    out = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if not (dx or dy):
                continue
            xx, yy = x + dx, y + dy
            if 0 <= xx < nx and 0 <= yy < ny and class_plane[yy, xx] == VoxelClass.SURFACE:
                out.append(VoxelCoord(xx, yy, z))
    return out


def surface_from_interior(below: np.ndarray | None, here: np.ndarray,
                          above: np.ndarray | None) -> np.ndarray:
    """Class plane for a slice given interior masks of it and its neighbors.

    A voxel is Surface when it is interior and some in-grid voxel of its
    3x3x3 window is not.  ``None`` marks a slice outside the grid, which
    contributes nothing (window clipping).
    """
    ny, nx = here.shape
    stack = [p for p in (below, here, above) if p is not None]
    touches_empty = np.zeros((ny, nx), dtype=bool)
    for p in stack:
        # out-of-grid cells never count as exterior
        padded = np.pad(~p, 1, constant_values=False)
        for dy in range(3):
            for dx in range(3):
                touches_empty |= padded[dy:dy + ny, dx:dx + nx]
    cls = np.zeros((ny, nx), dtype=np.int8)
    cls[here] = VoxelClass.INTERIOR
    cls[here & touches_empty] = VoxelClass.SURFACE
    return cls


@dataclass
class SliceChunk:
    """A resident window of consecutive slices.

    ``planes`` maps a plane name to an array whose first axis runs over
    the ``slice_count`` slices starting at ``first_slice``.
    """

    first_slice: int
    slice_count: int
    halo_slices: int = 0
    planes: dict[str, np.ndarray] = field(default_factory=dict)
    _fill: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.slice_count < self.halo_slices:
            raise ValueError("slice_count must be at least halo_slices")

    @property
    def stop(self) -> int:
        return self.first_slice + self.slice_count

    def local(self, s: int) -> int:
        if not self.first_slice <= s < self.stop:
            raise IndexError(f"slice {s} not resident in [{self.first_slice}, {self.stop})")
        return s - self.first_slice

    def plane(self, name: str, s: int) -> np.ndarray:
        return self.planes[name][self.local(s)]

    def allocate(self, name: str, plane_shape, dtype, fill=0) -> np.ndarray:
        arr = np.full((self.slice_count, *plane_shape), fill, dtype=dtype)
        self.planes[name] = arr
        self._fill[name] = fill
        return arr

    def grow(self, n: int) -> None:
        """Append ``n`` freshly filled slices on top of every plane."""
        if n <= 0:
            return
        for name, arr in self.planes.items():
            extra = np.full((n, *arr.shape[1:]), self._fill.get(name, 0), dtype=arr.dtype)
            self.planes[name] = np.concatenate([arr, extra])
        self.slice_count += n

    def drop_below(self, s: int) -> None:
        """Release slices below ``s``."""
        k = min(max(s - self.first_slice, 0), self.slice_count)
        if k == 0:
            return
        for name, arr in self.planes.items():
            self.planes[name] = arr[k:].copy()
        self.first_slice += k
        self.slice_count -= k
