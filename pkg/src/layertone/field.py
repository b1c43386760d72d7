"""
Distance field to the surface, tonal transfer into the interior, isosurface
layers, signed-distance normals and per-slice distance-to-empty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba as nb
import numpy as np
from scipy import ndimage

from .grid import GridSpec, VoxelClass

DEFAULT_LAYERS = 12
MASK_BUDGET = 4_000_000


class MaskTooLarge(ValueError):
    pass


class DistanceMask(NamedTuple):
    """Offsets ``(dx, dy, dz)`` within ``d_max`` of the origin, nearest first."""

    offsets: np.ndarray  # (K, 3) int64
    distances: np.ndarray  # (K,) float64


def offset_distance(dx, dy, dz, pitch) -> np.ndarray:
    """Physical length of voxel offsets.  Every distance in this package is
    evaluated through this expression so equal geometry gives equal floats."""
    px, py, pz = pitch
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    dz = np.asarray(dz, dtype=np.float64)
    return np.sqrt((dx * px) ** 2 + (dy * py) ** 2 + (dz * pz) ** 2)


def build_distance_mask(spec: GridSpec, d_max: float, budget: int = MASK_BUDGET) -> DistanceMask:
    """All integer offsets whose physical length is at most ``d_max``.

    Sorted by distance, ties in ``(dz, dy, dx)`` order.
    """
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    px, py, pz = spec.pitch
    rx, ry, rz = (int(math.floor(d_max / p + 1e-9)) for p in (px, py, pz))
    box = (2 * rx + 1) * (2 * ry + 1) * (2 * rz + 1)
    if box > budget:
        raise MaskTooLarge(f"distance mask needs up to {box} offsets (budget {budget}); lower d_max")
    dz, dy, dx = np.meshgrid(np.arange(-rz, rz + 1), np.arange(-ry, ry + 1),
                             np.arange(-rx, rx + 1), indexing="ij")
    dx, dy, dz = dx.ravel(), dy.ravel(), dz.ravel()
    dist = offset_distance(dx, dy, dz, spec.pitch)
    keep = dist <= d_max * (1 + 1e-12)
    dx, dy, dz, dist = dx[keep], dy[keep], dz[keep], dist[keep]
    order = np.lexsort((dx, dy, dz, dist))
    offsets = np.stack([dx, dy, dz], axis=1)[order].astype(np.int64)
    return DistanceMask(offsets, dist[order])


@nb.njit(cache=True, nogil=True)
def _sweep_kernel(src, src_g, off, dist, z_base, t_lo, t_hi, d, near, ghat):
    """Stamp the mask around each source voxel onto global target slices
    ``[t_lo, t_hi)``, keeping strictly smaller distances.  ``src`` rows are
    global ``(z, y, x)`` in scan order; the volumes cover global slices
    ``[z_base, z_base + d.shape[0])``."""
    nzw, ny, nx = d.shape
    T = src_g.shape[1]
    z_lo = max(t_lo - z_base, 0)
    z_hi = min(t_hi - z_base, nzw)
    for i in range(src.shape[0]):
        sz, sy, sx = src[i, 0], src[i, 1], src[i, 2]
        key = (sz * ny + sy) * nx + sx
        for k in range(off.shape[0]):
            z = sz + off[k, 2] - z_base
            if z < z_lo or z >= z_hi:
                continue
            y = sy + off[k, 1]
            if y < 0 or y >= ny:
                continue
            x = sx + off[k, 0]
            if x < 0 or x >= nx:
                continue
            if dist[k] < d[z, y, x]:
                d[z, y, x] = dist[k]
                near[z, y, x] = key
                for t in range(T):
                    ghat[z, y, x, t] = src_g[i, t]


def sweep_sources(cls: np.ndarray, g: np.ndarray, z_base: int = 0):
    """Surface voxels of a class volume in scan order with their tonals."""
    zz, yy, xx = np.nonzero(cls == VoxelClass.SURFACE)
    src = np.stack([zz + z_base, yy, xx], axis=1).astype(np.int64)
    return src, np.ascontiguousarray(g[zz, yy, xx], dtype=np.float64)


@dataclass
class DistanceField:
    """Truncated distance ``d`` (mm), nearest surface voxel as a linear index
    ``(z * ny + y) * nx + x`` (-1 where truncated) and transferred tonals."""

    d: np.ndarray
    nearest: np.ndarray
    ghat: np.ndarray
    d_max: float
    d_null: float

    def nearest_coord(self, z, y, x):
        k = int(self.nearest[z, y, x])
        if k < 0:
            return None
        _, ny, nx = self.d.shape
        return (k % nx, (k // nx) % ny, k // (nx * ny))

    def signed(self, cls: np.ndarray) -> np.ndarray:
        return np.where(cls != VoxelClass.EXTERIOR, -self.d, self.d)


def sweep_transfer(g: np.ndarray, cls: np.ndarray, mask: DistanceMask,
                   d_max: float | None = None) -> DistanceField:
    """Distance to the nearest surface voxel and its tonal vector, for a
    whole class volume ``(nz, ny, nx)`` with surface tonals ``(nz, ny, nx, T)``.

    Equidistant surface voxels resolve first-come in scan order.
    """
    if d_max is None:
        d_max = float(mask.distances[-1])
    d_null = 2.0 * d_max
    shape = cls.shape
    d = np.full(shape, d_null)
    near = np.full(shape, -1, dtype=np.int64)
    ghat = np.zeros(shape + (g.shape[-1],))
    src, src_g = sweep_sources(cls, g)
    _sweep_kernel(src, src_g, mask.offsets, mask.distances, 0, 0, shape[0], d, near, ghat)
    return DistanceField(d, near, ghat, d_max, d_null)


def extract_layers(d: np.ndarray, cls: np.ndarray, n_layers: int, tau: float,
                   d_max: float | None = None, z0: int = 0, z1: int | None = None) -> np.ndarray:
    """Layer index per voxel for slices ``[z0, z1)`` of the given volumes
    (-1 outside every layer).

    Layer 0 holds interior voxels with a non-interior voxel in their window;
    layer ``l`` holds interior voxels with ``l * tau <= d < d_max`` and some
    window neighbor closer than ``l * tau``.  A voxel qualifying for several
    layers takes the smallest index.  Slices ``z0 - 1`` and ``z1`` are read
    as context when the arrays contain them.
    """
    nz = d.shape[0]
    z1 = nz if z1 is None else z1
    if d_max is None:
        d_max = n_layers * tau
    lo, hi = max(z0 - 1, 0), min(z1 + 1, nz)
    dd = d[lo:hi]
    inside = cls[lo:hi] != VoxelClass.EXTERIOR
    wmin = ndimage.minimum_filter(dd, size=3, mode="constant", cval=np.inf)
    # out-of-array cells are not voxels, so they never count as empty
    empty_near = ndimage.maximum_filter((~inside).astype(np.uint8), size=3,
                                        mode="constant", cval=0).astype(bool)
    layer = np.full(dd.shape, -1, dtype=np.int8)
    shell = inside & (dd < d_max)
    layer[shell & empty_near] = 0
    for ell in range(1, n_layers):
        d_ell = ell * tau
        hit = shell & (layer < 0) & (dd >= d_ell) & (wmin < d_ell)
        layer[hit] = ell
    return layer[z0 - lo: z0 - lo + (z1 - z0)]


def _axis_gradient(sd, valid, axis, p):
    fwd = np.roll(sd, -1, axis=axis)
    bwd = np.roll(sd, 1, axis=axis)
    fv = np.roll(valid, -1, axis=axis)
    bv = np.roll(valid, 1, axis=axis)
    # np.roll wraps; the wrapped cells are outside the grid
    edge_hi = [slice(None)] * sd.ndim
    edge_hi[axis] = -1
    edge_lo = [slice(None)] * sd.ndim
    edge_lo[axis] = 0
    fv[tuple(edge_hi)] = False
    bv[tuple(edge_lo)] = False
    g = np.zeros_like(sd)
    both = fv & bv
    g[both] = (fwd[both] - bwd[both]) / (2 * p)
    only_f = fv & ~bv
    g[only_f] = (fwd[only_f] - sd[only_f]) / p
    only_b = bv & ~fv
    g[only_b] = (sd[only_b] - bwd[only_b]) / p
    return g


def _transverse_smooth(g, weight, axis):
    """Weighted [1, 2, 1] average of ``g`` over the two axes other than
    ``axis``, skipping cells with zero weight."""
    num = g * weight
    den = weight.astype(np.float64)
    for other in range(3):
        if other == axis:
            continue
        num = ndimage.correlate1d(num, [1.0, 2.0, 1.0], axis=other, mode="constant", cval=0.0)
        den = ndimage.correlate1d(den, [1.0, 2.0, 1.0], axis=other, mode="constant", cval=0.0)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


NORMAL_CONTEXT = 2


def normals(d: np.ndarray, cls: np.ndarray, pitch, d_null: float, z0: int = 0,
            z1: int | None = None, counters=None) -> np.ndarray:
    """Unit gradients of the signed distance for slices ``[z0, z1)``.

    Central differences, one-sided where a neighbor is outside the arrays
    or truncated, then averaged with ``[1, 2, 1]`` weights across the two
    transverse axes.  The averaging suppresses the staircase of a voxel
    surface; on a sphere of radius 20 voxels it takes the mean angular error
    from about 25 to 7 degrees.  Slices ``z0 - 2`` and ``z1 + 1`` are read
    as context when present.  Zero gradients fall back to ``+z``; their
    count goes to ``counters["zero_normals"]``.  Returns
    ``(z1 - z0, ny, nx, 3)`` as ``(nx, ny, nz)`` components.
    """
    nz = d.shape[0]
    z1 = nz if z1 is None else z1
    lo, hi = max(z0 - NORMAL_CONTEXT, 0), min(z1 + NORMAL_CONTEXT, nz)
    dd = d[lo:hi]
    sd = np.where(cls[lo:hi] != VoxelClass.EXTERIOR, -dd, dd)
    valid = dd < d_null
    px, py, pz = pitch
    grads = [_axis_gradient(sd, valid, axis, p) for axis, p in ((2, px), (1, py), (0, pz))]
    grads = [_transverse_smooth(g, valid, axis) for g, axis in zip(grads, (2, 1, 0))]
    sl = slice(z0 - lo, z0 - lo + (z1 - z0))
    n = np.stack([g[sl] for g in grads], axis=-1)
    norm = np.linalg.norm(n, axis=-1)
    zero = norm == 0
    if counters is not None:
        inside = cls[z0:z1] != VoxelClass.EXTERIOR
        counters["zero_normals"] += int(np.count_nonzero(zero & valid[sl] & inside))
    norm[zero] = 1.0
    n = n / norm[..., None]
    n[zero] = (0.0, 0.0, 1.0)
    return n


@dataclass
class DistanceToEmptyPlane:
    """In-slice L1 distance to the nearest non-interior voxel and its
    undivided central-difference gradient ``(gx, gy)``."""

    phi: np.ndarray
    grad: np.ndarray


def distance_to_empty(class_plane: np.ndarray) -> DistanceToEmptyPlane:
    """Exact L1 distance transform of a slice; the frame around the slice
    counts as empty."""
    inside = class_plane != VoxelClass.EXTERIOR
    padded = np.pad(inside, 1, constant_values=False)
    phi_p = ndimage.distance_transform_cdt(padded, metric="taxicab").astype(np.int32)
    phi = phi_p[1:-1, 1:-1]
    gx = phi_p[1:-1, 2:] - phi_p[1:-1, :-2]
    gy = phi_p[2:, 1:-1] - phi_p[:-2, 1:-1]
    return DistanceToEmptyPlane(np.ascontiguousarray(phi), np.stack([gx, gy], axis=-1).astype(np.int32))


def write_distance_pgm(path, d_plane: np.ndarray, d_max: float, d_null: float) -> None:
    """16-bit PGM dump: ``round(255 * d / d_max)``, truncated cells 65535."""
    v = np.round(255.0 * d_plane / d_max)
    v = np.where(d_plane >= d_null, 65535, np.clip(v, 0, 65534)).astype(">u2")
    ny, nx = d_plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n65535\n".encode())
        fh.write(v.tobytes())
