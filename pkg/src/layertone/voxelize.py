"""
Mesh ingestion, per-slice voxel classification and surface color sampling.

Interior voxels are found by ray parity along z.  Every column's crossing
heights are computed once up front, so classifying a slice is a binary
search per column and slices can be visited in any order.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
from PIL import Image

from .colorsep import linear_to_srgb, srgb_to_linear
from .grid import GridSpec, VoxelClass, surface_from_interior

# irrational-ratio direction for the ray-origin perturbation
_JITTER = (0.7548776662466927, 0.5698402909980532)


class NonWatertightMesh(ValueError):
    pass


class MissingColorSource(ValueError):
    pass


# ---------------------------------------------------------------- mesh


@dataclass
class Mesh:
    """Triangle mesh in millimetres.

    ``uv`` and ``uv_index`` give per-corner texture coordinates;
    ``vertex_colors`` are per-vertex sRGB triples in [0, 1].
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uv: np.ndarray | None = None
    uv_index: np.ndarray | None = None
    vertex_colors: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if self.uv is not None:
            self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
            if self.uv_index is None:
                self.uv_index = self.triangles.copy()
            self.uv_index = np.asarray(self.uv_index, dtype=np.int64).reshape(-1, 3)
            if self.uv_index.shape != self.triangles.shape:
                raise ValueError("uv_index must have one entry per triangle corner")
            if self.uv_index.size and (self.uv_index.min() < 0 or self.uv_index.max() >= len(self.uv)):
                raise ValueError("texture coordinate index out of range")
        if self.vertex_colors is not None:
            self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
            if len(self.vertex_colors) != len(self.vertices):
                raise ValueError("need one vertex color per vertex")

    @property
    def corners(self) -> np.ndarray:
        """``(M, 3, 3)`` triangle corner positions."""
        return self.vertices[self.triangles]

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def has_texture_coords(self) -> bool:
        return self.uv is not None


def load_obj(path) -> Mesh:
    """Read the ASCII OBJ subset: ``v x y z [r g b]``, ``vt u v`` and
    triangular ``f`` records (``v``, ``v/vt``, ``v//vn``, ``v/vt/vn``)."""
    verts, colors, uvs, faces, fuv = [], [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                vals = [float(v) for v in parts[1:]]
                if len(vals) not in (3, 4, 6, 7):
                    raise ValueError(f"{path}:{lineno}: bad vertex record")
                verts.append(vals[:3])
                if len(vals) >= 6:
                    colors.append(vals[3:6] if len(vals) == 6 else vals[4:7])
            elif tag == "vt":
                uvs.append([float(v) for v in parts[1:3]])
            elif tag == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: only triangular faces are supported")
                vi, ti = [], []
                for corner in parts[1:]:
                    fields = corner.split("/")
                    vi.append(int(fields[0]))
                    ti.append(int(fields[1]) if len(fields) > 1 and fields[1] else 0)
                faces.append(vi)
                fuv.append(ti)
    nv, nt = len(verts), len(uvs)
    tri = np.array(faces, dtype=np.int64).reshape(-1, 3)
    tri = np.where(tri < 0, nv + tri, tri - 1)
    uv = uv_index = None
    fuv = np.array(fuv, dtype=np.int64).reshape(-1, 3)
    if nt and fuv.size and np.all(fuv != 0):
        uv = np.array(uvs)
        uv_index = np.where(fuv < 0, nt + fuv, fuv - 1)
    vc = None
    if colors and len(colors) == nv:
        vc = np.array(colors)
    return Mesh(np.array(verts).reshape(-1, 3), tri, uv, uv_index, vc)


def save_obj(mesh: Mesh, path) -> None:
    rows = []
    for k, v in enumerate(mesh.vertices):
        if mesh.vertex_colors is not None:
            rows.append("v " + " ".join(repr(float(c)) for c in (*v, *mesh.vertex_colors[k])))
        else:
            rows.append("v " + " ".join(repr(float(c)) for c in v))
    if mesh.uv is not None:
        rows += ["vt " + " ".join(repr(float(c)) for c in t) for t in mesh.uv]
        for tri, uvi in zip(mesh.triangles, mesh.uv_index):
            rows.append("f " + " ".join(f"{a + 1}/{b + 1}" for a, b in zip(tri, uvi)))
    else:
        rows += ["f " + " ".join(str(a + 1) for a in tri) for tri in mesh.triangles]
    Path(path).write_text("\n".join(rows) + "\n")


def box_mesh(lo, hi, uv: bool = False) -> Mesh:
    """Closed axis-aligned box with outward-facing triangles."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[(hi if (k >> a) & 1 else lo)[a] for a in range(3)] for k in range(8)])
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    mesh = Mesh(corners, np.array(tris))
    if uv:
        mesh.uv = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        mesh.uv_index = np.array([[0, 1, 2], [0, 2, 3]] * 6)
        mesh.__post_init__()
    return mesh


def icosphere_mesh(center, radius: float, subdivisions: int = 4) -> Mesh:
    """Geodesic sphere built by subdividing an icosahedron."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    v = np.asarray(center, float) + radius * np.array(verts)
    return Mesh(v, np.array(faces))


# ---------------------------------------------------------------- texture


@dataclass
class TextureImage:
    """Mip pyramid of a texture in linear color; level ``k`` has size
    ``ceil(size0 / 2**k)``, down to 1x1."""

    levels: list[np.ndarray]
    color_space: str = "srgb"

    @classmethod
    def from_array(cls, rgb, color_space: str = "srgb") -> "TextureImage":
        """Build the pyramid from an ``(H, W, 3)`` image in [0, 1]."""
        img = np.asarray(rgb, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError("texture must be (H, W, 3)")
        base = srgb_to_linear(img) if color_space == "srgb" else img
        levels = [base]
        while levels[-1].shape[0] > 1 or levels[-1].shape[1] > 1:
            levels.append(_downsample(levels[-1]))
        return cls(levels, color_space)

    @classmethod
    def load(cls, path, color_space: str = "srgb") -> "TextureImage":
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return cls.from_array(arr, color_space)

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.levels[0].shape[:2]
        return w, h

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1

    def sample(self, uv, lod) -> np.ndarray:
        """Trilinear lookup; returns colors encoded in the texture's space."""
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        lod = np.clip(np.broadcast_to(np.asarray(lod, dtype=np.float64), (len(uv),)), 0.0, self.max_level)
        lo = np.floor(lod).astype(np.int64)
        hi = np.minimum(lo + 1, self.max_level)
        frac = (lod - lo)[:, None]
        out = np.zeros((len(uv), 3))
        for k in np.unique(np.concatenate([lo, hi])):
            sel_lo = lo == k
            sel_hi = hi == k
            if np.any(sel_lo):
                out[sel_lo] += (1.0 - frac[sel_lo]) * _bilinear(self.levels[k], uv[sel_lo])
            if np.any(sel_hi):
                out[sel_hi] += frac[sel_hi] * _bilinear(self.levels[k], uv[sel_hi])
        return linear_to_srgb(out) if self.color_space == "srgb" else out


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    # odd sizes replicate the last row/column so the pyramid keeps ceil sizes
    padded = np.pad(img, ((0, h % 2), (0, w % 2), (0, 0)), mode="edge")
    return 0.25 * (padded[0::2, 0::2] + padded[1::2, 0::2] + padded[0::2, 1::2] + padded[1::2, 1::2])


def _bilinear(img: np.ndarray, uv: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    fx = uv[:, 0] * w - 0.5
    fy = (1.0 - uv[:, 1]) * h - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    ax = (fx - x0)[:, None]
    ay = (fy - y0)[:, None]
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x0 = np.clip(x0, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    top = (1 - ax) * img[y0, x0] + ax * img[y0, x1]
    bot = (1 - ax) * img[y1, x0] + ax * img[y1, x1]
    return (1 - ay) * top + ay * bot


# ---------------------------------------------------------------- kernels


@nb.njit(cache=True)
def _scan_columns(corners, ox, oy, px, py, nx, ny, jx, jy, counts, heights, fill, record):
    for t in range(corners.shape[0]):
        ax, ay, az = corners[t, 0, 0], corners[t, 0, 1], corners[t, 0, 2]
        bx, by, bz = corners[t, 1, 0], corners[t, 1, 1], corners[t, 1, 2]
        cx, cy, cz = corners[t, 2, 0], corners[t, 2, 1], corners[t, 2, 2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        xmin, xmax = min(ax, bx, cx), max(ax, bx, cx)
        ymin, ymax = min(ay, by, cy), max(ay, by, cy)
        i0 = max(int(np.floor((xmin - ox - jx) / px - 0.5)), 0)
        i1 = min(int(np.ceil((xmax - ox - jx) / px - 0.5)), nx - 1)
        j0 = max(int(np.floor((ymin - oy - jy) / py - 0.5)), 0)
        j1 = min(int(np.ceil((ymax - oy - jy) / py - 0.5)), ny - 1)
        for j in range(j0, j1 + 1):
            qy = oy + (j + 0.5) * py + jy
            for i in range(i0, i1 + 1):
                qx = ox + (i + 0.5) * px + jx
                w0 = (bx - qx) * (cy - qy) - (by - qy) * (cx - qx)
                w1 = (cx - qx) * (ay - qy) - (cy - qy) * (ax - qx)
                w2 = (ax - qx) * (by - qy) - (ay - qy) * (bx - qx)
                if area < 0:
                    w0, w1, w2 = -w0, -w1, -w2
                if w0 < 0 or w1 < 0 or w2 < 0:
                    continue
                col = j * nx + i
                if record:
                    heights[fill[col]] = (w0 * az + w1 * bz + w2 * cz) / (w0 + w1 + w2)
                    fill[col] += 1
                else:
                    counts[col] += 1


@nb.njit(cache=True)
def _column_crossings(corners, ox, oy, px, py, nx, ny, jx, jy):
    """Heights where each column's vertical ray crosses the mesh, as CSR
    ``(start, heights)`` with heights sorted per column."""
    ncol = nx * ny
    counts = np.zeros(ncol, dtype=np.int64)
    heights = np.zeros(0)
    fill = np.zeros(0, dtype=np.int64)
    _scan_columns(corners, ox, oy, px, py, nx, ny, jx, jy, counts, heights, fill, False)
    start = np.zeros(ncol + 1, dtype=np.int64)
    for k in range(ncol):
        start[k + 1] = start[k] + counts[k]
    heights = np.zeros(start[-1])
    fill = start[:-1].copy()
    _scan_columns(corners, ox, oy, px, py, nx, ny, jx, jy, counts, heights, fill, True)
    for k in range(ncol):
        heights[start[k]:start[k + 1]] = np.sort(heights[start[k]:start[k + 1]])
    return start, heights


@nb.njit(cache=True)
def _parity_plane(start, heights, z, nx, ny):
    out = np.zeros((ny, nx), dtype=np.bool_)
    for j in range(ny):
        for i in range(nx):
            col = j * nx + i
            below = np.searchsorted(heights[start[col]:start[col + 1]], z)
            out[j, i] = below % 2 == 1
    return out


@nb.njit(cache=True)
def _axis_overlap(p0, p1, p2, r):
    lo = min(p0, p1, p2)
    hi = max(p0, p1, p2)
    return not (lo > r or hi < -r)


@nb.njit(cache=True)
def _tri_box(v0, v1, v2, h):
    """Triangle/box overlap by separating axes; the box is centered at the
    origin with half-sizes ``h``."""
    for a in range(3):
        if not _axis_overlap(v0[a], v1[a], v2[a], h[a]):
            return False
    e = np.empty((3, 3))
    for a in range(3):
        e[0, a] = v1[a] - v0[a]
        e[1, a] = v2[a] - v1[a]
        e[2, a] = v0[a] - v2[a]
    n = np.empty(3)
    n[0] = e[0, 1] * e[1, 2] - e[0, 2] * e[1, 1]
    n[1] = e[0, 2] * e[1, 0] - e[0, 0] * e[1, 2]
    n[2] = e[0, 0] * e[1, 1] - e[0, 1] * e[1, 0]
    d = n[0] * v0[0] + n[1] * v0[1] + n[2] * v0[2]
    r = h[0] * abs(n[0]) + h[1] * abs(n[1]) + h[2] * abs(n[2])
    if abs(d) > r:
        return False
    axis = np.empty(3)
    for k in range(3):
        for a in range(3):
            # axis = unit_a x edge_k
            b, c = (a + 1) % 3, (a + 2) % 3
            axis[a] = 0.0
            axis[c] = e[k, b]
            axis[b] = -e[k, c]
            p0 = axis[0] * v0[0] + axis[1] * v0[1] + axis[2] * v0[2]
            p1 = axis[0] * v1[0] + axis[1] * v1[1] + axis[2] * v1[2]
            p2 = axis[0] * v2[0] + axis[1] * v2[1] + axis[2] * v2[2]
            rr = h[0] * abs(axis[0]) + h[1] * abs(axis[1]) + h[2] * abs(axis[2])
            if not _axis_overlap(p0, p1, p2, rr):
                return False
    return True


@nb.njit(cache=True)
def _triangle_cells(corners, cand, origin, pitch, s, nx, ny):
    """Cells of slice ``s`` whose box meets one of the candidate triangles."""
    out = np.zeros((ny, nx), dtype=np.bool_)
    h = np.array([pitch[0] / 2, pitch[1] / 2, pitch[2] / 2])
    cz = origin[2] + (s + 0.5) * pitch[2]
    v0 = np.empty(3)
    v1 = np.empty(3)
    v2 = np.empty(3)
    for t in cand:
        xmin = min(corners[t, 0, 0], corners[t, 1, 0], corners[t, 2, 0])
        xmax = max(corners[t, 0, 0], corners[t, 1, 0], corners[t, 2, 0])
        ymin = min(corners[t, 0, 1], corners[t, 1, 1], corners[t, 2, 1])
        ymax = max(corners[t, 0, 1], corners[t, 1, 1], corners[t, 2, 1])
        i0 = max(int(np.floor((xmin - origin[0]) / pitch[0])) - 1, 0)
        i1 = min(int(np.floor((xmax - origin[0]) / pitch[0])) + 1, nx - 1)
        j0 = max(int(np.floor((ymin - origin[1]) / pitch[1])) - 1, 0)
        j1 = min(int(np.floor((ymax - origin[1]) / pitch[1])) + 1, ny - 1)
        for j in range(j0, j1 + 1):
            cy = origin[1] + (j + 0.5) * pitch[1]
            for i in range(i0, i1 + 1):
                if out[j, i]:
                    continue
                cx = origin[0] + (i + 0.5) * pitch[0]
                for a in range(3):
                    c = cx if a == 0 else (cy if a == 1 else cz)
                    v0[a] = corners[t, 0, a] - c
                    v1[a] = corners[t, 1, a] - c
                    v2[a] = corners[t, 2, a] - c
                if _tri_box(v0, v1, v2, h):
                    out[j, i] = True
    return out


@nb.njit(cache=True)
def _closest_on_triangle(p, a, b, c):
    """Closest point of triangle ``abc`` to ``p`` as barycentrics."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0 and d2 <= 0:
        return 1.0, 0.0, 0.0
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0 and d4 <= d3:
        return 0.0, 1.0, 0.0
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return 1.0 - v, v, 0.0
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0 and d5 <= d6:
        return 0.0, 0.0, 1.0
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return 1.0 - w, 0.0, w
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 0.0, 1.0 - w, w
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return 1.0 - v - w, v, w


@nb.njit(cache=True)
def _closest_points(points, corners, cand, lo, hi):
    """Nearest candidate triangle and barycentrics for each point."""
    n = points.shape[0]
    tri = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    for k in range(n):
        p = points[k]
        best = np.inf
        for t in cand:
            # bounding-box lower bound
            dd = 0.0
            for a in range(3):
                if p[a] < lo[t, a]:
                    dd += (lo[t, a] - p[a]) ** 2
                elif p[a] > hi[t, a]:
                    dd += (p[a] - hi[t, a]) ** 2
            if dd >= best:
                continue
            u, v, w = _closest_on_triangle(p, corners[t, 0], corners[t, 1], corners[t, 2])
            q = u * corners[t, 0] + v * corners[t, 1] + w * corners[t, 2]
            dd = ((q - p) ** 2).sum()
            if dd < best:
                best = dd
                tri[k] = t
                bary[k, 0], bary[k, 1], bary[k, 2] = u, v, w
    return tri, bary


# ---------------------------------------------------------------- voxelizer


class Voxelizer:
    """Per-slice classification and color sampling of one mesh on one grid.

    Construction casts one vertical ray per column and validates the
    crossing parity; afterwards slices are independent.
    """

    def __init__(self, mesh: Mesh, spec: GridSpec):
        self.mesh = mesh
        self.spec = spec
        self.corners = np.ascontiguousarray(mesh.corners)
        lo, hi = mesh.bounds() if len(mesh.vertices) else (np.zeros(3), np.zeros(3))
        eps = 1e-9 * float(np.linalg.norm(hi - lo))
        ox, oy, _ = spec.origin
        px, py, _ = spec.pitch
        self.start, self.heights = _column_crossings(
            self.corners, ox, oy, px, py, spec.nx, spec.ny, eps * _JITTER[0], eps * _JITTER[1])
        odd = np.diff(self.start) % 2 == 1
        if np.any(odd):
            col = int(np.argmax(odd))
            raise NonWatertightMesh(
                f"odd number of crossings on column x={col % spec.nx}, y={col // spec.nx}; "
                "the mesh is not closed")
        self.tri_lo = self.corners.min(axis=1)
        self.tri_hi = self.corners.max(axis=1)

    def interior(self, s: int) -> np.ndarray | None:
        if not 0 <= s < self.spec.nz:
            return None
        return _parity_plane(self.start, self.heights, self.spec.slice_z(s), self.spec.nx, self.spec.ny)

    def _band(self, z_lo: float, z_hi: float) -> np.ndarray:
        return np.nonzero((self.tri_lo[:, 2] <= z_hi) & (self.tri_hi[:, 2] >= z_lo))[0]

    def classify(self, s: int, interior_below=None, interior_here=None, interior_above=None) -> np.ndarray:
        """Class plane of slice ``s``; neighbor interior masks may be passed
        in to avoid recomputation."""
        here = self.interior(s) if interior_here is None else interior_here
        below = self.interior(s - 1) if interior_below is None else interior_below
        above = self.interior(s + 1) if interior_above is None else interior_above
        cls = surface_from_interior(below, here, above)
        zc, pz = self.spec.slice_z(s), self.spec.pitch[2]
        cand = self._band(zc - pz / 2, zc + pz / 2)
        if cand.size:
            cut = _triangle_cells(self.corners, cand, np.asarray(self.spec.origin),
                                  np.asarray(self.spec.pitch), s, self.spec.nx, self.spec.ny)
            cls[cut & here] = VoxelClass.SURFACE
        return cls

    def surface_colors(self, s: int, class_plane: np.ndarray, texture: TextureImage | None = None,
                       lod: float | None = None) -> np.ndarray:
        """sRGB color per Surface voxel of slice ``s`` as ``(ny, nx, 3)``
        (zero elsewhere).  ``lod`` overrides the per-voxel level of detail."""
        mesh = self.mesh
        if mesh.vertex_colors is None and (mesh.uv is None or texture is None):
            raise MissingColorSource("mesh has neither texture coordinates with a texture nor vertex colors")
        out = np.zeros(class_plane.shape + (3,))
        ys, xs = np.nonzero(class_plane == VoxelClass.SURFACE)
        if ys.size == 0:
            return out
        cx, cy, cz = self.spec.center(xs, ys, np.full_like(xs, s))
        pts = np.stack([cx, cy, cz], axis=1)
        # surface voxel centers lie within one voxel diagonal of the mesh
        reach = float(np.linalg.norm(self.spec.pitch))
        zc = self.spec.slice_z(s)
        cand = self._band(zc - reach, zc + reach)
        tri, bary = _closest_points(pts, self.corners, cand, self.tri_lo, self.tri_hi)
        if mesh.uv is not None and texture is not None:
            uv = np.einsum("nk,nkd->nd", bary, mesh.uv[mesh.uv_index[tri]])
            if lod is None:
                lam = self.level_of_detail(texture)[tri]
            else:
                lam = np.full(len(tri), float(lod))
            col = texture.sample(uv, lam)
        else:
            col = np.einsum("nk,nkd->nd", bary, mesh.vertex_colors[mesh.triangles[tri]])
        out[ys, xs] = col
        return out

    def level_of_detail(self, texture: TextureImage) -> np.ndarray:
        """Per-triangle mip level: log2 of the texels spanned by one voxel."""
        if getattr(self, "_lod_for", None) is texture:
            return self._lod
        mesh = self.mesh
        c = self.corners
        area3 = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
        t = mesh.uv[mesh.uv_index]
        e1, e2 = t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]
        area_uv = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        w, h = texture.size
        with np.errstate(divide="ignore", invalid="ignore"):
            texels_per_mm = np.sqrt(area_uv * w * h / area3)
            voxel = float(np.prod(self.spec.pitch)) ** (1.0 / 3.0)
            lam = np.log2(texels_per_mm * voxel)
        lam = np.nan_to_num(lam, nan=0.0, neginf=0.0, posinf=float(texture.max_level))
        self._lod = np.clip(lam, 0.0, texture.max_level)
        self._lod_for = texture
        return self._lod


_VOXELIZER_CACHE: dict = {}


def _voxelizer(mesh: Mesh, spec: GridSpec) -> Voxelizer:
    key = (id(mesh), spec)
    vox = _VOXELIZER_CACHE.get(key)
    if vox is None or vox.mesh is not mesh:
        _VOXELIZER_CACHE.clear()
        vox = _VOXELIZER_CACHE[key] = Voxelizer(mesh, spec)
    return vox


def classify_slice(mesh: Mesh, spec: GridSpec, s: int) -> np.ndarray:
    """Exterior/Interior/Surface plane for slice ``s``."""
    return _voxelizer(mesh, spec).classify(s)


def sample_surface_colors(mesh: Mesh, texture: TextureImage | None, class_plane: np.ndarray,
                          spec: GridSpec, s: int, lod: float | None = None) -> np.ndarray:
    """Colors at the closest mesh point to each Surface voxel of slice ``s``."""
    return _voxelizer(mesh, spec).surface_colors(s, class_plane, texture, lod)
