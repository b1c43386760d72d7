"""
Consistent slice-by-slice traversal of voxel layers and mapping of 2D
error-diffusion filters into each voxel's tangent frame.

The jitted helpers here are shared with the halftoning kernel; the plain
functions wrap them for direct use on small inputs.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

MATCH_RADIUS = 1.5


class Winding(enum.IntEnum):
    CCW = 1
    CW = -1


# ---------------------------------------------------------------- filters


@dataclass
class Filter2D:
    """Error-diffusion filter in tangent coordinates.

    ``levels[k]`` is a ``(K, 3)`` array of ``(forward, lateral, weight)``
    rows used for input tones quantized to level ``k``; a plain filter has a
    single level.  ``modulation`` samples the threshold-modulation strength
    at 256 evenly spaced tones (all zero for a fixed threshold).
    """

    name: str
    levels: list[np.ndarray]
    modulation: np.ndarray | None = None

    def __post_init__(self):
        cleaned = []
        for k, lv in enumerate(self.levels):
            lv = np.asarray(lv, dtype=np.float64).reshape(-1, 3)
            lv = lv[lv[:, 2] != 0.0]
            if np.any(lv[:, 2] < 0):
                raise ValueError(f"filter {self.name}: negative weight at level {k}")
            total = lv[:, 2].sum()
            if lv.shape[0] == 0 or abs(total - 1.0) > 1e-9:
                raise ValueError(f"filter {self.name}: weights at level {k} sum to {total}")
            cleaned.append(lv)
        self.levels = cleaned
        if self.modulation is None:
            self.modulation = np.zeros(256)
        self.modulation = np.asarray(self.modulation, dtype=np.float64)
        if self.modulation.shape != (256,):
            raise ValueError("modulation table must have 256 entries")

    def arrays(self):
        """Packed ``(offsets, weights, counts)`` for the kernels."""
        kmax = max(lv.shape[0] for lv in self.levels)
        n = len(self.levels)
        off = np.zeros((n, kmax, 2))
        w = np.zeros((n, kmax))
        cnt = np.zeros(n, dtype=np.int64)
        for k, lv in enumerate(self.levels):
            m = lv.shape[0]
            off[k, :m] = lv[:, :2]
            w[k, :m] = lv[:, 2]
            cnt[k] = m
        return off, w, cnt

    def level_of(self, tone: float) -> int:
        return _level_index(tone, len(self.levels))


FLOYD_STEINBERG = Filter2D("fs", [np.array([
    [1.0, 0.0, 7 / 16],
    [-1.0, 1.0, 3 / 16],
    [0.0, 1.0, 5 / 16],
    [1.0, 1.0, 1 / 16],
])])


def load_filters(path) -> dict[str, Filter2D]:
    """Parse a filter table file.

    ``FILTER <name> <levels>`` starts a filter; each of the following
    ``levels`` lines reads ``count df dr w df dr w ...``.  An optional
    ``MODULATION <n>`` line followed by ``n`` lines of ``tone strength``
    gives knots of a piecewise-linear threshold-modulation strength.
    """
    rows = []
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#", 1)[0].split()
        if ln:
            rows.append(ln)
    filters = {}
    i = 0
    while i < len(rows):
        head = rows[i]
        if head[0] != "FILTER" or len(head) != 3:
            raise ValueError(f"{path}: expected 'FILTER <name> <levels>', got {' '.join(head)}")
        name, n = head[1], int(head[2])
        levels = []
        for row in rows[i + 1: i + 1 + n]:
            cnt = int(row[0])
            vals = np.array(row[1:], dtype=np.float64)
            if vals.size != 3 * cnt:
                raise ValueError(f"{path}: filter {name} level {len(levels)} has a bad element count")
            levels.append(vals.reshape(cnt, 3))
        if len(levels) != n:
            raise ValueError(f"{path}: filter {name} is truncated")
        i += 1 + n
        modulation = None
        if i < len(rows) and rows[i][0] == "MODULATION":
            m = int(rows[i][1])
            knots = np.array(rows[i + 1: i + 1 + m], dtype=np.float64)
            modulation = np.interp(np.linspace(0.0, 1.0, 256), knots[:, 0], knots[:, 1])
            i += 1 + m
        filters[name] = Filter2D(name, levels, modulation)
    return filters


def builtin_filter(name: str) -> Filter2D:
    if name == "fs":
        return FLOYD_STEINBERG
    table = load_filters(Path(__file__).parent / "data" / "filters.txt")
    if name not in table:
        raise KeyError(f"unknown filter {name!r}; choose from fs, {', '.join(sorted(table))}")
    return table[name]


# ---------------------------------------------------------------- jitted core


@nb.njit(cache=True, nogil=True)
def _level_index(tone, n_levels):
    k = int(tone * (n_levels - 1) + 0.5)
    if k < 0:
        return 0
    if k > n_levels - 1:
        return n_levels - 1
    return k


@nb.njit(cache=True, nogil=True)
def _cross_z(ax, ay, bx, by):
    return ax * by - ay * bx


@nb.njit(cache=True, nogil=True)
def _keeps(dx, dy, gx, gy, winding):
    """Direction filter: does the step ``(dx, dy)`` wind the right way
    around the gradient?  A vanishing gradient admits every step."""
    if gx == 0 and gy == 0:
        return True
    c = _cross_z(dx, dy, gx, gy)
    if winding > 0:
        return c >= 0
    return c <= 0


@nb.njit(cache=True, nogil=True)
def _prefer(phi_u, phi_best, down, cos_u, cos_best, key_u, key_best):
    """True if candidate ``u`` beats the current best next voxel: extreme
    distance-to-empty first, then smallest turn, then lowest ``(y, x)``."""
    if phi_u != phi_best:
        return phi_u > phi_best if down else phi_u < phi_best
    if cos_u != cos_best:
        return cos_u > cos_best
    return key_u < key_best


@nb.njit(cache=True, nogil=True)
def _turn_cos(dx, dy, px_, py_):
    if px_ == 0.0 and py_ == 0.0:
        return 0.0
    a = np.sqrt(dx * dx + dy * dy) * np.sqrt(px_ * px_ + py_ * py_)
    return (dx * px_ + dy * py_) / a


@nb.njit(cache=True, nogil=True)
def _frame(n, fdx, fdy, fdz, rsign, out):
    """Fill ``out[0] = f``, ``out[1] = r`` for normal ``n`` and a forward
    direction; ``r = rsign * (n x f)``."""
    dot = fdx * n[0] + fdy * n[1] + fdz * n[2]
    fx = fdx - dot * n[0]
    fy = fdy - dot * n[1]
    fz = fdz - dot * n[2]
    ln = np.sqrt(fx * fx + fy * fy + fz * fz)
    if ln < 1e-9:
        # forward along the normal: fall back to the upward tangent, then +x
        fx, fy, fz = -n[2] * n[0], -n[2] * n[1], 1.0 - n[2] * n[2]
        ln = np.sqrt(fx * fx + fy * fy + fz * fz)
        if ln < 1e-3:
            fx, fy, fz = 1.0 - n[0] * n[0], -n[0] * n[1], -n[0] * n[2]
            ln = np.sqrt(fx * fx + fy * fy + fz * fz)
    fx /= ln
    fy /= ln
    fz /= ln
    # a second projection removes the cancellation error of the first
    dot = fx * n[0] + fy * n[1] + fz * n[2]
    fx -= dot * n[0]
    fy -= dot * n[1]
    fz -= dot * n[2]
    ln = np.sqrt(fx * fx + fy * fy + fz * fz)
    fx /= ln
    fy /= ln
    fz /= ln
    out[0, 0], out[0, 1], out[0, 2] = fx, fy, fz
    out[1, 0] = rsign * (n[1] * fz - n[2] * fy)
    out[1, 1] = rsign * (n[2] * fx - n[0] * fz)
    out[1, 2] = rsign * (n[0] * fy - n[1] * fx)


@nb.njit(cache=True, nogil=True)
def _match(el_off, el_n, nb_f, nb_r, nb_n, n_nb, radius, match_el, match_nb):
    """Symmetric closest-point matching of filter elements to projected
    neighbors.  Returns the number of matches written to ``match_el`` /
    ``match_nb`` in element order."""
    r2 = radius * radius
    m = 0
    for k in range(el_n):
        ef, er = el_off[k, 0], el_off[k, 1]
        best = -1
        bd = 0.0
        bn = 0.0
        for j in range(n_nb):
            dd = (nb_f[j] - ef) ** 2 + (nb_r[j] - er) ** 2
            if best < 0 or dd < bd or (dd == bd and nb_n[j] < bn):
                best, bd, bn = j, dd, nb_n[j]
        if best < 0 or bd > r2:
            continue
        # the neighbor must pick this element back
        back = -1
        backd = 0.0
        for kk in range(el_n):
            dd = (nb_f[best] - el_off[kk, 0]) ** 2 + (nb_r[best] - el_off[kk, 1]) ** 2
            if back < 0 or dd < backd:
                back, backd = kk, dd
        if back == k:
            match_el[m] = k
            match_nb[m] = best
            m += 1
    return m


# ---------------------------------------------------------------- wrappers


def candidate_filter(v, neighbors, grad, winding) -> list:
    """Unvisited in-slice neighbors that continue around the component in
    the given winding.  ``neighbors`` are ``(x, y, ...)`` coordinates."""
    gx, gy = int(grad[0]), int(grad[1])
    w = int(winding)
    return [u for u in neighbors if _keeps(int(u[0]) - int(v[0]), int(u[1]) - int(v[1]), gx, gy, w)]


def next_voxel(v, candidates, phi, n_z: float, prev_dir=None):
    """Pick the next voxel among ``candidates``.

    ``phi`` maps a candidate (by position in ``candidates``) to its
    distance-to-empty.  Down-facing voxels (``n_z < 0``) take the largest,
    others the smallest; ties go to the smallest turn from ``prev_dir``,
    then to the lowest ``(y, x)``.
    """
    if len(candidates) == 0:
        return None
    down = n_z < 0
    pdx, pdy = (0.0, 0.0) if prev_dir is None else (float(prev_dir[0]), float(prev_dir[1]))
    best = None
    for i, u in enumerate(candidates):
        dx, dy = int(u[0]) - int(v[0]), int(u[1]) - int(v[1])
        item = (int(phi[i]), _turn_cos(float(dx), float(dy), pdx, pdy), int(u[1]) * 1_000_000 + int(u[0]))
        if best is None or _prefer(item[0], best[1][0], down, item[1], best[1][1], item[2], best[1][2]):
            best = (u, item)
    return best[0]


def select_start(voxels, error_count, phi, n_z, last_dir=None, grad=None, has_next=None):
    """Choose where to (re)start in a slice.

    Among ``voxels`` with the largest error count, take the extreme
    distance-to-empty (largest when the subset is down-facing on average).
    Returns ``(index, winding)`` or ``None`` when ``voxels`` is empty.  The
    winding opposes the direction error last arrived from; ``has_next``
    (neighbors in the next slice per voxel) is used only by the caller for
    death detection and is accepted here for symmetry with the kernel.
    """
    n = len(voxels)
    if n == 0:
        return None
    error_count = np.asarray(error_count)
    top = error_count.max()
    subset = [i for i in range(n) if error_count[i] == top]
    down = float(np.sum(np.asarray(n_z)[subset])) < 0
    best = None
    for i in subset:
        key = (int(phi[i]), int(voxels[i][1]), int(voxels[i][0]))
        if best is None:
            best = (i, key)
            continue
        if key[0] != best[1][0]:
            better = key[0] > best[1][0] if down else key[0] < best[1][0]
        else:
            better = key[1:] < best[1][1:]
        if better:
            best = (i, key)
    i = best[0]
    winding = Winding.CCW
    if last_dir is not None and grad is not None:
        c = _cross_z(float(last_dir[i][0]), float(last_dir[i][1]), float(grad[i][0]), float(grad[i][1]))
        if c > 0:
            winding = Winding.CW
    return i, winding


def is_birth(error_count) -> bool:
    return bool(np.all(np.asarray(error_count) == 0))


def serpentine_scan(voxels, axis: str = "x") -> list:
    """Order component voxels row by row along ``axis``, alternating the
    direction of travel on every row."""
    pts = [tuple(int(c) for c in v) for v in voxels]
    a, b = (0, 1) if axis == "x" else (1, 0)
    rows: dict[int, list] = {}
    for p in pts:
        rows.setdefault(p[b], []).append(p)
    out = []
    for k, key in enumerate(sorted(rows)):
        row = sorted(rows[key], key=lambda p: p[a], reverse=bool(k % 2))
        out.extend(row)
    return out


@dataclass
class TangentFrame:
    n: np.ndarray
    f: np.ndarray
    r: np.ndarray

    @classmethod
    def from_forward(cls, n, forward, winding=Winding.CCW) -> "TangentFrame":
        n = np.asarray(n, dtype=np.float64)
        n = n / np.linalg.norm(n)
        out = np.zeros((2, 3))
        fwd = np.asarray(forward, dtype=np.float64)
        _frame(n, fwd[0], fwd[1], fwd[2], float(int(winding)), out)
        return cls(n, out[0].copy(), out[1].copy())


def map_filter(frame: TangentFrame, filt: Filter2D, offsets, tone: float = 0.5,
               radius: float = MATCH_RADIUS) -> list[tuple[int, float]]:
    """Assign filter elements to neighbor offsets (in voxel-pitch units).

    Returns ``(neighbor index, weight)`` pairs with weights renormalized
    over the matched elements; empty when nothing matches.
    """
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 3)
    n_nb = offsets.shape[0]
    if n_nb == 0:
        return []
    lv = filt.levels[filt.level_of(tone)]
    pf = offsets @ frame.f
    pr = offsets @ frame.r
    pn = np.abs(offsets @ frame.n)
    me = np.zeros(lv.shape[0], dtype=np.int64)
    mn = np.zeros(lv.shape[0], dtype=np.int64)
    m = _match(np.ascontiguousarray(lv[:, :2]), lv.shape[0], pf, pr, pn, n_nb, radius, me, mn)
    if m == 0:
        return []
    wsum = 0.0
    for i in range(m):
        wsum += lv[me[i], 2]
    return [(int(mn[i]), float(lv[me[i], 2] / wsum)) for i in range(m)]
