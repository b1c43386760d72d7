"""
Per-layer, per-channel error diffusion along the slice traversal, threshold
modulation, single-material assignment and the fill of voxels lying between
layers.

The heavy lifting happens in one jitted kernel per layer that walks a range
of slices.  Layers touch disjoint voxels, so several kernels may run at once
on shared arrays.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from .field import DistanceMask, build_distance_mask, distance_to_empty
from .grid import GridSpec, VoxelClass
from .traverse import (Filter2D, _frame, _keeps, _level_index, _match, _prefer,
                       _turn_cos, MATCH_RADIUS)

# slots of the per-layer counter rows
COUNTER_NAMES = (
    "visited",
    "dropped_events",
    "dropped_weight",
    "partial_matches",
    "diffusion_violations",
    "max_abs_error",
    "set_bits",
    "lost_bits",
    "starts",
    "serpentine_components",
    "reversals",
    "error_bound_trips",
)
N_COUNTERS = len(COUNTER_NAMES)
ERROR_TRIPWIRE = 4.0

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_LO32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)


# ---------------------------------------------------------------- random


@nb.njit(cache=True, nogil=True)
def _philox(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block; all arguments are uint64 holding 32-bit words."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SH32, p0 & _LO32
        hi1, lo1 = p1 >> _SH32, p1 & _LO32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & _LO32
        k1 = (k1 + _W1) & _LO32
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True)
def _uniform(x, y, s, ell, channel, k0, k1):
    out = _philox(np.uint64(x), np.uint64(y), np.uint64(s),
                  np.uint64((ell << 8) | channel), k0, k1)
    return float(out[0]) * (1.0 / 4294967296.0)


def philox4x32(counter, key) -> tuple[int, int, int, int]:
    """One Philox4x32-10 block for a 4-word counter and a 2-word key."""
    c = [np.uint64(int(v) & 0xFFFFFFFF) for v in counter]
    k = [np.uint64(int(v) & 0xFFFFFFFF) for v in key]
    return tuple(int(v) for v in _philox(c[0], c[1], c[2], c[3], k[0], k[1]))


def seed_key(seed: int) -> tuple[np.uint64, np.uint64]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


@nb.njit(cache=True, nogil=True)
def _threshold(tone, x, y, s, ell, channel, modulation, k0, k1):
    k = int(tone * 255.0 + 0.5)
    k = 0 if k < 0 else (255 if k > 255 else k)
    strength = modulation[k]
    if strength == 0.0:
        return 0.5
    return 0.5 + strength * (_uniform(x, y, s, ell, channel, k0, k1) - 0.5)


def modulated_threshold(tone: float, s: int, layer: int, x: int, y: int, seed: int,
                        modulation=None, channel: int = 0) -> float:
    """Quantization threshold for one voxel and channel.

    ``modulation`` samples the modulation strength at 256 tones; ``None``
    means a fixed threshold of 0.5.
    """
    if modulation is None:
        return 0.5
    k0, k1 = seed_key(seed)
    return float(_threshold(float(tone), x, y, s, layer, channel,
                            np.asarray(modulation, dtype=np.float64), k0, k1))


# ---------------------------------------------------------------- small ops


def diffuse_step(tone, error, threshold, weights, target_errors):
    """Quantize one voxel and push its residual.

    ``tone``, ``error`` and ``threshold`` are per-channel vectors; ``weights``
    are the mapped filter weights (summing to 1, or empty) and
    ``target_errors`` is a ``(len(weights), T)`` array updated in place.
    Returns ``(h, dropped)`` where ``dropped`` is the residual lost when
    the mapping is empty.
    """
    tone = np.atleast_1d(np.asarray(tone, dtype=np.float64))
    g = tone + np.atleast_1d(np.asarray(error, dtype=np.float64))
    h = (g > np.asarray(threshold, dtype=np.float64)).astype(np.uint8)
    residual = h - g
    if len(weights) == 0:
        return h, residual
    for k, w in enumerate(weights):
        target_errors[k] -= w * residual
    return h, np.zeros_like(residual)


@dataclass
class TieBreaker:
    """Per-channel starvation counters, reset at the start of each slice."""

    c: np.ndarray

    @classmethod
    def fresh(cls, channels: int = 3) -> "TieBreaker":
        return cls(np.zeros(channels, dtype=np.int64))


def white_code(channels: int) -> int:
    return channels + 1


def assign_material(h, tie: TieBreaker) -> int:
    """Material code for a halftone vector: ``1 + winner`` or white.

    The winner is the set channel with the largest tie counter (lowest
    index on ties); it resets to 0 and every other channel's counter grows.
    """
    h = np.asarray(h)
    T = h.shape[0]
    return int(_assign(h.astype(np.uint8), tie.c, T))


@nb.njit(cache=True, nogil=True)
def _assign(h, c, T):
    win = -1
    for t in range(T):
        if h[t] and (win < 0 or c[t] > c[win]):
            win = t
    if win < 0:
        return T + 1
    for t in range(T):
        if t == win:
            c[t] = 0
        else:
            c[t] += 1
    return win + 1


# ---------------------------------------------------------------- kernel


@nb.njit(cache=True, nogil=True)
def _process_voxel(ell, s, zl, y, x, fdx, fdy, rsign_mode, winding, up_ok,
                   layer, gl, err, count, lastdir, visited, material, hbits, order, nrm,
                   pitch, tau, f_off, f_w, f_cnt, modulation, k0, k1, check,
                   tie, rank, counters, frame, tx, ty, tz, pf, pr, pn, me, mn, hit):
    """Halftone voxel ``(x, y)`` of slice ``s`` and diffuse its residual.

    ``rsign_mode`` 0 uses ``winding`` for the lateral axis; 1 orients the
    lateral axis toward +y (serpentine rows)."""
    nyy, nxx = layer.shape[1], layer.shape[2]
    T = gl.shape[3]
    n = nrm[zl, y, x]
    _frame(n, fdx * pitch[0], fdy * pitch[1], 0.0, 1.0, frame)
    if rsign_mode == 1:
        flip = frame[1, 1] < -1e-12 or (abs(frame[1, 1]) <= 1e-12 and frame[1, 2] < 0.0)
    else:
        flip = winding < 0
    if flip:
        for k in range(3):
            frame[1, k] = -frame[1, k]
    visited[zl, y, x] = 1
    # candidate filter targets: unvisited in this slice, anything in the next
    m_nb = 0
    for dz in range(0, 2):
        if dz == 1 and not up_ok:
            continue
        for dy in range(-1, 2):
            yy = y + dy
            if yy < 0 or yy >= nyy:
                continue
            for dx in range(-1, 2):
                xx = x + dx
                if xx < 0 or xx >= nxx or (dx == 0 and dy == 0 and dz == 0):
                    continue
                if layer[zl + dz, yy, xx] != ell:
                    continue
                if dz == 0 and visited[zl, yy, xx] == 1:
                    continue
                ox = dx * pitch[0] / tau
                oy = dy * pitch[1] / tau
                oz = dz * pitch[2] / tau
                tx[m_nb], ty[m_nb], tz[m_nb] = xx, yy, dz
                pf[m_nb] = ox * frame[0, 0] + oy * frame[0, 1] + oz * frame[0, 2]
                pr[m_nb] = ox * frame[1, 0] + oy * frame[1, 1] + oz * frame[1, 2]
                pn[m_nb] = abs(ox * n[0] + oy * n[1] + oz * n[2])
                hit[m_nb] = 0
                m_nb += 1
    n_levels = f_cnt.shape[0]
    h = np.zeros(T, dtype=np.uint8)
    last_level = -1
    m = 0
    wsum = 0.0
    for t in range(T):
        g = gl[zl, y, x, t]
        level = _level_index(g, n_levels)
        if level != last_level:
            m = _match(f_off[level], f_cnt[level], pf, pr, pn, m_nb, MATCH_RADIUS, me, mn)
            wsum = 0.0
            for i in range(m):
                wsum += f_w[level, me[i]]
            if m > 0 and m < f_cnt[level]:
                counters[3] += 1
            last_level = level
        gt = g + err[zl, y, x, t]
        thr = _threshold(g, x, y, s, ell, t, modulation, k0, k1)
        bit = 1 if gt > thr else 0
        h[t] = bit
        e = bit - gt
        if m == 0:
            counters[1] += 1
            counters[2] += abs(e)
            continue
        for i in range(m):
            j = mn[i]
            if check and visited[tz[j] + zl, ty[j], tx[j]] == 1:
                counters[4] += 1
            a = err[tz[j] + zl, ty[j], tx[j], t] - (f_w[level, me[i]] / wsum) * e
            err[tz[j] + zl, ty[j], tx[j], t] = a
            hit[j] = 1
            if abs(a) > counters[5]:
                counters[5] = abs(a)
            if abs(a) > ERROR_TRIPWIRE:
                counters[11] += 1
    for j in range(m_nb):
        if hit[j] and tz[j] == 1:
            count[zl + 1, ty[j], tx[j]] += 1
            lastdir[zl + 1, ty[j], tx[j], 0] = frame[0, 0]
            lastdir[zl + 1, ty[j], tx[j], 1] = frame[0, 1]
    code = _assign(h, tie, T)
    material[zl, y, x] = code
    bits = 0
    nset = 0
    for t in range(T):
        bits |= h[t] << t
        nset += h[t]
    hbits[zl, y, x] = bits
    counters[6] += nset
    counters[7] += nset - (1 if code <= T else 0)
    order[zl, y, x] = rank
    counters[0] += 1


@nb.njit(cache=True, nogil=True)
def _candidates(ell, zl, y, x, winding, layer, visited, grad, cy, cx):
    nyy, nxx = layer.shape[1], layer.shape[2]
    gx, gy = grad[zl, y, x, 0], grad[zl, y, x, 1]
    k = 0
    for dy in range(-1, 2):
        for dx in range(-1, 2):
            if dx == 0 and dy == 0:
                continue
            yy, xx = y + dy, x + dx
            if yy < 0 or yy >= nyy or xx < 0 or xx >= nxx:
                continue
            if layer[zl, yy, xx] != ell or visited[zl, yy, xx] != 0:
                continue
            if _keeps(dx, dy, gx, gy, winding):
                cy[k], cx[k] = yy, xx
                k += 1
    return k


@nb.njit(cache=True, nogil=True)
def _halftone_layer(ell, s_lo, s_hi, z_base, nz, layer, phi, grad, nrm, gl, err, count,
                    lastdir, visited, material, hbits, order, pitch, tau, f_off, f_w, f_cnt,
                    modulation, k0, k1, check, counters):
    W, nyy, nxx = layer.shape
    T = gl.shape[3]
    kmax = f_off.shape[1]
    frame = np.zeros((2, 3))
    tx = np.zeros(26, dtype=np.int64)
    ty = np.zeros(26, dtype=np.int64)
    tz = np.zeros(26, dtype=np.int64)
    pf = np.zeros(26)
    pr = np.zeros(26)
    pn = np.zeros(26)
    hit = np.zeros(26, dtype=np.uint8)
    me = np.zeros(kmax, dtype=np.int64)
    mn = np.zeros(kmax, dtype=np.int64)
    cy = np.zeros(8, dtype=np.int64)
    cx = np.zeros(8, dtype=np.int64)
    tie = np.zeros(T, dtype=np.int64)
    has_up = np.zeros((nyy, nxx), dtype=np.uint8)
    qy = np.zeros(nyy * nxx, dtype=np.int64)
    qx = np.zeros(nyy * nxx, dtype=np.int64)
    for s in range(s_lo, s_hi):
        zl = s - z_base
        up_ok = s + 1 < nz
        if up_ok and zl + 1 >= W:
            raise ValueError("slice above the halftoned range is not resident")
        n_left = 0
        n_up = 0
        for y in range(nyy):
            for x in range(nxx):
                if layer[zl, y, x] != ell or visited[zl, y, x] != 0:
                    continue
                n_left += 1
                has_up[y, x] = 0
                if up_ok:
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            yy, xx = y + dy, x + dx
                            if 0 <= yy < nyy and 0 <= xx < nxx and layer[zl + 1, yy, xx] == ell:
                                has_up[y, x] = 1
                n_up += has_up[y, x]
        if n_left == 0:
            continue
        tie[:] = 0
        rank = 0
        while n_left > 0:
            # start: largest error count, then extreme distance-to-empty
            max_c = -1
            for y in range(nyy):
                for x in range(nxx):
                    if layer[zl, y, x] == ell and visited[zl, y, x] == 0 and count[zl, y, x] > max_c:
                        max_c = count[zl, y, x]
            nz_sum = 0.0
            for y in range(nyy):
                for x in range(nxx):
                    if layer[zl, y, x] == ell and visited[zl, y, x] == 0 and count[zl, y, x] == max_c:
                        nz_sum += nrm[zl, y, x, 2]
            down = nz_sum < 0.0
            by, bx = -1, -1
            for y in range(nyy):
                for x in range(nxx):
                    if layer[zl, y, x] != ell or visited[zl, y, x] != 0 or count[zl, y, x] != max_c:
                        continue
                    if by < 0:
                        by, bx = y, x
                    elif down and phi[zl, y, x] > phi[zl, by, bx]:
                        by, bx = y, x
                    elif not down and phi[zl, y, x] < phi[zl, by, bx]:
                        by, bx = y, x
            counters[8] += 1
            if max_c == 0 or n_up == 0:
                # birth or death: serpentine over the start's component
                counters[9] += 1
                head, tail = 0, 1
                qy[0], qx[0] = by, bx
                visited[zl, by, bx] = 2
                while head < tail:
                    y, x = qy[head], qx[head]
                    head += 1
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            yy, xx = y + dy, x + dx
                            if 0 <= yy < nyy and 0 <= xx < nxx and layer[zl, yy, xx] == ell \
                                    and visited[zl, yy, xx] == 0:
                                visited[zl, yy, xx] = 2
                                qy[tail], qx[tail] = yy, xx
                                tail += 1
                keys = qy[:tail] * nxx + qx[:tail]
                srt = np.argsort(keys)
                y_min = qy[srt[0]]
                i = 0
                while i < tail:
                    row = qy[srt[i]]
                    j = i
                    while j < tail and qy[srt[j]] == row:
                        j += 1
                    reverse = (row - y_min) % 2 == 1
                    for k in range(i, j):
                        kk = srt[j - 1 - (k - i)] if reverse else srt[k]
                        y, x = qy[kk], qx[kk]
                        row_dir = -1.0 if reverse else 1.0
                        _process_voxel(ell, s, zl, y, x, row_dir, 0.0, 1, 1,
                                       up_ok, layer, gl, err, count, lastdir, visited, material,
                                       hbits, order, nrm, pitch, tau, f_off, f_w, f_cnt,
                                       modulation, k0, k1, check, tie, rank, counters, frame,
                                       tx, ty, tz, pf, pr, pn, me, mn, hit)
                        rank += 1
                        n_left -= 1
                        n_up -= has_up[y, x]
                    i = j
                continue
            # walk around the component with a consistent winding
            winding = 1
            ldx, ldy = lastdir[zl, by, bx, 0], lastdir[zl, by, bx, 1]
            if ldx * grad[zl, by, bx, 1] - ldy * grad[zl, by, bx, 0] > 0.0:
                winding = -1
            y, x = by, bx
            pdx, pdy = 0.0, 0.0
            while True:
                visited[zl, y, x] = 1
                k = _candidates(ell, zl, y, x, winding, layer, visited, grad, cy, cx)
                if k == 0:
                    winding = -winding
                    counters[10] += 1
                    k = _candidates(ell, zl, y, x, winding, layer, visited, grad, cy, cx)
                vdown = nrm[zl, y, x, 2] < 0.0
                ny_, nx_ = -1, -1
                bphi, bcos, bkey = 0, 0.0, 0
                for i in range(k):
                    ddx, ddy = float(cx[i] - x), float(cy[i] - y)
                    cphi = phi[zl, cy[i], cx[i]]
                    ccos = _turn_cos(ddx, ddy, pdx, pdy)
                    ckey = cy[i] * nxx + cx[i]
                    if ny_ < 0 or _prefer(cphi, bphi, vdown, ccos, bcos, ckey, bkey):
                        ny_, nx_ = cy[i], cx[i]
                        bphi, bcos, bkey = cphi, ccos, ckey
                if ny_ >= 0:
                    fdx, fdy = float(nx_ - x), float(ny_ - y)
                elif pdx != 0.0 or pdy != 0.0:
                    fdx, fdy = pdx, pdy
                else:
                    gx, gy = grad[zl, y, x, 0], grad[zl, y, x, 1]
                    if gx == 0 and gy == 0:
                        fdx, fdy = 1.0, 0.0
                    else:
                        fdx, fdy = float(winding * gy), float(-winding * gx)
                _process_voxel(ell, s, zl, y, x, fdx, fdy, 0, winding, up_ok, layer, gl, err,
                               count, lastdir, visited, material, hbits, order, nrm, pitch, tau,
                               f_off, f_w, f_cnt, modulation, k0, k1, check, tie, rank, counters,
                               frame, tx, ty, tz, pf, pr, pn, me, mn, hit)
                rank += 1
                n_left -= 1
                n_up -= has_up[y, x]
                if ny_ < 0:
                    break
                pdx, pdy = float(nx_ - x), float(ny_ - y)
                y, x = ny_, nx_


# ---------------------------------------------------------------- driver


PLANES = {
    # name: (trailing shape factory, dtype, fill)
    "layer": ((), np.int8, -1),
    "phi": ((), np.int32, 0),
    "grad": ((2,), np.int32, 0),
    "normal": ((3,), np.float64, 0.0),
    "gl": (("T",), np.float64, 0.0),
    "err": (("T",), np.float64, 0.0),
    "count": ((), np.int32, 0),
    "lastdir": ((2,), np.float64, 0.0),
    "visited": ((), np.uint8, 0),
    "material": ((), np.int8, 0),
    "hbits": ((), np.uint8, 0),
    "order": ((), np.int32, -1),
}


def plane_shape(name: str, plane: tuple[int, int], channels: int) -> tuple:
    trail = tuple(channels if t == "T" else t for t in PLANES[name][0])
    return (*plane, *trail)


@dataclass
class HalftoneParams:
    filter: Filter2D
    seed: int
    pitch: tuple[float, float, float]
    tau: float
    check: bool = True

    def packed(self):
        off, w, cnt = self.filter.arrays()
        k0, k1 = seed_key(self.seed)
        return off, w, cnt, self.filter.modulation, k0, k1


def halftone_range(planes: dict, z_base: int, nz: int, s_lo: int, s_hi: int, n_layers: int,
                   params: HalftoneParams, counters: np.ndarray, workers: int = 1) -> None:
    """Halftone every layer on global slices ``[s_lo, s_hi)``.

    ``planes`` holds the window arrays named in ``PLANES`` starting at
    global slice ``z_base``; slice ``s_hi`` must be resident unless it is
    past the top of the grid.  ``counters`` is ``(n_layers, N_COUNTERS)``.
    """
    if s_hi <= s_lo:
        return
    off, w, cnt, mod, k0, k1 = params.packed()
    pitch = np.asarray(params.pitch, dtype=np.float64)
    p = planes

    def one(ell):
        _halftone_layer(ell, s_lo, s_hi, z_base, nz, p["layer"], p["phi"], p["grad"],
                        p["normal"], p["gl"], p["err"], p["count"], p["lastdir"], p["visited"],
                        p["material"], p["hbits"], p["order"], pitch, params.tau, off, w, cnt,
                        mod, k0, k1, params.check, counters[ell])

    if workers <= 1 or n_layers == 1:
        for ell in range(n_layers):
            one(ell)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(one, range(n_layers)))


def summarize_counters(counters: np.ndarray) -> dict:
    out = {}
    for k, name in enumerate(COUNTER_NAMES):
        col = counters[:, k]
        out[name] = float(col.max()) if name == "max_abs_error" else float(col.sum())
    return out


def distance_to_empty_planes(cls_window: np.ndarray):
    """``phi`` and ``grad`` for each slice of a class window."""
    phi = np.zeros(cls_window.shape, dtype=np.int32)
    grad = np.zeros(cls_window.shape + (2,), dtype=np.int32)
    for k in range(cls_window.shape[0]):
        de = distance_to_empty(cls_window[k])
        phi[k] = de.phi
        grad[k] = de.grad
    return phi, grad


def halftone_volume(cls: np.ndarray, layer: np.ndarray, gl: np.ndarray, normal: np.ndarray,
                    n_layers: int, params: HalftoneParams, workers: int = 1):
    """Halftone whole in-memory volumes; returns ``(planes, counters)``.

    ``gl`` holds the per-voxel tonal vectors with the tonal policy already
    applied for each voxel's layer.
    """
    nz, ny, nx = cls.shape
    T = gl.shape[-1]
    planes = {name: np.full((nz, *plane_shape(name, (ny, nx), T)), spec[2], dtype=spec[1])
              for name, spec in PLANES.items()}
    planes["layer"][:] = layer
    planes["gl"][:] = gl
    planes["normal"][:] = normal
    planes["phi"], planes["grad"] = distance_to_empty_planes(cls)
    planes["material"][cls == VoxelClass.EXTERIOR] = 0
    counters = np.zeros((n_layers, N_COUNTERS))
    halftone_range(planes, 0, nz, 0, nz, n_layers, params, counters, workers)
    return planes, counters


# ---------------------------------------------------------------- fill


@nb.njit(cache=True, nogil=True)
def _fill_kernel(s_lo, s_hi, z_base, cls, d, layer, material, source, off, d_max, T, counters):
    W, nyy, nxx = cls.shape
    white = T + 1
    for s in range(s_lo, s_hi):
        zl = s - z_base
        for y in range(nyy):
            for x in range(nxx):
                if cls[zl, y, x] == 0:
                    material[zl, y, x] = 0
                    source[zl, y, x] = -1
                    continue
                if layer[zl, y, x] >= 0:
                    source[zl, y, x] = layer[zl, y, x]
                    continue
                if d[zl, y, x] >= d_max:
                    material[zl, y, x] = white
                    source[zl, y, x] = -1
                    continue
                found = False
                # mask order is nearest first, ties in scan order
                for k in range(off.shape[0]):
                    z = zl + off[k, 2]
                    yy = y + off[k, 1]
                    xx = x + off[k, 0]
                    if z < 0 or z >= W or yy < 0 or yy >= nyy or xx < 0 or xx >= nxx:
                        continue
                    if layer[z, yy, xx] >= 0:
                        material[zl, y, x] = material[z, yy, xx]
                        source[zl, y, x] = layer[z, yy, xx]
                        found = True
                        break
                if not found:
                    material[zl, y, x] = white
                    source[zl, y, x] = -1
                    counters[0] += 1


def fill_range(cls, d, layer, material, source, mask: DistanceMask, d_max: float, channels: int,
               z_base: int, s_lo: int, s_hi: int, counters: np.ndarray) -> None:
    """Assign materials to non-layer voxels of global slices ``[s_lo, s_hi)``.

    Exterior voxels get 0, voxels at or beyond ``d_max`` get white and the
    rest copy the nearest layer voxel found within ``mask``.  ``source``
    records the layer each material came from (-1 for none).
    """
    _fill_kernel(s_lo, s_hi, z_base, cls, d, layer, material, source, mask.offsets, d_max,
                 channels, counters)


def fill_between_layers(material, layer, cls, d, spec: GridSpec, tau: float, d_max: float,
                        channels: int = 3, counters=None):
    """Whole-volume fill; returns ``(material, source_layer)`` copies.

    The search reaches one layer thickness: between-layers voxels touch a
    layer sheet on every shape we measured, and misses fall back to white
    and are counted.
    """
    material = np.array(material, dtype=np.int8, copy=True)
    source = np.full(cls.shape, -1, dtype=np.int8)
    mask = build_distance_mask(spec, tau)
    c = np.zeros(1) if counters is None else counters
    fill_range(cls, d, layer, material, source, mask, d_max, channels, 0, 0, cls.shape[0], c)
    return material, source
