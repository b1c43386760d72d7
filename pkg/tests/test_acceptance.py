"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""
import time
import tracemalloc
from pathlib import Path

import numba as nb
import numpy as np

from layertone.colorsep import TonalPolicy, demichel_fractions
from layertone.field import build_distance_mask, distance_to_empty, extract_layers, sweep_transfer
from layertone.grid import GridSpec, VoxelClass
from layertone.halftone import (N_COUNTERS, PLANES, HalftoneParams, distance_to_empty_planes,
                                halftone_range, plane_shape, summarize_counters)
from layertone.pipeline import (ArraySource, ImplicitSource, JobConfig, execute, process_volume,
                                read_slice, sphere_source)
from layertone.traverse import builtin_filter

from conftest import ACCEPTANCE_LINES, PRINTER_PITCH, classes_from_interior, random_blobs
from oracles import brute_distance, brute_l1_to_empty, layer_conditions, serpentine_fs_reference

IDENTITY = TonalPolicy.identity(3)


def _record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] AC{number} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _tree(out_dir):
    root = Path(out_dir)
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _plate_config(out, image):
    n = image.shape[0]
    interior = np.zeros((5, n, n), dtype=bool)
    interior[1:4] = True
    tone = np.zeros((5, n, n, 3))
    tone[..., 0] = image
    spec = GridSpec((n, n, 5), (1.0, 1.0, 1.0))
    return JobConfig(out, source=ArraySource(spec, interior, tone), layers=1, filter="fs",
                     policy=IDENTITY, metrics=False)


def test_ac1_flat_plate_matches_reference(tmp_path):
    rng = np.random.default_rng(1)
    execute(_plate_config(tmp_path / "warm", rng.random((16, 16))))
    image = rng.random((256, 256))
    t0 = time.perf_counter()
    res = execute(_plate_config(tmp_path / "out", image))
    elapsed = time.perf_counter() - t0
    ref = serpentine_fs_reference(image)
    bottom = read_slice(tmp_path / "out" / "slice_000001.png")
    got = (bottom == 1).astype(np.uint8)
    mismatches = int(np.count_nonzero(got != ref))
    ok = mismatches == 0 and res.slices_written == 5 and elapsed < 5.0
    _record(1, "flat-plate oracle", ok, f"{mismatches} mismatched voxels of 65536, {elapsed:.2f} s")


def test_ac2_distance_field_oracle():
    spec = GridSpec((32, 32, 32), PRINTER_PITCH)
    d_max = 6 * spec.layer_thickness
    mask = build_distance_mask(spec, d_max)
    d_bad = g_bad = 0
    sweep_time = 0.0
    for k in range(10):
        rng = np.random.default_rng(100 + k)
        cls = classes_from_interior(random_blobs(rng, (32, 32, 32), n_balls=5, rmin=3, rmax=9))
        g = rng.random((32, 32, 32, 3))
        t0 = time.perf_counter()
        df = sweep_transfer(g, cls, mask, d_max)
        sweep_time += time.perf_counter() - t0
        bd, bg, tie = brute_distance(cls, g, spec.pitch, d_max)
        d_bad += int(np.count_nonzero(df.d != bd))
        g_bad += int(np.count_nonzero(np.any(df.ghat[~tie] != bg[~tie], axis=-1)))
    ok = d_bad == 0 and g_bad == 0 and sweep_time < 60.0
    _record(2, "distance-field oracle", ok,
            f"{d_bad} distance and {g_bad} tonal mismatches over 10 shapes, sweeps {sweep_time:.2f} s")


def test_ac3_distance_to_empty_oracle():
    rng = np.random.default_rng(7)
    bad = 0
    for k in range(20):
        density = rng.uniform(0.5, 0.95)
        inside = rng.random((64, 64)) < density
        if k % 2:
            inside = random_blobs(rng, (5, 64, 64), n_balls=8, rmin=4, rmax=14)[2]
        phi = distance_to_empty(inside.astype(np.int8)).phi
        bad += int(np.count_nonzero(phi != brute_l1_to_empty(inside)))
    _record(3, "distance-to-empty oracle", bad == 0, f"{bad} mismatches over 20 slices")


def _printer_sphere(radius_voxels, tone):
    r = radius_voxels * PRINTER_PITCH[0]
    spec = GridSpec.from_bounds((-r, -r, -r), (r, r, r), PRINTER_PITCH)
    return sphere_source(spec, (0.0, 0.0, 0.0), r, tone)


def test_ac4_sphere_tone_preservation(tmp_path):
    src = _printer_sphere(60, (0.3, 0.3, 0.3))
    t0 = time.perf_counter()
    res = execute(JobConfig(tmp_path / "out", source=src, layers=12, policy=IDENTITY, workers=4))
    elapsed = time.perf_counter() - t0
    rmse = res.report.rmse
    ok = bool(np.all(rmse < 0.03)) and elapsed < 300.0
    detail = "RMSE " + " ".join(f"{n}={v:.4f}" for n, v in zip(res.report.names, rmse))
    detail += f" (C, M below 0.01: {bool(np.all(rmse[:2] < 0.01))}), {elapsed:.1f} s"
    _record(4, "sphere tone preservation", ok, detail)


def _traced_halftone(cls, layer, gl, normal, n_layers, params):
    """Halftone one slice at a time and verify that only the current slice
    and the next one ever receive error."""
    nz, ny, nx = cls.shape
    planes = {name: np.full((nz, *plane_shape(name, (ny, nx), 3)), spec[2], dtype=spec[1])
              for name, spec in PLANES.items()}
    planes["layer"][:] = layer
    planes["gl"][:] = gl
    planes["normal"][:] = normal
    planes["phi"], planes["grad"] = distance_to_empty_planes(cls)
    counters = np.zeros((n_layers, N_COUNTERS))
    stray = 0
    for s in range(nz):
        before = planes["err"].copy()
        visited_before = planes["visited"][s].copy()
        halftone_range(planes, 0, nz, s, s + 1, n_layers, params, counters)
        changed = np.any(planes["err"] != before, axis=-1)
        stray += int(np.count_nonzero(changed[:s])) + int(np.count_nonzero(changed[s + 2:]))
        stray += int(np.count_nonzero(changed[s] & (visited_before == 1)))
    return planes, counters, stray


def test_ac5_traversal_completeness():
    spec = GridSpec((34, 34, 34), (1.0, 1.0, 1.0))
    c = 16.5
    shapes = {
        "sphere": lambda x, y, z: (x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2 <= 14 ** 2,
        "torus": lambda x, y, z: (np.hypot(x - c, z - c) - 10) ** 2 + (y - c) ** 2 <= 4.5 ** 2,
        "two blobs": lambda x, y, z: ((x - 9) ** 2 + (y - c) ** 2 + (z - 10) ** 2 <= 7 ** 2)
        | ((x - 24) ** 2 + (y - c) ** 2 + (z - 22) ** 2 <= 8 ** 2),
    }
    params = HalftoneParams(builtin_filter("zhoufang"), 3, spec.pitch, spec.layer_thickness)
    L = 4
    parts = []
    ok = True
    for name, inside in shapes.items():
        src = ImplicitSource(spec, inside, (0.4, 0.3, 0.6))
        ref = process_volume(src, layers=L, seed=3)
        planes, counters, stray = _traced_halftone(ref.cls, ref.layer, ref.gl, ref.normal, L, params)
        stats = summarize_counters(counters)
        inlayer = ref.layer >= 0
        missed = int(np.count_nonzero(planes["order"][inlayer] < 0))
        extra = int(np.count_nonzero(planes["order"][~inlayer] >= 0))
        ok &= (missed == 0 and extra == 0 and stats["visited"] == np.count_nonzero(inlayer)
               and stats["diffusion_violations"] == 0 and stray == 0
               and np.array_equal(planes["material"], ref.planes["material"]))
        parts.append(f"{name}: {int(stats['visited'])} visited, {missed} missed, "
                     f"{int(stats['diffusion_violations']) + stray} bad diffusions, "
                     f"{int(stats['serpentine_components'])} serpentine scans")
    _record(5, "traversal completeness", ok, "; ".join(parts))


def test_ac6_layer_partition():
    src = _printer_sphere(60, (0.3, 0.3, 0.3))
    spec = src.spec
    L = 12
    tau = spec.layer_thickness
    d_max = L * tau
    cls = np.stack([src.classify(s) for s in range(spec.nz)])
    g = np.zeros(cls.shape + (1,))
    df = sweep_transfer(g, cls, build_distance_mask(spec, d_max), d_max)
    layer = extract_layers(df.d, cls, L, tau, d_max)
    masks = layer_conditions(df.d, cls, L, tau, d_max)
    inside = cls != VoxelClass.EXTERIOR
    problems = []
    assigned = np.zeros(cls.shape, dtype=np.int64)
    for ell in range(L):
        sel = layer == ell
        assigned += sel
        if not np.all(masks[ell][sel]):
            problems.append(f"layer {ell} holds voxels failing its condition")
        if not sel.any():
            problems.append(f"layer {ell} empty")
        earlier = np.zeros(cls.shape, dtype=bool)
        for k in range(ell):
            earlier |= masks[k]
        if np.any(masks[ell] & ~earlier & ~sel):
            problems.append(f"layer {ell} misses qualifying voxels")
    if assigned.max() > 1:
        problems.append("layers overlap")
    between = inside & (df.d < d_max) & (layer < 0)
    shell = inside & (df.d < d_max)
    if not np.array_equal((layer >= 0) | between, shell) or np.any(between & (layer >= 0)):
        problems.append("layers and between-layer set do not tile the shell")
    if np.any((layer >= 0) & ~inside):
        problems.append("exterior voxel in a layer")
    ext = np.pad(~inside, 1)
    near_ext = np.zeros(cls.shape, dtype=bool)
    nz, ny, nx = cls.shape
    for dz in range(3):
        for dy in range(3):
            for dx in range(3):
                near_ext |= ext[dz:dz + nz, dy:dy + ny, dx:dx + nx]
    if np.any((layer == 0) & ~near_ext):
        problems.append("layer-0 voxel without an exterior neighbor")
    sizes = [int(np.count_nonzero(layer == ell)) for ell in range(L)]
    detail = "; ".join(problems) if problems else f"layer sizes {sizes}, {int(between.sum())} between"
    _record(6, "layer partition", not problems, detail)


def test_ac7_inter_layer_decorrelation():
    n, L = 128, 6
    nz = 2 * L + 6
    interior = np.zeros((nz, n, n), dtype=bool)
    interior[1:nz - 1] = True
    spec = GridSpec((n, n, nz), (1.0, 1.0, 1.0))
    res = process_volume(ArraySource(spec, interior, (0.5, 0.5, 0.5)), layers=L,
                         filter_name="zhoufang", seed=17)
    top = nz - 2
    worst = 0.0
    pairs = 0
    for ell in range(L - 1):
        a, b = top - ell, top - ell - 1
        assert np.all(res.layer[a] == ell) and np.all(res.layer[b] == ell + 1)
        for t in range(3):
            ha = ((res.planes["hbits"][a] >> t) & 1).ravel().astype(float)
            hb = ((res.planes["hbits"][b] >> t) & 1).ravel().astype(float)
            worst = max(worst, abs(float(np.corrcoef(ha, hb)[0, 1])))
        pairs = ha.size
    _record(7, "inter-layer decorrelation", worst < 0.05,
            f"max |corr| {worst:.4f} over adjacent layer pairs of {pairs} voxels")


def _tall_source(nz, side=40):
    r = side / 2 - 2
    spec = GridSpec((side, side, nz), PRINTER_PITCH)
    px, _, pz = PRINTER_PITCH
    cx = side / 2 * px
    height = nz * pz

    def inside(x, y, z):
        rad = r * px * (0.7 + 0.3 * np.sin(6.0 * z / height))
        return ((x - cx) ** 2 + (y - cx) ** 2 <= rad ** 2) & (z > 2 * pz) & (z < height - 2 * pz)

    def tone(x, y, z):
        return np.stack([0.5 + 0.4 * np.sin(x * 20), 0.3 + 0.2 * np.cos(y * 15),
                         np.full_like(z, 0.25)], axis=1)

    return ImplicitSource(spec, inside, tone)


def test_ac8_determinism_and_streaming(tmp_path):
    src = _tall_source(240)
    base = dict(source=src, seed=21, layers=12)
    trees = {}
    for label, kw in {"full": dict(chunk_slices=240), "128": dict(chunk_slices=128),
                      "64": dict(chunk_slices=64), "64/4 workers": dict(chunk_slices=64, workers=4)}.items():
        out = tmp_path / label.replace("/", "_").replace(" ", "_")
        execute(JobConfig(out, **base, **kw))
        trees[label] = _tree(out)
    same = all(t == trees["full"] for t in trees.values())

    peaks = []
    for nz in (200, 400):
        src = _tall_source(nz, side=64)
        tracemalloc.start()
        execute(JobConfig(tmp_path / f"mem{nz}", source=src, layers=12, chunk_slices=32,
                          metrics=False))
        peaks.append(tracemalloc.get_traced_memory()[1])
        tracemalloc.stop()
    growth = peaks[1] / peaks[0] - 1.0
    ok = same and growth < 0.10
    _record(8, "determinism and streaming", ok,
            f"trees identical across {list(trees)}: {same}; peak memory "
            f"{peaks[0] / 2 ** 20:.1f} -> {peaks[1] / 2 ** 20:.1f} MiB ({100 * growth:+.1f}%) as nz doubles")


@nb.njit(cache=True)
def _splitmix_uniform(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, float(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def _overprint_monte_carlo(tones, samples, seed):
    """Simulate independent per-channel coverage; a sample covered by a set
    of channels credits each of them equally."""
    n, T = tones.shape
    out = np.zeros((n, T + 1))
    for i in range(n):
        state = np.uint64(seed) * np.uint64(1000003) + np.uint64(i)
        hit = np.zeros(T, dtype=np.uint8)
        acc = np.zeros(T + 1)
        for _ in range(samples):
            size = 0
            for t in range(T):
                state, u = _splitmix_uniform(state)
                hit[t] = 1 if u < tones[i, t] else 0
                size += hit[t]
            if size == 0:
                acc[T] += 1.0
            else:
                for t in range(T):
                    if hit[t]:
                        acc[t] += 1.0 / size
        for k in range(T + 1):
            out[i, k] = acc[k] / samples
    return out


def test_ac9_demichel_equations():
    rng = np.random.default_rng(99)
    tones = rng.random((1000, 3))
    frac = demichel_fractions(tones)
    sum_err = float(np.max(np.abs(frac.sum(axis=1) - 1.0)))
    mc = _overprint_monte_carlo(tones, 1_000_000, 5)
    mc_err = float(np.max(np.abs(mc - frac)))
    ok = sum_err <= 1e-12 and mc_err <= 0.003
    _record(9, "Demichel correctness", ok,
            f"max |sum - 1| {sum_err:.2e}, max Monte-Carlo deviation {mc_err:.5f}")
