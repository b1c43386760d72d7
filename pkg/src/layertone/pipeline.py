"""
Streaming slice pipeline: classify, sample colors, separate, transfer tones
inward, extract layers, halftone each layer, fill between layers, write
slices and tone metrics.

Slices flow through a rolling window.  Each stage keeps a frontier (the
first slice it has not finished) and runs as far as its inputs allow, so a
slice is written as soon as everything it depends on is final and the
result does not depend on how many slices are classified at a time.
"""
from __future__ import annotations

import contextlib
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
from PIL import Image

from .colorsep import (CHANNEL_NAMES, SeparationLUT, TonalPolicy, demichel_fractions, separate)
from .field import (DEFAULT_LAYERS, NORMAL_CONTEXT, build_distance_mask, extract_layers, normals,
                    sweep_sources, _sweep_kernel, write_distance_pgm)
from .grid import GridSpec, SliceChunk, VoxelClass, surface_from_interior
from .halftone import (N_COUNTERS, PLANES, HalftoneParams, distance_to_empty_planes,
                       fill_range, halftone_range, plane_shape, summarize_counters)
from .traverse import builtin_filter, load_filters
from .voxelize import (MissingColorSource, NonWatertightMesh, TextureImage, Voxelizer, load_obj)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NOT_WATERTIGHT = 4

PALETTE = [(0, 0, 0), (0, 255, 255), (255, 0, 255), (255, 255, 0), (255, 255, 255)]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- sources


class VoxelSource(Protocol):
    """Anything that can classify slices and supply surface tonal values."""

    spec: GridSpec
    channels: int

    def classify(self, s: int) -> np.ndarray: ...

    def tonals(self, s: int, class_plane: np.ndarray) -> np.ndarray: ...

    def is_empty(self) -> bool: ...


class _InteriorCache:
    """Keeps the last few interior planes so each is computed once."""

    def __init__(self, fn: Callable[[int], np.ndarray | None], keep: int = 4):
        self.fn = fn
        self.keep = keep
        self.planes: dict[int, np.ndarray | None] = {}

    def __call__(self, s: int):
        plane = self.planes.get(s)
        if s not in self.planes:
            plane = self.planes[s] = self.fn(s)
            # dicts keep insertion order, so this evicts the oldest entries
            for k in list(self.planes)[:-self.keep]:
                del self.planes[k]
        return plane


class MeshSource:
    """Textured or vertex-colored mesh, separated through a LUT."""

    def __init__(self, mesh, spec: GridSpec, texture: TextureImage | None = None,
                 lut: SeparationLUT | None = None, lod: float | None = None,
                 counters: Counter | None = None):
        if mesh.vertex_colors is None and (mesh.uv is None or texture is None):
            raise MissingColorSource("mesh has neither texture coordinates with a texture nor vertex colors")
        self.spec = spec
        self.vox = Voxelizer(mesh, spec)
        self.texture = texture
        self.lut = lut if lut is not None else SeparationLUT.naive()
        self.channels = self.lut.channels
        self.lod = lod
        self.counters = counters if counters is not None else Counter()
        self._interior = _InteriorCache(self.vox.interior)

    def is_empty(self) -> bool:
        return self.vox.heights.size == 0

    def classify(self, s: int) -> np.ndarray:
        return self.vox.classify(s, self._interior(s - 1), self._interior(s), self._interior(s + 1))

    def tonals(self, s: int, class_plane: np.ndarray) -> np.ndarray:
        rgb = self.vox.surface_colors(s, class_plane, self.texture, self.lod)
        out = np.zeros(class_plane.shape + (self.channels,))
        surf = class_plane == VoxelClass.SURFACE
        out[surf] = separate(rgb[surf], self.lut, counters=self.counters)
        return out


class ImplicitSource:
    """Solid given by an inside test on voxel centers, with tonal values
    given directly (a constant vector or a function of position)."""

    def __init__(self, spec: GridSpec, inside: Callable, tone, channels: int = 3):
        self.spec = spec
        self.inside_fn = inside
        self.tone = tone
        self.channels = channels
        self._interior = _InteriorCache(self._inside)

    def _inside(self, s: int):
        if not 0 <= s < self.spec.nz:
            return None
        y, x = np.mgrid[0:self.spec.ny, 0:self.spec.nx]
        cx, cy, cz = self.spec.center(x, y, np.full_like(x, s))
        return np.asarray(self.inside_fn(cx, cy, cz), dtype=bool)

    def is_empty(self) -> bool:
        return not any(self._inside(s).any() for s in range(self.spec.nz))

    def classify(self, s: int) -> np.ndarray:
        return surface_from_interior(self._interior(s - 1), self._interior(s), self._interior(s + 1))

    def tonals(self, s: int, class_plane: np.ndarray) -> np.ndarray:
        out = np.zeros(class_plane.shape + (self.channels,))
        surf = class_plane == VoxelClass.SURFACE
        if callable(self.tone):
            ys, xs = np.nonzero(surf)
            cx, cy, cz = self.spec.center(xs, ys, np.full_like(xs, s))
            out[surf] = self.tone(cx, cy, cz)
        else:
            out[surf] = np.asarray(self.tone, dtype=np.float64)
        return out


class ArraySource:
    """Solid given as a boolean ``(nz, ny, nx)`` interior volume."""

    def __init__(self, spec: GridSpec, interior: np.ndarray, tone, channels: int = 3):
        if interior.shape != (spec.nz, spec.ny, spec.nx):
            raise ConfigError("interior volume does not match the grid")
        self.spec = spec
        self.interior = interior.astype(bool)
        self.tone = np.asarray(tone, dtype=np.float64)
        self.channels = channels

    def is_empty(self) -> bool:
        return not self.interior.any()

    def _plane(self, s):
        return self.interior[s] if 0 <= s < self.spec.nz else None

    def classify(self, s: int) -> np.ndarray:
        return surface_from_interior(self._plane(s - 1), self._plane(s), self._plane(s + 1))

    def tonals(self, s: int, class_plane: np.ndarray) -> np.ndarray:
        out = np.zeros(class_plane.shape + (self.channels,))
        surf = class_plane == VoxelClass.SURFACE
        tone = self.tone[s][surf] if self.tone.ndim == 4 else self.tone
        out[surf] = tone
        return out


def sphere_source(spec: GridSpec, center, radius: float, tone) -> ImplicitSource:
    c = np.asarray(center, dtype=np.float64)
    return ImplicitSource(spec, lambda x, y, z: (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2
                          <= radius * radius, tone)


# ---------------------------------------------------------------- config


@dataclass
class JobConfig:
    """Everything one run needs.

    Either ``mesh_path`` or ``source`` supplies the solid.  When ``grid``
    is omitted it is derived from the mesh bounds and ``dpi``.
    """

    out_dir: Path
    mesh_path: Path | None = None
    texture_path: Path | None = None
    source: VoxelSource | None = None
    grid: GridSpec | None = None
    dpi: tuple[float, float, float] = (600.0, 600.0, 900.0)
    layers: int = DEFAULT_LAYERS
    chunk_slices: int = 100
    filter: str = "zhoufang"
    filter_path: Path | None = None
    seed: int = 0
    policy: TonalPolicy = field(default_factory=TonalPolicy)
    lut_path: Path | None = None
    metrics: bool = True
    debug_dumps: bool = False
    workers: int = 1
    lod: float | None = None
    check: bool = True

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("--layers must be at least 1")
        if self.chunk_slices < 1:
            raise ConfigError("--chunk must be at least 1")
        if self.mesh_path is None and self.source is None:
            raise ConfigError("no input: give a mesh path or a voxel source")
        if min(self.dpi) <= 0:
            raise ConfigError("DPI values must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


@dataclass
class ToneReport:
    """Per-slice actual and expected material fractions and their RMSE."""

    channels: int
    slices: list[int] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    actual: list[np.ndarray] = field(default_factory=list)
    expected: list[np.ndarray] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        base = CHANNEL_NAMES if self.channels == 3 else tuple(f"T{k}" for k in range(self.channels))
        return (*base, "W")

    def add(self, s: int, n: int, actual: np.ndarray, expected: np.ndarray) -> None:
        self.slices.append(s)
        self.counts.append(n)
        self.actual.append(actual)
        self.expected.append(expected)

    def _err(self):
        if not self.slices:
            return np.zeros((0, self.channels + 1))
        return np.asarray(self.actual) - np.asarray(self.expected)

    @property
    def rmse(self) -> np.ndarray:
        """Per-material RMSE across slices, every slice weighted equally."""
        e = self._err()
        return np.sqrt(np.mean(e ** 2, axis=0)) if len(e) else np.zeros(self.channels + 1)

    @property
    def weighted_rmse(self) -> np.ndarray:
        """Per-material RMSE with slices weighted by their voxel count."""
        e = self._err()
        if not len(e):
            return np.zeros(self.channels + 1)
        w = np.asarray(self.counts, dtype=np.float64)
        return np.sqrt((w[:, None] * e ** 2).sum(axis=0) / w.sum())

    def summary_lines(self) -> list[str]:
        rows = ["material\trmse\tweighted_rmse"]
        for name, r, wr in zip(self.names, self.rmse, self.weighted_rmse):
            rows.append(f"{name}\t{r:.6f}\t{wr:.6f}")
        for k in sorted(self.diagnostics):
            rows.append(f"# {k}\t{self.diagnostics[k]:.6g}")
        return rows


def slice_tone_stats(material: np.ndarray, effective_tone: np.ndarray, d: np.ndarray,
                     class_plane: np.ndarray, d_max: float, channels: int):
    """Voxel count, actual fractions and Demichel-expected fractions over the
    interior voxels of one slice closer than ``d_max`` to the surface;
    ``None`` when no voxel qualifies."""
    sel = (class_plane != VoxelClass.EXTERIOR) & (d < d_max)
    n = int(np.count_nonzero(sel))
    if n == 0:
        return None
    codes = material[sel]
    actual = np.array([np.count_nonzero(codes == k + 1) for k in range(channels + 1)]) / n
    expected = demichel_fractions(effective_tone[sel].mean(axis=0))
    return n, actual, expected


def tone_metrics(material: np.ndarray, effective_tone: np.ndarray, d: np.ndarray,
                 cls: np.ndarray, d_max: float, channels: int = 3) -> ToneReport:
    """Tone report for whole volumes (``(nz, ny, nx)`` materials)."""
    rep = ToneReport(channels)
    for s in range(material.shape[0]):
        st = slice_tone_stats(material[s], effective_tone[s], d[s], cls[s], d_max, channels)
        if st is not None:
            rep.add(s, *st)
    return rep


# ---------------------------------------------------------------- writers


def write_slice(material_plane: np.ndarray, s: int, z_mm: float, out_dir: Path, manifest,
                channels: int = 3) -> Path:
    """Indexed PNG of material codes plus one manifest line."""
    path = Path(out_dir) / f"slice_{s:06d}.png"
    img = Image.fromarray(np.ascontiguousarray(material_plane.astype(np.uint8)), mode="P")
    pal = list(PALETTE[:channels + 2]) if channels == 3 else \
        [(0, 0, 0)] + [(128, 128, 128)] * channels + [(255, 255, 255)]
    img.putpalette([c for rgb in pal for c in rgb])
    img.save(path, optimize=False)
    counts = np.bincount(material_plane.ravel().astype(np.int64), minlength=channels + 2)
    manifest.write(f"{s}\t{z_mm:.6f}\t" + "\t".join(str(int(c)) for c in counts[:channels + 2]) + "\n")
    manifest.flush()
    return path


def read_slice(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im)


def manifest_header(channels: int) -> str:
    names = CHANNEL_NAMES if channels == 3 else tuple(f"T{k}" for k in range(channels))
    return "slice\tz_mm\texterior\t" + "\t".join(names) + "\tW\n"


def _write_pgm8(path, plane: np.ndarray) -> None:
    ny, nx = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode())
        fh.write(np.ascontiguousarray(plane.astype(np.uint8)).tobytes())


# ---------------------------------------------------------------- run


@dataclass
class JobResult:
    status: int
    out_dir: Path | None = None
    slices_written: int = 0
    report: ToneReport | None = None
    counters: dict = field(default_factory=dict)
    peak_slices: int = 0
    message: str = ""


def _load_filter(config: JobConfig):
    if config.filter_path is not None:
        table = load_filters(config.filter_path)
        if config.filter not in table:
            raise ConfigError(f"filter {config.filter!r} not in {config.filter_path}")
        return table[config.filter]
    try:
        return builtin_filter(config.filter)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None


def build_source(config: JobConfig, counters: Counter) -> VoxelSource:
    if config.source is not None:
        return config.source
    mesh = load_obj(config.mesh_path)
    if len(mesh.triangles) == 0:
        raise ConfigError(f"{config.mesh_path}: mesh has no triangles")
    texture = TextureImage.load(config.texture_path) if config.texture_path else None
    lut = SeparationLUT.load(config.lut_path) if config.lut_path else None
    spec = config.grid or GridSpec.from_dpi(*mesh.bounds(), config.dpi)
    return MeshSource(mesh, spec, texture, lut, config.lod, counters)


class StreamingRun:
    """Rolling-window execution of one job."""

    def __init__(self, config: JobConfig, source: VoxelSource, counters: Counter):
        config.validate()
        self.config = config
        self.source = source
        self.spec = spec = source.spec
        self.T = source.channels
        self.L = config.layers
        self.tau = spec.layer_thickness
        self.d_max = self.L * self.tau
        self.d_null = 2.0 * self.d_max
        self.mask = build_distance_mask(spec, self.d_max)
        self.reach = int(np.abs(self.mask.offsets[:, 2]).max())
        # nearest-layer search for between-layers voxels, see fill_between_layers
        self.fill_mask = build_distance_mask(spec, self.tau)
        self.fill_reach = int(np.abs(self.fill_mask.offsets[:, 2]).max())
        halo = halo_requirement(spec, self.L)
        if config.chunk_slices < min(halo, spec.nz):
            raise ConfigError(f"--chunk {config.chunk_slices} is below the {halo}-slice halo these layers need")
        if len(config.policy.scales) != self.T:
            raise ConfigError(f"tonal policy has {len(config.policy.scales)} channels, source has {self.T}")
        self.scale, self.thresh = config.policy.table(self.L)
        self.params = HalftoneParams(_load_filter(config), config.seed, spec.pitch, self.tau, config.check)
        self.counters = counters
        self.ht_counters = np.zeros((self.L, N_COUNTERS))
        self.fill_counters = np.zeros(1)
        self.report = ToneReport(self.T)
        self.peak = 0
        self.written = 0

    # stage frontiers are global slice indices; everything below is done
    def _new_window(self) -> SliceChunk:
        ch = SliceChunk(0, 0)
        plane = self.spec.plane_shape
        ch.allocate("cls", plane, np.int8, 0)
        ch.allocate("g", (*plane, self.T), np.float64, 0.0)
        ch.allocate("d", plane, np.float64, self.d_null)
        ch.allocate("near", plane, np.int64, -1)
        ch.allocate("ghat", (*plane, self.T), np.float64, 0.0)
        ch.allocate("source", plane, np.int8, -1)
        for name, (_, dtype, fill) in PLANES.items():
            ch.allocate(name, plane_shape(name, plane, self.T), dtype, fill)
        return ch

    def _effective_tone(self, ghat, layer):
        idx = np.clip(layer, 0, self.L - 1)
        g = ghat * self.scale[idx]
        return np.where(g < self.thresh[idx], 0.0, g)

    def run(self, out_dir: Path) -> None:
        cfg, spec, nz = self.config, self.spec, self.spec.nz
        out_dir.mkdir(parents=True, exist_ok=True)
        debug = out_dir / "debug" if cfg.debug_dumps else None
        if debug:
            debug.mkdir(exist_ok=True)
        win = self._new_window()
        c_hi = lay_hi = ht_hi = out_hi = 0
        with contextlib.ExitStack() as stack:
            manifest = stack.enter_context(open(out_dir / "manifest.tsv", "w"))
            manifest.write(manifest_header(self.T))
            metrics = None
            if cfg.metrics:
                metrics = stack.enter_context(open(out_dir / "metrics.tsv", "w"))
                metrics.write("slice\tchannel\tactual\texpected\terror\n")
            while out_hi < nz:
                # classify the next chunk and stamp its surface voxels
                c_next = min(c_hi + cfg.chunk_slices, nz)
                win.grow(c_next - win.stop)
                self.peak = max(self.peak, win.slice_count)
                p = win.planes
                if c_hi > 0:
                    # earlier sources stamp the new slices first, keeping every
                    # target's stamps in source scan order
                    lo = max(c_hi - self.reach, 0)
                    if lo < win.first_slice:
                        raise RuntimeError("source slices left the window before stamping finished")
                    k0, k1 = win.local(lo), win.local(c_hi - 1) + 1
                    src, src_g = sweep_sources(p["cls"][k0:k1], p["g"][k0:k1], lo)
                    _sweep_kernel(src, src_g, self.mask.offsets, self.mask.distances, win.first_slice,
                                  c_hi, c_next, p["d"], p["near"], p["ghat"])
                for s in range(c_hi, c_next):
                    cls = self.source.classify(s)
                    k = win.local(s)
                    p["cls"][k] = cls
                    p["g"][k] = self.source.tonals(s, cls)
                    self.counters["surface_voxels"] += int(np.count_nonzero(cls == VoxelClass.SURFACE))
                    self.counters["interior_voxels"] += int(np.count_nonzero(cls != VoxelClass.EXTERIOR))
                    src, src_g = sweep_sources(p["cls"][k:k + 1], p["g"][k:k + 1], s)
                    _sweep_kernel(src, src_g, self.mask.offsets, self.mask.distances, win.first_slice,
                                  win.first_slice, c_next, p["d"], p["near"], p["ghat"])
                c_hi = c_next
                d_hi = nz if c_hi == nz else max(c_hi - self.reach, 0)
                # normals read final d up to NORMAL_CONTEXT slices away
                lay_next = nz if d_hi == nz else max(d_hi - NORMAL_CONTEXT, lay_hi)
                if lay_next > lay_hi:
                    self._layers(win, lay_hi, lay_next)
                    lay_hi = lay_next
                # halftoning a slice reads the layers of the slice above
                ht_next = nz if lay_hi == nz else max(lay_hi - 1, ht_hi)
                if ht_next > ht_hi:
                    halftone_range(win.planes, win.first_slice, nz, ht_hi, ht_next, self.L,
                                   self.params, self.ht_counters, cfg.workers)
                    ht_hi = ht_next
                # fill reads materials up to fill_reach slices away
                out_next = nz if ht_hi == nz else max(ht_hi - self.fill_reach, out_hi)
                if out_next > out_hi:
                    self._finish(win, out_hi, out_next, out_dir, manifest, metrics, debug)
                    out_hi = out_next
                win.drop_below(out_hi - self.fill_reach)

    def _layers(self, win: SliceChunk, z0: int, z1: int) -> None:
        p = win.planes
        lo, hi = win.local(z0), win.local(z1 - 1) + 1
        ctx_lo = max(lo - NORMAL_CONTEXT, 0)
        ctx_hi = min(hi + NORMAL_CONTEXT, win.slice_count)
        d = p["d"][ctx_lo:ctx_hi]
        cls = p["cls"][ctx_lo:ctx_hi]
        a, b = lo - ctx_lo, hi - ctx_lo
        layer = extract_layers(d, cls, self.L, self.tau, self.d_max, a, b)
        p["layer"][lo:hi] = layer
        p["normal"][lo:hi] = normals(d, cls, self.spec.pitch, self.d_null, a, b, self.counters)
        p["gl"][lo:hi] = np.where((layer >= 0)[..., None],
                                  self._effective_tone(p["ghat"][lo:hi], layer), 0.0)
        p["phi"][lo:hi], p["grad"][lo:hi] = distance_to_empty_planes(p["cls"][lo:hi])

    def _finish(self, win, s0, s1, out_dir, manifest, metrics, debug) -> None:
        p = win.planes
        fill_range(p["cls"], p["d"], p["layer"], p["material"], p["source"], self.fill_mask,
                   self.d_max, self.T, win.first_slice, s0, s1, self.fill_counters)
        for s in range(s0, s1):
            k = win.local(s)
            write_slice(p["material"][k], s, self.spec.slice_z(s), out_dir, manifest, self.T)
            self.written += 1
            src = p["source"][k]
            fallback = np.floor(p["d"][k] / self.tau).astype(np.int64)
            eff = self._effective_tone(p["ghat"][k], np.where(src >= 0, src, fallback))
            st = slice_tone_stats(p["material"][k], eff, p["d"][k], p["cls"][k], self.d_max, self.T)
            if st is not None:
                self.report.add(s, *st)
                n, actual, expected = st
                for name, a, e in zip(self.report.names, actual, expected):
                    if metrics is not None:
                        metrics.write(f"{s}\t{name}\t{a:.6f}\t{e:.6f}\t{a - e:.6f}\n")
            if debug is not None:
                write_distance_pgm(debug / f"distance_{s:06d}.pgm", p["d"][k], self.d_max, self.d_null)
                order = p["order"][k]
                top = max(int(order.max()), 1)
                _write_pgm8(debug / f"order_{s:06d}.pgm",
                            np.where(order >= 0, np.round(255.0 * np.maximum(order, 0) / top), 0))
                _write_pgm8(debug / f"halftone_{s:06d}.pgm",
                            np.where(p["layer"][k] >= 0, 1 + 36 * p["hbits"][k].astype(np.int64), 0))

    def diagnostics(self) -> dict:
        c = summarize_counters(self.ht_counters)
        diag = dict(c)
        diag["fill_fallbacks"] = float(self.fill_counters[0])
        for k, v in self.counters.items():
            diag[k] = float(v)
        set_bits = c["set_bits"]
        diag["disagreement_rate"] = c["lost_bits"] / set_bits if set_bits else 0.0
        return diag


def execute(config: JobConfig) -> JobResult:
    """Run a job, raising on failure."""
    config.validate()
    counters: Counter = Counter()
    source = build_source(config, counters)
    out_dir = Path(config.out_dir)
    run = StreamingRun(config, source, counters)
    if source.is_empty():
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "manifest.tsv").write_text(manifest_header(source.channels))
        msg = "the solid does not intersect the grid; no slices written"
        warnings.warn(msg)
        return JobResult(EXIT_OK, out_dir, 0, run.report, {}, 0, msg)
    run.run(out_dir)
    run.report.diagnostics = run.diagnostics()
    if config.metrics:
        (out_dir / "tone_summary.tsv").write_text("\n".join(run.report.summary_lines()) + "\n")
    diag = run.report.diagnostics
    if diag.get("diffusion_violations", 0) or diag.get("error_bound_trips", 0):
        log.warning("error diffusion diagnostics out of range: %s", diag)
    return JobResult(EXIT_OK, out_dir, run.written, run.report, diag, run.peak)


def run_job(config: JobConfig) -> JobResult:
    """Run a job and map failures to exit statuses."""
    try:
        return execute(config)
    except NonWatertightMesh as exc:
        return JobResult(EXIT_NOT_WATERTIGHT, message=str(exc))
    except (ConfigError, MissingColorSource, KeyError) as exc:
        return JobResult(EXIT_CONFIG, message=str(exc))
    except OSError as exc:
        return JobResult(EXIT_IO, message=str(exc))
    except ValueError as exc:
        # malformed input files surface as ValueError from the parsers
        return JobResult(EXIT_IO, message=str(exc))


def halo_requirement(spec: GridSpec, layers: int) -> int:
    """Slices of context a chunk needs on each side."""
    tau = spec.layer_thickness
    return int(math.ceil(layers * tau / spec.pitch[2] - 1e-12)) + 1


@dataclass
class VolumeResult:
    """Whole-volume intermediates of an in-memory run."""

    cls: np.ndarray
    d: np.ndarray
    ghat: np.ndarray
    layer: np.ndarray
    normal: np.ndarray
    gl: np.ndarray
    planes: dict
    material: np.ndarray
    source_layer: np.ndarray
    counters: np.ndarray
    d_max: float
    tau: float


def process_volume(source: VoxelSource, layers: int = DEFAULT_LAYERS, filter_name: str = "zhoufang",
                   seed: int = 0, policy: TonalPolicy | None = None, workers: int = 1,
                   check: bool = True) -> VolumeResult:
    """Run every stage on whole volumes at once, keeping the intermediates.

    Meant for inspection and for checking the streaming path; memory grows
    with the model.
    """
    from .field import sweep_transfer
    from .halftone import fill_between_layers, halftone_volume

    spec = source.spec
    T = source.channels
    policy = policy or TonalPolicy.identity(T)
    tau = spec.layer_thickness
    d_max = layers * tau
    cls = np.stack([source.classify(s) for s in range(spec.nz)])
    g = np.stack([source.tonals(s, cls[s]) for s in range(spec.nz)])
    df = sweep_transfer(g, cls, build_distance_mask(spec, d_max), d_max)
    layer = extract_layers(df.d, cls, layers, tau, d_max)
    nrm = normals(df.d, cls, spec.pitch, df.d_null)
    scale, thresh = policy.table(layers)
    idx = np.clip(layer, 0, layers - 1)
    eff = df.ghat * scale[idx]
    eff = np.where(eff < thresh[idx], 0.0, eff)
    gl = np.where((layer >= 0)[..., None], eff, 0.0)
    params = HalftoneParams(builtin_filter(filter_name), seed, spec.pitch, tau, check)
    planes, counters = halftone_volume(cls, layer, gl, nrm, layers, params, workers)
    material, src_layer = fill_between_layers(planes["material"], layer, cls, df.d, spec, tau, d_max, T)
    return VolumeResult(cls, df.d, df.ghat, layer, nrm, gl, planes, material, src_layer, counters,
                        d_max, tau)
