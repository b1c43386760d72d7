"""
Color separation: input colors to printer tonal values, plus the Demichel
coverage model used to predict material fractions.

Tonal vectors hold one coverage in [0, 1] per colored material (cyan,
magenta, yellow by default); white is implicit.
"""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHANNEL_NAMES = ("C", "M", "Y")
YELLOW = 2


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(np.maximum(c, 0.0), 1 / 2.4) - 0.055)


@dataclass
class SeparationLUT:
    """Tonal values sampled on an ``n x n x n`` lattice over linear RGB.

    ``lattice[i, j, k]`` is the tonal vector at ``(r, g, b) = (i, j, k) / (n - 1)``.
    ``curves`` holds one 256-sample linearization curve per channel, applied
    after interpolation.
    """

    lattice: np.ndarray
    curves: np.ndarray | None = None

    def __post_init__(self):
        self.lattice = np.asarray(self.lattice, dtype=np.float64)
        if self.lattice.ndim != 4 or len(set(self.lattice.shape[:3])) != 1:
            raise ValueError("lattice must have shape (n, n, n, T)")
        if self.size < 2:
            raise ValueError("lattice needs at least 2 nodes per axis")
        if self.curves is not None:
            self.curves = np.asarray(self.curves, dtype=np.float64)
            if self.curves.shape != (self.channels, 256):
                raise ValueError(f"curves must have shape ({self.channels}, 256)")
            if np.any(np.diff(self.curves, axis=1) < 0):
                raise ValueError("linearization curves must be nondecreasing")
            if not (np.allclose(self.curves[:, 0], 0.0) and np.allclose(self.curves[:, -1], 1.0)):
                raise ValueError("linearization curves must run from 0 to 1")

    @property
    def size(self) -> int:
        return self.lattice.shape[0]

    @property
    def channels(self) -> int:
        return self.lattice.shape[3]

    @classmethod
    def naive(cls, n: int = 8) -> "SeparationLUT":
        """Complementary CMY separation: tonal = 1 - linear RGB."""
        axis = np.linspace(0.0, 1.0, n)
        r, g, b = np.meshgrid(axis, axis, axis, indexing="ij")
        return cls(1.0 - np.stack([r, g, b], axis=-1))

    @classmethod
    def load(cls, path) -> "SeparationLUT":
        """Read a LUT file.

        Format: a header ``LUT n T``, then ``n**3`` lines of ``T`` reals in
        lexicographic (r, g, b) order with r slowest, then optionally ``T``
        lines of 256 reals, one linearization curve per channel.
        """
        lines = [ln.split() for ln in Path(path).read_text().splitlines()]
        lines = [ln for ln in lines if ln and not ln[0].startswith("#")]
        if not lines or lines[0][0] != "LUT" or len(lines[0]) != 3:
            raise ValueError(f"{path}: missing 'LUT n T' header")
        n, t = int(lines[0][1]), int(lines[0][2])
        body = lines[1:]
        if len(body) < n ** 3:
            raise ValueError(f"{path}: expected {n ** 3} lattice rows, found {len(body)}")
        lattice = np.array(body[: n ** 3], dtype=np.float64)
        if lattice.shape != (n ** 3, t):
            raise ValueError(f"{path}: lattice rows must have {t} values")
        rest = body[n ** 3:]
        curves = None
        if rest:
            curves = np.array(rest, dtype=np.float64)
            if curves.shape != (t, 256):
                raise ValueError(f"{path}: expected {t} curves of 256 values")
        return cls(lattice.reshape(n, n, n, t), curves)

    def save(self, path) -> None:
        n, t = self.size, self.channels
        rows = [f"LUT {n} {t}"]
        rows += [" ".join(repr(float(v)) for v in row) for row in self.lattice.reshape(-1, t)]
        if self.curves is not None:
            rows += [" ".join(repr(float(v)) for v in c) for c in self.curves]
        Path(path).write_text("\n".join(rows) + "\n")


def _trilinear(lattice: np.ndarray, rgb: np.ndarray) -> np.ndarray:
    n = lattice.shape[0]
    pos = rgb * (n - 1)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
    f = pos - i0
    out = np.zeros(rgb.shape[:-1] + (lattice.shape[3],))
    for corner in itertools.product((0, 1), repeat=3):
        w = np.ones(rgb.shape[:-1])
        for axis, bit in enumerate(corner):
            w = w * (f[..., axis] if bit else 1.0 - f[..., axis])
        node = lattice[i0[..., 0] + corner[0], i0[..., 1] + corner[1], i0[..., 2] + corner[2]]
        out += w[..., None] * node
    return out


def separate(color, lut: SeparationLUT, encoding: str = "srgb",
             counters: Counter | None = None) -> np.ndarray:
    """Map colors (``(..., 3)`` in [0, 1]) to tonal vectors ``(..., T)``.

    Out-of-range inputs are clamped; the number of clamped components is
    added to ``counters["clamped"]``.
    """
    c = np.asarray(color, dtype=np.float64)
    clipped = np.clip(c, 0.0, 1.0)
    if counters is not None:
        counters["clamped"] += int(np.count_nonzero(clipped != c))
    if encoding == "srgb":
        rgb = srgb_to_linear(clipped)
    elif encoding == "linear":
        rgb = clipped
    else:
        raise ValueError(f"unknown color encoding {encoding!r}")
    t = _trilinear(lut.lattice, rgb)
    if lut.curves is not None:
        xs = np.linspace(0.0, 1.0, 256)
        t = np.stack([np.interp(t[..., k], xs, lut.curves[k]) for k in range(lut.channels)], axis=-1)
    return np.clip(t, 0.0, 1.0)


@dataclass
class TonalPolicy:
    """Per-channel scaling and per-layer soft thresholds.

    ``exclusions`` maps a layer index to ``{channel: threshold}``; on that
    layer the channel's tonal value is zeroed whenever it is below the
    threshold.  The default scales yellow to 0.3 and keeps yellow out of
    the outermost layer entirely, as needed when the yellow material is a
    dyed support.
    """

    scales: tuple[float, ...] = (1.0, 1.0, 0.3)
    exclusions: dict[int, dict[int, float]] = field(default_factory=lambda: {0: {YELLOW: 1.0}})

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        if any(not 0.0 <= s <= 1.0 for s in self.scales):
            raise ValueError("channel scales must lie in [0, 1]")

    @classmethod
    def identity(cls, channels: int = 3) -> "TonalPolicy":
        return cls(scales=(1.0,) * channels, exclusions={})

    def is_identity(self) -> bool:
        return all(s == 1.0 for s in self.scales) and not any(self.exclusions.values())

    def table(self, layers: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense ``(layers, T)`` arrays of scales and thresholds for kernels."""
        scale = np.tile(np.asarray(self.scales, dtype=np.float64), (layers, 1))
        thresh = np.zeros((layers, len(self.scales)))
        for layer, chans in self.exclusions.items():
            if 0 <= layer < layers:
                for ch, theta in chans.items():
                    thresh[layer, ch] = theta
        return scale, thresh


def apply_policy(g, layer: int, policy: TonalPolicy) -> np.ndarray:
    """Scale a tonal vector (or ``(..., T)`` array) and soft-threshold the
    channels excluded on ``layer``."""
    g = np.asarray(g, dtype=np.float64)
    out = g * np.asarray(policy.scales)
    for ch, theta in policy.exclusions.get(int(layer), {}).items():
        out[..., ch] = np.where(out[..., ch] < theta, 0.0, out[..., ch])
    return out


def demichel_fractions(t) -> np.ndarray:
    """Expected material fractions for independent per-channel coverages.

    Returns ``(..., T + 1)``: one fraction per colored channel followed by
    white.  A voxel covered by a set ``S`` of channels is split equally
    among them, so for three channels cyan gets
    ``C(1-M)(1-Y) + CM(1-Y)/2 + C(1-M)Y/2 + CMY/3``.
    """
    t = np.asarray(t, dtype=np.float64)
    n = t.shape[-1]
    out = np.zeros(t.shape[:-1] + (n + 1,))
    for bits in itertools.product((0, 1), repeat=n):
        p = np.ones(t.shape[:-1])
        for k, b in enumerate(bits):
            p = p * (t[..., k] if b else 1.0 - t[..., k])
        size = sum(bits)
        if size == 0:
            out[..., n] += p
            continue
        share = p / size
        for k, b in enumerate(bits):
            if b:
                out[..., k] += share
    return out
