# Halftone a horizontal gradient on a one-layer plate and compare the
# bottom sheet with plain 2D serpentine Floyd-Steinberg.
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from layertone.colorsep import TonalPolicy
from layertone.grid import GridSpec
from layertone.pipeline import ArraySource, process_volume

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "flat_plate"
out.mkdir(parents=True, exist_ok=True)

n = 128
ramp = np.tile(np.linspace(0.0, 1.0, n), (n, 1))

# a three-voxel slab; its bottom and top sheets form layer 0
interior = np.zeros((5, n, n), dtype=bool)
interior[1:4] = True
tone = np.zeros((5, n, n, 3))
tone[..., 0] = ramp
spec = GridSpec((n, n, 5), (1.0, 1.0, 1.0))

res = process_volume(ArraySource(spec, interior, tone), layers=1, filter_name="fs",
                     policy=TonalPolicy.identity(3))
cyan = (res.planes["hbits"][1] & 1).astype(np.uint8)

# reference: serpentine Floyd-Steinberg, weights renormalized at the border
err = np.zeros((n, n))
ref = np.zeros((n, n), dtype=np.uint8)
stencil = [(1, 0, 7 / 16), (-1, 1, 3 / 16), (0, 1, 5 / 16), (1, 1, 1 / 16)]
for y in range(n):
    step = 1 if y % 2 == 0 else -1
    for x in (range(n) if step == 1 else range(n - 1, -1, -1)):
        g = ramp[y, x] + err[y, x]
        ref[y, x] = g > 0.5
        e = ref[y, x] - g
        taps = [(x + df * step, y + dr, w) for df, dr, w in stencil
                if 0 <= x + df * step < n and y + dr < n]
        total = sum(w for *_, w in taps)
        for tx, ty, w in taps:
            err[ty, tx] -= w / total * e

print("plate voxels differing from the 2D reference:", int(np.count_nonzero(cyan != ref)))
print("column means vs ramp (every 16th column):")
print(np.round(cyan.mean(axis=0)[::16], 3))
print(np.round(ramp[0, ::16], 3))

Image.fromarray(255 - 255 * cyan).resize((4 * n, 4 * n), Image.NEAREST).save(out / "bottom_sheet.png")
print("wrote", out / "bottom_sheet.png")
