# Halftone a sphere at printer resolution, report tone preservation, and
# save a cross-section, its layer map and one layer's traversal order.
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from layertone.colorsep import TonalPolicy
from layertone.grid import GridSpec, MM_PER_INCH
from layertone.pipeline import PALETTE, JobConfig, execute, read_slice, sphere_source

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "sphere_layers"
radius_voxels = int(sys.argv[2]) if len(sys.argv) > 2 else 40

pitch = (MM_PER_INCH / 600, MM_PER_INCH / 600, MM_PER_INCH / 900)
r = radius_voxels * pitch[0]
spec = GridSpec.from_bounds((-r, -r, -r), (r, r, r), pitch)
src = sphere_source(spec, (0.0, 0.0, 0.0), r, (0.3, 0.3, 0.3))
print(f"grid {spec.dims}, {spec.nz} slices of {pitch[2]:.4f} mm")

t0 = time.perf_counter()
res = execute(JobConfig(out, source=src, layers=12, policy=TonalPolicy.identity(3),
                        debug_dumps=True, workers=4))
print(f"{res.slices_written} slices in {time.perf_counter() - t0:.1f} s, "
      f"peak window {res.peak_slices} slices")
for line in res.report.summary_lines():
    print(line)

# the material codes of the equator slice, coloured with the output palette
mid = spec.nz // 2
codes = read_slice(out / f"slice_{mid:06d}.png")
rgb = np.array(PALETTE, dtype=np.uint8)[codes]
Image.fromarray(rgb).resize((4 * spec.nx, 4 * spec.ny), Image.NEAREST).save(out / "equator.png")
print("wrote", out / "equator.png", "and per-slice debug dumps in", out / "debug")
