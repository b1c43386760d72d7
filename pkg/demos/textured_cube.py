# Build a textured cube, write it as OBJ plus PNG, and run the command-line
# tool on it; the manifest lists per-slice material counts.
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from layertone.cli import main
from layertone.voxelize import box_mesh, save_obj

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "textured_cube"
out.mkdir(parents=True, exist_ok=True)

# cyan-to-magenta stripes on every face
u = np.linspace(0.0, 1.0, 64)
tex = np.zeros((64, 64, 3))
tex[..., 0] = u[None, :]
tex[..., 1] = 1.0 - u[None, :]
tex[..., 2] = 0.8
Image.fromarray((255 * tex).astype(np.uint8)).save(out / "stripes.png")
save_obj(box_mesh((0, 0, 0), (2.0, 2.0, 2.0), uv=True), out / "cube.obj")

status = main(["--mesh", str(out / "cube.obj"), "--texture", str(out / "stripes.png"),
               "--dpi", "300,300,450", "--layers", "6", "--chunk", "16",
               "--out", str(out / "slices")])
print("exit status", status)
rows = (out / "slices" / "manifest.tsv").read_text().splitlines()
print("\n".join(rows[:1] + rows[len(rows) // 2: len(rows) // 2 + 3]))
