"""Command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .colorsep import TonalPolicy, YELLOW
from .field import DEFAULT_LAYERS
from .pipeline import EXIT_CONFIG, JobConfig, run_job


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected X,Y,Z")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number triple: {text}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="layertone",
        description="Halftone a colored mesh into per-voxel material slices.")
    ap.add_argument("--mesh", type=Path, required=True, help="input mesh (ASCII OBJ, triangles)")
    ap.add_argument("--texture", type=Path, help="texture image (PNG or binary PPM)")
    ap.add_argument("--dpi", type=_triple, default=(600.0, 600.0, 900.0), help="resolution X,Y,Z")
    ap.add_argument("--layers", type=int, default=DEFAULT_LAYERS, help="number of voxel layers")
    ap.add_argument("--chunk", type=int, default=100, help="slices classified per chunk")
    ap.add_argument("--filter", choices=("fs", "ostromoukhov", "zhoufang"), default="zhoufang")
    ap.add_argument("--filter-file", type=Path, help="filter table file overriding the bundled one")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lut", type=Path, help="separation LUT file (default: complementary CMY)")
    ap.add_argument("--yellow-scale", type=float, default=0.3, help="scale applied to yellow")
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--metrics", action=argparse.BooleanOptionalAction, default=True,
                    help="write metrics.tsv and tone_summary.tsv")
    ap.add_argument("--debug-dumps", action="store_true", help="write distance/order/halftone PGMs")
    ap.add_argument("--workers", type=int, default=1, help="threads for per-layer halftoning")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not 0.0 <= args.yellow_scale <= 1.0:
        print("error: --yellow-scale must lie in [0, 1]", file=sys.stderr)
        return EXIT_CONFIG
    policy = TonalPolicy(scales=(1.0, 1.0, args.yellow_scale), exclusions={0: {YELLOW: 1.0}})
    config = JobConfig(out_dir=args.out, mesh_path=args.mesh, texture_path=args.texture,
                       dpi=args.dpi, layers=args.layers, chunk_slices=args.chunk,
                       filter=args.filter, filter_path=args.filter_file, seed=args.seed,
                       policy=policy, lut_path=args.lut, metrics=args.metrics,
                       debug_dumps=args.debug_dumps, workers=args.workers)
    result = run_job(config)
    if result.status != 0:
        print(f"error: {result.message}", file=sys.stderr)
        return result.status
    print(f"wrote {result.slices_written} slices to {result.out_dir}")
    if result.report is not None and config.metrics and result.report.slices:
        for line in result.report.summary_lines()[:5]:
            print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
