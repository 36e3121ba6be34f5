#!/usr/bin/env python3
"""Latency/allocation sweep over the feature-transform engines.

Desk-scale reproduction of the transform-module comparison: all four engines
at two BEV resolutions, plus the voxel route at several height resolutions.
Absolute times are hardware-specific; the interesting outputs are the
rc-vs-baseline ratios and the exact intermediate-float accounting.

Usage: python scripts/bench_transforms.py [--quick] [--out report.json]
"""

import argparse
import json
from pathlib import Path

from rcbev.bench import BenchConfig, format_table, run_bench


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="small rig, fast run")
    ap.add_argument("--out", help="write the JSON report here")
    ap.add_argument("--repetitions", type=int, default=5)
    args = ap.parse_args()

    if args.quick:
        base = dict(n_cameras=2, channels=16, image_height=8, image_width=22,
                    depth_count=40, repetitions=args.repetitions)
        sizes = (64, 128)
    else:
        base = dict(n_cameras=6, channels=80, image_height=16, image_width=44,
                    depth_count=118, repetitions=args.repetitions)
        sizes = (128, 256)

    reports = []
    for n_heights in (5, 10, 20):
        cfg = BenchConfig(methods=("rc", "oracle", "voxel", "lss"), bev_sizes=sizes,
                          n_heights=n_heights, **base)
        print(f"\n=== voxel heights = {n_heights} ===")
        report = run_bench(cfg)
        print(format_table(report))
        reports.append({"n_heights": n_heights, "report": json.loads(report.to_json())})

    if args.out:
        Path(args.out).write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
        print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
