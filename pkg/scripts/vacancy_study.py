#!/usr/bin/env python3
"""Vacancy of pooled vs sampled BEV features as the grid resolution grows.

The pseudo-point pooling route leaves cells without points vacant, and the
vacancy grows with BEV resolution; radial-then-cartesian sampling fills every
covered cell. This script measures both across resolutions and optionally
renders the feature-norm heatmaps to PGM for eyeballing.

Usage: python scripts/vacancy_study.py [--render-dir DIR]
"""

import argparse
from pathlib import Path

import numpy as np

from rcbev.io import write_pgm
from rcbev.synth import SynthParams, synth_features, synth_scene
from rcbev.transform import BevGridSpec, run_transform, vacancy_ratio


def to_gray(bev):
    norms = np.abs(bev.data).sum(axis=0)
    hi = norms.max()
    if hi == 0:
        return np.zeros(norms.shape, dtype=np.uint8)
    return (norms / hi * 255.0).round().astype(np.uint8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--render-dir", help="write per-(method, size) PGM heatmaps here")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    params = SynthParams(seed=args.seed, n_cameras=6, n_boxes=0, image_height=16,
                         image_width=44, channels=32, score_mode="uniform")
    scene = synth_scene(params)
    feats = synth_features(params, scene)
    imgs = [f for f, _ in feats]
    deps = [d for _, d in feats]

    print(f"{'size':>6}  {'lss vacancy':>12}  {'rc vacancy':>11}")
    for size in (64, 128, 256, 512):
        grid = BevGridSpec(-25.6, -25.6, 51.2 / size, size, size)
        out = {}
        for method in ("lss", "rc"):
            result = run_transform(method, imgs, deps, scene.cameras, grid)
            out[method] = result.bev
        v_lss = vacancy_ratio(out["lss"])
        v_rc = vacancy_ratio(out["rc"])
        print(f"{size:>6}  {v_lss:>12.4f}  {v_rc:>11.4f}")
        if args.render_dir:
            d = Path(args.render_dir)
            d.mkdir(parents=True, exist_ok=True)
            for method, bev in out.items():
                write_pgm(d / f"{method}_{size}.pgm", to_gray(bev))

    if args.render_dir:
        print(f"heatmaps in {args.render_dir}")


if __name__ == "__main__":
    main()
