"""Command-line surface: synth, transform, label, loss, bench, render.

Exit codes: 0 success, 2 validation/configuration error, 3 I/O error.
Every command is deterministic given its inputs (benchmark wall times
excepted; their accounting fields are deterministic). BLAS thread count is
taken from the environment (OPENBLAS_NUM_THREADS / OMP_NUM_THREADS);
`bench --threads` additionally caps it at runtime.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io as rio
from .bench import BenchConfig, format_table, run_bench
from .errors import ConfigurationError
from .labels import LabelConfig, build_labels, pseudo_point_grid
from .loss import LossConfig, ScoreVolume, attach_cai_weights, cai_focal_grad, cai_focal_loss, ce_depth_loss
from .synth import SynthParams, populate_maps, synth_features, synth_scene
from .transform import BevGridSpec, FeatureTensor, run_transform, upsample_2x, vacancy_ratio
from .geometry import DepthBinSpec


def _load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _params_from_dict(doc: dict) -> SynthParams:
    kwargs = dict(doc)
    if "depth_bins" in kwargs:
        b = kwargs["depth_bins"]
        kwargs["depth_bins"] = DepthBinSpec(float(b["d_min"]), float(b["d_step"]), int(b["count"]))
    if "grid" in kwargs:
        g = kwargs["grid"]
        kwargs["grid"] = BevGridSpec(float(g["x_min"]), float(g["y_min"]),
                                     float(g["cell_size"]), int(g["nx"]), int(g["ny"]))
    if "box_size_range" in kwargs:
        kwargs["box_size_range"] = tuple(tuple(pair) for pair in kwargs["box_size_range"])
    known = set(SynthParams.__dataclass_fields__)
    unknown = set(kwargs) - known
    if unknown:
        raise ConfigurationError(f"unknown synth params fields: {sorted(unknown)}")
    try:
        return SynthParams(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"bad synth params: {e}")


def cmd_synth(args) -> int:
    params = _params_from_dict(_load_json(args.params))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scene = populate_maps(synth_scene(params))
    rio.write_scene(out, scene)
    feats = synth_features(params, scene)
    for i, (img, depth) in enumerate(feats):
        rio.write_tensor(out / f"cam{i:02d}_img.bevt", img)
        rio.write_tensor(out / f"cam{i:02d}_depth.bevt", depth)

    manifest = {p.name: _sha256(p) for p in sorted(out.iterdir()) if p.name != "manifest.json"}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def _grid_from_args(args) -> BevGridSpec:
    if args.grid:
        g = _load_json(args.grid)
        return BevGridSpec(float(g["x_min"]), float(g["y_min"]),
                           float(g["cell_size"]), int(g["nx"]), int(g["ny"]))
    half = args.bev_size * args.cell_size / 2.0
    return BevGridSpec(x_min=-half, y_min=-half, cell_size=args.cell_size,
                       nx=args.bev_size, ny=args.bev_size)


def _load_features(scene, feature_dir):
    feature_dir = Path(feature_dir)
    imgs, depths = [], []
    for i, cam in enumerate(scene.cameras):
        img_path = feature_dir / f"cam{i:02d}_img.bevt"
        depth_path = feature_dir / f"cam{i:02d}_depth.bevt"
        if not img_path.exists() or not depth_path.exists():
            raise ConfigurationError(f"missing feature tensors for camera {i} in {feature_dir}")
        imgs.append(rio.read_tensor(img_path, "CHW"))
        depths.append(rio.read_tensor(depth_path, "DHW"))
    return imgs, depths


def cmd_transform(args) -> int:
    scene = rio.read_scene(args.scene)
    imgs, depths = _load_features(scene, args.features or Path(args.scene))
    cams = list(scene.cameras)
    if args.upsample:
        imgs = [upsample_2x(t) for t in imgs]
        depths = [upsample_2x(t) for t in depths]
        cams = [c.scaled(2) for c in cams]
    grid = _grid_from_args(args)
    heights = None
    if args.heights:
        heights = [float(h) for h in args.heights.split(",")]

    result = run_transform(args.method, imgs, depths, cams, grid,
                           z_ref=args.z_ref, heights=heights, fusion=args.fusion)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rio.write_tensor(out / "bev.bevt", result.bev)
    if args.radial:
        for i, radial in enumerate(result.radials):
            rio.write_tensor(out / f"cam{i:02d}_radial.bevt", radial)
    vac = vacancy_ratio(result.bev)
    report = dict(asdict(result.report), method=args.method, vacancy_ratio=vac,
                  bev_size=[grid.nx, grid.ny])
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"method={args.method} wall_time={result.report.wall_time:.6f}s "
          f"intermediate_floats={result.report.intermediate_floats} "
          f"output_floats={result.report.output_floats} vacancy={vac:.6f}")
    return 0


def cmd_label(args) -> int:
    scene = rio.read_scene(args.scene)
    if args.cam < 0 or args.cam >= len(scene.cameras):
        raise ConfigurationError(f"camera {args.cam} out of range (scene has {len(scene.cameras)})")
    config = LabelConfig(use_lidar=args.use_lidar, o_a=args.oa, o_b=args.ob, o_c=args.oc)
    labels = build_labels(scene, args.cam, config)
    points = pseudo_point_grid(scene.cameras[args.cam])
    labels = attach_cai_weights(labels, points, scene.boxes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rio.write_labels(out, labels)
    counts = labels.counts()
    total = labels.state.size
    print(f"positive={counts['positive']} negative={counts['negative']} "
          f"ignore={counts['ignore']} positive_fraction={counts['positive'] / total:.6f}")
    for w in labels.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_loss(args) -> int:
    labels = rio.read_labels(args.labels)
    logits = rio.read_array(args.scores)
    if args.loss == "cai":
        scores = ScoreVolume(logits, activation="sigmoid")
        cfg = LossConfig(alpha=args.alpha, gamma=args.gamma, reduction=args.reduction)
        value = cai_focal_loss(scores, labels, cfg)
        print(f"cai_focal_loss={value:.9f}")
        if args.grad_out:
            grad = cai_focal_grad(scores, labels, cfg)
            rio.write_tensor(args.grad_out, grad)
            print(f"grad written to {args.grad_out}")
    else:
        scores = ScoreVolume(logits, activation="softmax")
        value = ce_depth_loss(scores, labels)
        print(f"ce_depth_loss={value:.9f}")
    return 0


def cmd_bench(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    if args.repetitions is not None:
        doc["repetitions"] = args.repetitions
    if args.threads is not None:
        doc["threads"] = args.threads
    cfg = BenchConfig.from_dict(doc)
    if cfg.threads is not None:
        import threadpoolctl

        with threadpoolctl.threadpool_limits(limits=cfg.threads):
            report = run_bench(cfg)
    else:
        report = run_bench(cfg)
    print(format_table(report))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as f:
            f.write(report.to_json())
            f.write("\n")
    return 0


def cmd_render(args) -> int:
    bev = rio.read_tensor(args.bev, "CXY")
    norms = np.abs(bev.data).sum(axis=0)
    if args.mask:
        mask = rio.read_array(args.mask)
        if mask.shape != norms.shape:
            raise ValueError(f"mask shape {mask.shape} != BEV grid {norms.shape}")
        norms = np.where(mask != 0, norms, 0.0)
    lo, hi = norms.min(), norms.max()
    if hi > lo:
        img = ((norms - lo) / (hi - lo) * 255.0).round().astype(np.uint8)
    else:
        img = np.zeros_like(norms, dtype=np.uint8)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    rio.write_pgm(args.out, img)
    print(f"wrote {args.out} ({img.shape[1]}x{img.shape[0]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcbev",
                                description="Radial-Cartesian BEV transforms, in-box labels, and losses")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scene with features and maps")
    s.add_argument("--params", required=True, help="synth params JSON file")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("transform", help="run a feature transform on a scene")
    t.add_argument("--scene", required=True, help="scene directory or scene.json")
    t.add_argument("--features", help="directory with camNN_img/depth tensors (default: scene dir)")
    t.add_argument("--method", required=True, choices=list(METHODS))
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--grid", help="grid spec JSON file (overrides --bev-size/--cell-size)")
    t.add_argument("--bev-size", type=int, default=128)
    t.add_argument("--cell-size", type=float, default=0.4)
    t.add_argument("--z-ref", type=float, default=0.0)
    t.add_argument("--fusion", choices=["sum", "mean"], default="sum")
    t.add_argument("--heights", help="comma-separated voxel heights (voxel method)")
    t.add_argument("--radial", action="store_true", help="also write per-camera radial tensors")
    t.add_argument("--upsample", action="store_true",
                   help="2x upsample features and scores before the transform")
    t.set_defaults(fn=cmd_transform)

    l = sub.add_parser("label", help="build a supervision label volume for one camera")
    l.add_argument("--scene", required=True)
    l.add_argument("--cam", type=int, required=True)
    l.add_argument("--use-lidar", action="store_true")
    l.add_argument("--oa", action="store_true", help="ignore occluded far-box points")
    l.add_argument("--ob", action="store_true", help="ignore mask-mismatched points")
    l.add_argument("--oc", action="store_true", help="ignore points behind the background surface")
    l.add_argument("--out", required=True)
    l.set_defaults(fn=cmd_label)

    o = sub.add_parser("loss", help="evaluate a depth loss on labels + logits")
    o.add_argument("--labels", required=True)
    o.add_argument("--scores", required=True, help="logit tensor file (D, H, W)")
    o.add_argument("--loss", choices=["cai", "ce"], default="cai")
    o.add_argument("--alpha", type=float, default=0.25)
    o.add_argument("--gamma", type=float, default=2.0)
    o.add_argument("--reduction", choices=["sum", "mean"], default="mean")
    o.add_argument("--grad-out", help="also write the analytic gradient tensor")
    o.set_defaults(fn=cmd_loss)

    b = sub.add_parser("bench", help="latency/allocation sweep over transform methods")
    b.add_argument("--config", help="bench config JSON file")
    b.add_argument("--out", help="JSON report output path")
    b.add_argument("--repetitions", type=int)
    b.add_argument("--threads", type=int, help="cap BLAS threads for this run")
    b.set_defaults(fn=cmd_bench)

    r = sub.add_parser("render", help="render a BEV tensor to a grayscale PGM")
    r.add_argument("--bev", required=True)
    r.add_argument("--mask", help="foreground mask tensor; background cells go black")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
