"""Latency/allocation benchmark of the feature-transformation engines.

Methodology: monotonic clock around the transform call only (no I/O), two
warm-up runs discarded, median and p10/p90 of R >= 5 repetitions.
Memory is exact dimensional accounting (the size of the largest intermediate
tensor each route materializes), so the numbers are portable across
allocators and match what the radial-vs-frustum argument actually rests on.
"""

from __future__ import annotations

import json
import platform
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import DepthBinSpec
from .synth import SynthParams, synth_features, synth_scene
from .transform import METHODS, BevGridSpec, FeatureTensor, run_transform

WARMUP_RUNS = 2
MIN_REPETITIONS = 5


@dataclass
class BenchRow:
    method: str
    bev_size: int
    n_heights: int | None
    median_s: float
    p10_s: float
    p90_s: float
    intermediate_floats: int
    output_floats: int


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"rows": [asdict(r) for r in self.rows],
             "environment": self.environment,
             "ratios": self.ratios},
            indent=2, sort_keys=True)


@dataclass(frozen=True)
class BenchConfig:
    """What to benchmark. Repetitions exclude the two warm-ups."""

    methods: tuple = ("rc", "voxel")
    bev_sizes: tuple = (128, 256)
    repetitions: int = 5
    n_heights: int = 20
    seed: int = 0
    n_cameras: int = 6
    channels: int = 80
    image_height: int = 16
    image_width: int = 44
    depth_count: int = 118
    cell_extent: float = 102.4
    dtype: str = "f32"
    threads: int | None = None

    def __post_init__(self):
        if self.repetitions < MIN_REPETITIONS:
            raise ConfigurationError(f"need at least {MIN_REPETITIONS} repetitions")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigurationError(f"dtype must be f32 or f64, got {self.dtype!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown bench config fields: {sorted(unknown)}")
        for key in ("methods", "bev_sizes"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _grid(cfg: BenchConfig, size: int) -> BevGridSpec:
    half = cfg.cell_extent / 2.0
    return BevGridSpec(x_min=-half, y_min=-half, cell_size=cfg.cell_extent / size,
                       nx=size, ny=size)


def _environment(threads) -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "dtype_default": "f32",
        "threads": threads if threads is not None else "unlimited (BLAS default)",
    }


def run_bench(cfg: BenchConfig) -> BenchReport:
    """Benchmark each (method, BEV size) pair on one synthetic rig."""
    params = SynthParams(
        seed=cfg.seed,
        n_cameras=cfg.n_cameras,
        n_boxes=0,
        image_height=cfg.image_height,
        image_width=cfg.image_width,
        depth_bins=DepthBinSpec(1.0, 0.5, cfg.depth_count),
        channels=cfg.channels,
        score_mode="uniform",
    )
    scene = synth_scene(params)
    feats = synth_features(params, scene)
    dtype = np.float32 if cfg.dtype == "f32" else np.float64
    imgs = [f for f, _ in feats]
    depths = [d for _, d in feats]
    if dtype is np.float64:
        imgs = [FeatureTensor(t.dims, t.data.astype(dtype)) for t in imgs]
        depths = [FeatureTensor(t.dims, t.data.astype(dtype)) for t in depths]

    heights = list(np.linspace(-1.0, 3.0, cfg.n_heights))

    report = BenchReport(environment=_environment(cfg.threads))
    for size in cfg.bev_sizes:
        grid = _grid(cfg, size)
        for method in cfg.methods:
            h = heights if method == "voxel" else None
            times = []
            for _ in range(WARMUP_RUNS + cfg.repetitions):
                result = run_transform(method, imgs, depths, scene.cameras, grid, heights=h)
                times.append(result.report.wall_time)
            timed = np.array(times[WARMUP_RUNS:])
            report.rows.append(BenchRow(
                method=method,
                bev_size=size,
                n_heights=cfg.n_heights if method == "voxel" else None,
                median_s=float(np.median(timed)),
                p10_s=float(np.percentile(timed, 10)),
                p90_s=float(np.percentile(timed, 90)),
                intermediate_floats=result.report.intermediate_floats,
                output_floats=result.report.output_floats,
            ))
    _attach_ratios(report)
    return report


def _attach_ratios(report: BenchReport):
    """rc-vs-baseline ratios per BEV size, for time and intermediate memory."""
    by_key = {(r.method, r.bev_size): r for r in report.rows}
    for (method, size), row in by_key.items():
        if method == "rc":
            continue
        rc = by_key.get(("rc", size))
        if rc is None:
            continue
        key = f"rc_vs_{method}_{size}"
        report.ratios[key] = {
            "time": rc.median_s / row.median_s if row.median_s else float("nan"),
            "intermediate_floats": (
                rc.intermediate_floats / row.intermediate_floats
                if row.intermediate_floats else float("nan")
            ),
        }


def format_table(report: BenchReport) -> str:
    header = ["method", "bev", "heights", "median_s", "p10_s", "p90_s",
              "intermediate", "output"]
    lines = []
    rows = [[
        r.method,
        str(r.bev_size),
        str(r.n_heights) if r.n_heights is not None else "-",
        f"{r.median_s:.6f}", f"{r.p10_s:.6f}", f"{r.p90_s:.6f}",
        str(r.intermediate_floats), str(r.output_floats),
    ] for r in report.rows]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    for key, vals in sorted(report.ratios.items()):
        lines.append(
            f"{key}: time x{vals['time']:.4f}, "
            f"intermediate x{vals['intermediate_floats']:.6f}"
        )
    return "\n".join(lines)


def time_callable(fn, repetitions: int = MIN_REPETITIONS, warmup: int = WARMUP_RUNS):
    """Median/p10/p90 seconds of fn() over `repetitions` timed runs."""
    if repetitions < MIN_REPETITIONS:
        raise ConfigurationError(f"need at least {MIN_REPETITIONS} repetitions")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    arr = np.array(times)
    return float(np.median(arr)), float(np.percentile(arr, 10)), float(np.percentile(arr, 90))
