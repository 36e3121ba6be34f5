"""Deterministic synthetic scenes: camera rings, boxes, ground, and features.

Everything is a pure function of (seed, params). Randomness comes from
numpy's Philox counter-based generator keyed through SeedSequence with fixed
stream tags, so identical seeds give bitwise-identical scenes on any
platform, and scene/feature streams never interfere.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraRig, DepthBinSpec, OrientedBox, point_in_box, ray_box_intersect
from .labels import NO_BOX, Scene, _pixel_rays
from .transform import BevGridSpec, FeatureTensor

# SeedSequence stream tags: scene geometry, per-camera features, decimation.
_STREAM_SCENE = 0
_STREAM_FEATURES = 1
_STREAM_DECIMATE = 2

SCORE_MODES = ("uniform", "softmax", "surface")

# Boxes are lifted at least this far off the ground so a box hit always
# precedes the ground hit along any ray from an above-ground camera.
_GROUND_CLEARANCE = 0.05


def _default_bins() -> DepthBinSpec:
    return DepthBinSpec(d_min=1.0, d_step=0.5, count=118)


def _default_grid() -> BevGridSpec:
    return BevGridSpec(x_min=-25.6, y_min=-25.6, cell_size=0.4, nx=128, ny=128)


@dataclass(frozen=True)
class SynthParams:
    """Knobs for scene and feature synthesis."""

    seed: int = 0
    n_cameras: int = 6
    n_boxes: int = 8
    image_height: int = 16
    image_width: int = 44
    depth_bins: DepthBinSpec = field(default_factory=_default_bins)
    grid: BevGridSpec = field(default_factory=_default_grid)
    channels: int = 80
    # (low, high) extents in meters along box length/width/height.
    box_size_range: tuple = ((1.5, 6.0), (1.2, 2.8), (0.8, 2.5))
    ground_z: float = 0.0
    camera_height: float = 1.6
    camera_radius: float = 1.0
    fov_scale: float = 1.2
    score_mode: str = "softmax"

    def __post_init__(self):
        if self.n_cameras < 1 or self.channels < 1:
            raise ConfigurationError("need at least one camera and one channel")
        if self.n_boxes < 0:
            raise ConfigurationError("n_boxes cannot be negative")
        if self.image_height < 1 or self.image_width < 1:
            raise ConfigurationError("image must be at least 1x1")
        for lo, hi in self.box_size_range:
            if not 0 < lo <= hi:
                raise ConfigurationError("box size bounds must be ordered and positive")
        if self.score_mode not in SCORE_MODES:
            raise ConfigurationError(f"unknown score mode {self.score_mode!r}")


def _rng(params: SynthParams, *tags) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=[params.seed, *tags])
    return np.random.Generator(np.random.Philox(ss))


def _ring_camera(params: SynthParams, index: int) -> CameraRig:
    """Outward-facing camera at ring angle 2*pi*index/n, looking horizontally."""
    theta = 2.0 * np.pi * index / params.n_cameras
    fwd = np.array([np.cos(theta), np.sin(theta), 0.0])
    right = np.array([np.sin(theta), -np.cos(theta), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    pos = params.camera_radius * fwd + np.array([0.0, 0.0, params.camera_height])

    R = np.stack([right, down, fwd])
    E = np.eye(4)
    E[:3, :3] = R
    E[:3, 3] = -R @ pos

    W, H = params.image_width, params.image_height
    fov_h = min(2.0 * np.pi / params.n_cameras * params.fov_scale, 2.4)
    fov_v = 1.0
    K = np.array([
        [(W / 2.0) / np.tan(fov_h / 2.0), 0.0, (W - 1) / 2.0],
        [0.0, (H / 2.0) / np.tan(fov_v / 2.0), (H - 1) / 2.0],
        [0.0, 0.0, 1.0],
    ])
    return CameraRig(K, E, H, W, params.depth_bins)


def synth_scene(params: SynthParams) -> Scene:
    """Camera ring plus boxes sampled inside the BEV grid, over a ground plane.

    Boxes never contain a camera center (0.3 m clearance): a camera inside a
    box would ray-cast a zero surface depth, which no sensor can report.
    """
    rng = _rng(params, _STREAM_SCENE)
    cameras = [_ring_camera(params, i) for i in range(params.n_cameras)]
    cam_centers = np.array([c.center() for c in cameras])

    grid = params.grid
    boxes = []
    for _ in range(params.n_boxes):
        for _attempt in range(1000):
            size = np.array([rng.uniform(lo, hi) for lo, hi in params.box_size_range])
            margin = float(np.hypot(size[0], size[1]) / 2.0)
            x_lo, x_hi = grid.x_min + margin, grid.x_min + grid.nx * grid.cell_size - margin
            y_lo, y_hi = grid.y_min + margin, grid.y_min + grid.ny * grid.cell_size - margin
            if x_lo >= x_hi or y_lo >= y_hi:
                raise ConfigurationError("box size bounds exceed the BEV grid extent")
            center = np.array([
                rng.uniform(x_lo, x_hi),
                rng.uniform(y_lo, y_hi),
                params.ground_z + size[2] / 2.0 + rng.uniform(_GROUND_CLEARANCE, 0.4),
            ])
            yaw = rng.uniform(-np.pi, np.pi)
            box = OrientedBox(center=center, size=size, yaw=yaw)
            inflated = OrientedBox(center=center, size=size + 0.6, yaw=yaw)
            if not np.any(point_in_box(cam_centers, inflated)):
                boxes.append(box)
                break
        else:
            raise ConfigurationError(
                "could not place a box clear of the cameras; loosen the bounds")
    return Scene(cameras=cameras, boxes=boxes, ground_z=params.ground_z)


def _ray_hits(scene: Scene, cam_index: int):
    """Per-pixel nearest box hit and ground hit, in ray-parameter units.

    Returns (box_t (H*W,), box_idx (H*W,), ground_t (H*W,), axial (H*W,)):
    box_t/ground_t are np.inf where nothing is hit; camera depth = t * axial.
    """
    cam = scene.cameras[cam_index]
    origin, dirs, axial = _pixel_rays(cam)
    n = dirs.shape[0]

    box_t = np.full(n, np.inf)
    box_idx = np.full(n, NO_BOX, dtype=np.int32)
    for idx, box in enumerate(scene.boxes):
        t_entry, _, hit = ray_box_intersect(origin, dirs, box)
        closer = hit & (t_entry < box_t)
        box_t[closer] = t_entry[closer]
        box_idx[closer] = idx

    ground_t = np.full(n, np.inf)
    if scene.ground_z is not None:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (scene.ground_z - origin[2]) / dz
        descending = dz < 0
        ground_t[descending & (t > 0)] = t[descending & (t > 0)]
    return box_t, box_idx, ground_t, axial


def raycast_depth_map(
    scene: Scene, cam_index: int, keep_fraction: float = 1.0, decimation_seed: int = 0
) -> np.ndarray:
    """Surface-depth map: camera depth of the first box or ground hit per pixel.

    Records only the surfaces facing the camera (a LiDAR surrogate). Pixels
    hitting nothing carry np.inf. keep_fraction < 1 randomly drops returns
    to mimic LiDAR sparsity (deterministic per decimation_seed).
    """
    cam = scene.cameras[cam_index]
    box_t, _, ground_t, axial = _ray_hits(scene, cam_index)
    t = np.minimum(box_t, ground_t)
    depth = np.where(np.isfinite(t), t * axial, np.inf)
    if keep_fraction < 1.0:
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=[decimation_seed, _STREAM_DECIMATE, cam_index])))
        drop = rng.random(depth.shape) >= keep_fraction
        depth[drop] = np.inf
    return depth.reshape(cam.height, cam.width)


def analytic_masks(scene: Scene, cam_index: int) -> np.ndarray:
    """Front-box index per pixel, NO_BOX where ground/sky is in front."""
    cam = scene.cameras[cam_index]
    box_t, box_idx, ground_t, _ = _ray_hits(scene, cam_index)
    mask = np.where(box_t < ground_t, box_idx, NO_BOX).astype(np.int32)
    mask[~np.isfinite(box_t)] = NO_BOX
    return mask.reshape(cam.height, cam.width)


def populate_maps(scene: Scene, keep_fraction: float = 1.0, decimation_seed: int = 0) -> Scene:
    """Attach surface-depth and instance-mask maps for every camera."""
    surface = [raycast_depth_map(scene, i, keep_fraction, decimation_seed)
               for i in range(len(scene.cameras))]
    masks = [analytic_masks(scene, i) for i in range(len(scene.cameras))]
    return replace(scene, surface_depth=surface, instance_mask=masks)


def synth_features(params: SynthParams, scene: Scene, mode: str | None = None):
    """Per-camera (image features, depth scores), seeded and deterministic.

    Score modes:
        uniform — scores (and features) drawn from U(0.1, 1); strictly
            positive, for vacancy/coverage studies.
        softmax — softmax over depth of standard-normal logits; every
            pixel's depth column sums to 1.
        surface — mass concentrated around the true surface bin from ray
            casting (uniform columns where there is no return).
    """
    mode = mode or params.score_mode
    if mode not in SCORE_MODES:
        raise ConfigurationError(f"unknown score mode {mode!r}")
    D = params.depth_bins.count
    H, W = params.image_height, params.image_width
    C = params.channels

    out = []
    for i, cam in enumerate(scene.cameras):
        rng = _rng(params, _STREAM_FEATURES, i)
        if mode == "uniform":
            img = rng.uniform(0.1, 1.0, size=(C, H, W))
            scores = rng.uniform(0.1, 1.0, size=(D, H, W))
        elif mode == "softmax":
            img = rng.standard_normal(size=(C, H, W))
            logits = rng.standard_normal(size=(D, H, W))
            e = np.exp(logits - logits.max(axis=0, keepdims=True))
            scores = e / e.sum(axis=0, keepdims=True)
        else:
            img = rng.standard_normal(size=(C, H, W))
            surface = raycast_depth_map(scene, i)
            frac = params.depth_bins.frac_index(np.where(np.isfinite(surface), surface,
                                                         params.depth_bins.d_min))
            bins = np.arange(D, dtype=np.float64)[:, None, None]
            logits = -((bins - frac[None, :, :]) / 2.0) ** 2
            logits[:, ~np.isfinite(surface)] = 0.0
            e = np.exp(logits - logits.max(axis=0, keepdims=True))
            scores = e / e.sum(axis=0, keepdims=True)
        out.append((
            FeatureTensor.from_array(img.astype(np.float32), "CHW"),
            FeatureTensor.from_array(scores.astype(np.float32), "DHW"),
        ))
    return out
