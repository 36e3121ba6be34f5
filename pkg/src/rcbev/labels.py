"""Depth-supervision label volumes built from box geometry.

A LabelVolume holds one tri-state label per (depth bin, pixel):

* Negative — supervise toward score 0,
* Positive — supervise toward score 1 (inside a ground-truth box, or the
  surface-return bin of a background pixel),
* Ignore — excluded from the loss entirely.

The pipeline starts from the plain inside-a-box test and then applies up to
three corrections: occluded far-box points stop being supervised, points
whose pixel is masked as another instance or background stop being
supervised, and (with a surface-depth map) background pixels get a one-hot
positive at the surface bin with the bins behind it either ignored or kept
negative.

Every pass only moves states Negative -> {Positive, Ignore} or
Positive -> Ignore; nothing ever leaves Ignore.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraRig, OrientedBox, point_in_box, ray_box_intersect, unproject_pixel

NEGATIVE = 0
POSITIVE = 1
IGNORE = 2

NO_BOX = -1


@dataclass
class LabelVolume:
    """Per-(depth bin, pixel) supervision state, centroid weight, and box id.

    state: (D, H, W) uint8 in {NEGATIVE, POSITIVE, IGNORE}.
    cai_weight: (D, H, W) float32, meaningful only at positives (1.0 for
        background one-hot positives, which carry box_id == NO_BOX).
    box_id: (D, H, W) int32; NO_BOX where no box is attached.
    """

    state: np.ndarray
    cai_weight: np.ndarray
    box_id: np.ndarray
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.state.shape == self.cai_weight.shape == self.box_id.shape):
            raise ValueError("state, cai_weight and box_id must share a shape")
        if self.state.ndim != 3:
            raise ValueError("label volumes are (D, H, W)")

    @classmethod
    def all_negative(cls, dims) -> "LabelVolume":
        d, h, w = dims
        return cls(
            state=np.zeros((d, h, w), dtype=np.uint8),
            cai_weight=np.zeros((d, h, w), dtype=np.float32),
            box_id=np.full((d, h, w), NO_BOX, dtype=np.int32),
        )

    def copy(self) -> "LabelVolume":
        return LabelVolume(self.state.copy(), self.cai_weight.copy(),
                           self.box_id.copy(), list(self.warnings))

    def counts(self) -> dict:
        return {
            "negative": int(np.count_nonzero(self.state == NEGATIVE)),
            "positive": int(np.count_nonzero(self.state == POSITIVE)),
            "ignore": int(np.count_nonzero(self.state == IGNORE)),
        }

    def validate(self):
        pos = self.state == POSITIVE
        if np.any((self.cai_weight < 0) | (self.cai_weight > 1)):
            raise ValueError("cai weights must lie in [0, 1]")
        if np.any(self.cai_weight[~pos] != 0):
            raise ValueError("non-positive elements must carry zero weight")
        if np.any(self.box_id[~pos] != NO_BOX):
            raise ValueError("box ids may only be attached to positives")
        return self


@dataclass
class Scene:
    """Cameras, ground-truth boxes, and optional per-camera maps.

    surface_depth maps hold camera-frame depth in meters (np.inf = no
    return); instance_mask maps hold front box indices (NO_BOX = background).
    ground_z is the height of the flat ground plane used by ray casting,
    None for no ground.
    """

    cameras: list
    boxes: list
    surface_depth: list | None = None
    instance_mask: list | None = None
    ground_z: float | None = None

    def validate(self):
        n = len(self.boxes)
        if self.surface_depth is not None:
            for i, m in enumerate(self.surface_depth):
                cam = self.cameras[i]
                if m.shape != (cam.height, cam.width):
                    raise ValueError(f"surface map {i} shape {m.shape} != image size")
                if np.any(m <= 0):
                    raise ValueError("surface depths must be positive where present")
        if self.instance_mask is not None:
            for i, m in enumerate(self.instance_mask):
                cam = self.cameras[i]
                if m.shape != (cam.height, cam.width):
                    raise ValueError(f"instance mask {i} shape {m.shape} != image size")
                if np.any(m >= n):
                    raise ValueError("instance mask references a box index out of range")
        return self


@dataclass(frozen=True)
class LabelConfig:
    """Which label corrections to run; mirrors the ablation flags."""

    use_lidar: bool = False
    o_a: bool = False  # ignore occluded far-box points
    o_b: bool = False  # ignore mask-mismatched points
    o_c: bool = False  # ignore points behind the background surface


def pseudo_point_grid(cam: CameraRig) -> np.ndarray:
    """Ego-frame positions of every (depth bin, pixel) pseudo-point, (D, H, W, 3).

    Element (d, h, w) is pixel (u=w, v=h) unprojected at the bin-center depth.
    """
    D = cam.depth_bins.count
    H, W = cam.height, cam.width
    uu = np.broadcast_to(np.arange(W, dtype=np.float64), (D, H, W))
    vv = np.broadcast_to(np.arange(H, dtype=np.float64)[None, :, None], (D, H, W))
    dd = np.broadcast_to(cam.depth_bins.centers()[:, None, None], (D, H, W))
    return unproject_pixel(uu, vv, dd, cam)


def vanilla_inbox_label(points: np.ndarray, boxes: Sequence[OrientedBox]) -> LabelVolume:
    """Positive wherever the pseudo-point lies inside any box, else Negative.

    Points inside several boxes attach to the box with the nearest center
    (lowest index on exact ties). Weights stay zero; they are attached later
    by the loss module.
    """
    labels = LabelVolume.all_negative(points.shape[:3])
    if not boxes:
        return labels
    best = np.full(points.shape[:3], np.inf)
    for idx, box in enumerate(boxes):
        inside = point_in_box(points, box)
        if not np.any(inside):
            continue
        dist = np.sum((points - box.center) ** 2, axis=-1)
        take = inside & (dist < best)
        best[take] = dist[take]
        labels.box_id[take] = idx
        labels.state[inside] = POSITIVE
    return labels


def _pixel_rays(cam: CameraRig):
    """Unit-direction rays through every pixel plus the per-pixel depth scale.

    Returns (origin (3,), dirs (H*W, 3), axial (H*W,)): camera-frame depth of
    a point at ray parameter t is t * axial.
    """
    H, W = cam.height, cam.width
    uu, vv = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64), indexing="xy")
    pts = unproject_pixel(uu.ravel(), vv.ravel(), 1.0, cam)
    origin = cam.center()
    dirs = pts - origin
    lengths = np.linalg.norm(dirs, axis=-1, keepdims=True)
    dirs = dirs / lengths
    axial = dirs @ cam.forward()
    return origin, dirs, axial


def front_box_map(cam: CameraRig, boxes: Sequence[OrientedBox]) -> np.ndarray:
    """Index of the box whose ray entry comes first, per pixel; NO_BOX where none hit."""
    H, W = cam.height, cam.width
    if not boxes:
        return np.full((H, W), NO_BOX, dtype=np.int32)
    origin, dirs, _ = _pixel_rays(cam)
    entries = np.full((len(boxes), H * W), np.inf)
    for idx, box in enumerate(boxes):
        t_entry, _, hit = ray_box_intersect(origin, dirs, box)
        entries[idx, hit] = t_entry[hit]
    front = np.argmin(entries, axis=0).astype(np.int32)
    front[~np.isfinite(entries.min(axis=0))] = NO_BOX
    return front.reshape(H, W)


def apply_occlusion_correction(
    labels: LabelVolume,
    cam: CameraRig,
    boxes: Sequence[OrientedBox],
    points: np.ndarray | None = None,
) -> LabelVolume:
    """Stop supervising positives hidden behind a nearer box.

    Per pixel, the front box is the one the pixel ray enters first. Positives
    whose pseudo-point lies inside the front box survive (including points a
    farther box also claims); all other box positives on that pixel become
    Ignore.
    """
    out = labels.copy()
    if not boxes:
        return out
    if points is None:
        points = pseudo_point_grid(cam)
    front = front_box_map(cam, boxes)
    box_pos = (out.state == POSITIVE) & (out.box_id != NO_BOX)
    for idx in np.unique(front):
        if idx == NO_BOX:
            continue
        sel = box_pos & (front == idx)[None, :, :]
        if not np.any(sel):
            continue
        keep = point_in_box(points[sel], boxes[idx])
        drop = np.zeros_like(sel)
        drop[sel] = ~keep
        out.state[drop] = IGNORE
        out.box_id[drop] = NO_BOX
        out.cai_weight[drop] = 0.0
    return out


def apply_mask_correction(labels: LabelVolume, instance_mask: np.ndarray | None) -> LabelVolume:
    """Stop supervising positives whose pixel the mask attributes elsewhere."""
    out = labels.copy()
    if instance_mask is None:
        out.warnings.append("mask correction skipped: no instance mask available")
        return out
    mismatch = (out.state == POSITIVE) & (out.box_id != instance_mask[None, :, :])
    out.state[mismatch] = IGNORE
    out.box_id[mismatch] = NO_BOX
    out.cai_weight[mismatch] = 0.0
    return out


def apply_background_labels(
    labels: LabelVolume,
    surface_depth: np.ndarray | None,
    mode: str,
    depth_bins,
    behind_surface: str = "ignore",
) -> LabelVolume:
    """Label pure-background pixels from the surface-depth map.

    A pixel is pure background when every bin is still Negative. In "lidar"
    mode its surface-return bin becomes a one-hot Positive (weight 1, no
    box), nearer bins stay Negative, and farther bins become Ignore
    (behind_surface="ignore") or stay Negative (behind_surface="negative").
    Pixels with no usable return (np.inf, or a depth outside the bin range)
    become all-Ignore. In "no_lidar" mode background pixels are left fully
    Negative.
    """
    if mode not in ("lidar", "no_lidar"):
        raise ConfigurationError(f"unknown background mode {mode!r}")
    if behind_surface not in ("ignore", "negative"):
        raise ConfigurationError(f"unknown behind_surface rule {behind_surface!r}")
    out = labels.copy()
    if mode == "no_lidar":
        return out
    if surface_depth is None:
        raise ConfigurationError("lidar background mode requires a surface_depth map")

    D = out.state.shape[0]
    background = np.all(out.state == NEGATIVE, axis=0)
    with np.errstate(invalid="ignore"):
        k = np.floor((surface_depth - depth_bins.d_min) / depth_bins.d_step)
    usable = np.isfinite(surface_depth) & (k >= 0) & (k < D)
    k = np.where(usable, k, 0).astype(np.int64)

    no_return = background & ~usable
    out.state[:, no_return] = IGNORE

    hit = background & usable
    bins = np.arange(D)[:, None]
    hit_k = k[hit]
    col = out.state[:, hit]
    col[bins == hit_k] = POSITIVE
    if behind_surface == "ignore":
        col[bins > hit_k] = IGNORE
    out.state[:, hit] = col
    w = out.cai_weight[:, hit]
    w[bins == hit_k] = 1.0
    out.cai_weight[:, hit] = w
    return out


def build_labels(scene: Scene, cam_index: int, config: LabelConfig) -> LabelVolume:
    """Full label pipeline for one camera: vanilla, then the enabled corrections."""
    cam = scene.cameras[cam_index]
    if config.o_b and (scene.instance_mask is None or scene.instance_mask[cam_index] is None):
        raise ConfigurationError("label config enables o_b but the scene has no instance_mask")
    needs_surface = config.use_lidar or config.o_c
    if needs_surface and (scene.surface_depth is None or scene.surface_depth[cam_index] is None):
        raise ConfigurationError(
            "label config enables use_lidar/o_c but the scene has no surface_depth"
        )

    points = pseudo_point_grid(cam)
    labels = vanilla_inbox_label(points, scene.boxes)
    if config.o_a:
        labels = apply_occlusion_correction(labels, cam, scene.boxes, points=points)
    if config.o_b:
        labels = apply_mask_correction(labels, scene.instance_mask[cam_index])
    if config.o_c:
        labels = apply_background_labels(labels, scene.surface_depth[cam_index],
                                         "lidar", cam.depth_bins, behind_surface="ignore")
    elif config.use_lidar:
        labels = apply_background_labels(labels, scene.surface_depth[cam_index],
                                         "lidar", cam.depth_bins, behind_surface="negative")
    else:
        labels = apply_background_labels(labels, None, "no_lidar", cam.depth_bins)
    return labels
