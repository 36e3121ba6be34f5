"""Camera and box geometry: the substrate for BEV transforms and depth labels.

Conventions
-----------
* Ego frame: right-handed, z up, meters. Camera frame: x right, y down,
  z forward (optical axis).
* ``CameraRig.extrinsic`` maps ego coordinates to camera coordinates.
* Depth means the camera-frame forward coordinate (z_cam), not ray length.
* All functions broadcast over leading axes and return validity masks instead
  of raising for geometric misses (behind-camera, out-of-view, ray miss).
  Scalar inputs give scalar (0-d) outputs.

Everything here is a pure function of its inputs; no shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Points closer to the image plane than this are reported behind-camera to
# keep the perspective division away from the pole.
BEHIND_CAMERA_EPS = 1e-6

_UNIT_TOL = 1e-9
_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class DepthBinSpec:
    """Uniform depth discretization: bin k covers [d_min + k*step, d_min + (k+1)*step)."""

    d_min: float
    d_step: float
    count: int

    def __post_init__(self):
        if not (self.d_min > 0 and self.d_step > 0):
            raise ValueError("d_min and d_step must be positive")
        if self.count < 1:
            raise ValueError("need at least one depth bin")

    def centers(self) -> np.ndarray:
        return self.d_min + (np.arange(self.count) + 0.5) * self.d_step

    def center(self, k: int) -> float:
        return self.d_min + (k + 0.5) * self.d_step

    def bin_index(self, depth):
        """Integer bin containing `depth` (may fall outside [0, count))."""
        return np.floor((np.asarray(depth, dtype=np.float64) - self.d_min) / self.d_step).astype(np.int64)

    def frac_index(self, depth):
        """Fractional bin coordinate; bin centers map to integers."""
        return (np.asarray(depth, dtype=np.float64) - self.d_min) / self.d_step - 0.5


@dataclass(frozen=True)
class CameraRig:
    """Pinhole camera: 3x3 intrinsics, 4x4 ego-to-camera extrinsic, image size, depth bins."""

    intrinsics: np.ndarray
    extrinsic: np.ndarray
    height: int
    width: int
    depth_bins: DepthBinSpec

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        E = np.asarray(self.extrinsic, dtype=np.float64)
        if K.shape != (3, 3) or E.shape != (4, 4):
            raise ValueError("intrinsics must be 3x3 and extrinsic 4x4")
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError("focal lengths must be positive")
        if K[0, 1] != 0.0:
            raise ValueError("skew is not supported")
        R = E[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("extrinsic rotation block is not orthonormal")
        if self.height < 1 or self.width < 1:
            raise ValueError("image must be at least 1x1")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsic", E)

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    def center(self) -> np.ndarray:
        """Camera optical center in the ego frame."""
        R = self.extrinsic[:3, :3]
        t = self.extrinsic[:3, 3]
        return -R.T @ t

    def forward(self) -> np.ndarray:
        """Optical-axis direction in the ego frame (unit vector)."""
        return self.extrinsic[2, :3].copy()

    def scaled(self, factor: int) -> "CameraRig":
        """Rig matching a `factor`x upsampled image (pixel-center alignment).

        Upsampled pixel u' relates to the original by u' = factor*u +
        (factor-1)/2, so K scales as fx' = factor*fx, cx' = factor*cx +
        (factor-1)/2 (same for the y row).
        """
        K = self.intrinsics.copy()
        shift = (factor - 1) / 2.0
        K[0, 0] *= factor
        K[1, 1] *= factor
        K[0, 2] = factor * K[0, 2] + shift
        K[1, 2] = factor * K[1, 2] + shift
        return CameraRig(K, self.extrinsic.copy(), self.height * factor,
                         self.width * factor, self.depth_bins)


@dataclass(frozen=True)
class OrientedBox:
    """7-DoF box: center (ego meters), extents along box-local x/y/z, yaw about ego +z."""

    center: np.ndarray
    size: np.ndarray
    yaw: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        s = np.asarray(self.size, dtype=np.float64).reshape(3)
        if not np.all(s > 0):
            raise ValueError("box extents must be positive")
        if not (np.all(np.isfinite(c)) and np.isfinite(self.yaw)):
            raise ValueError("box parameters must be finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)

    def to_local(self, points) -> np.ndarray:
        """Map ego points (..., 3) into box-local coordinates."""
        p = np.asarray(points, dtype=np.float64) - self.center
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        out = np.empty_like(p)
        out[..., 0] = c * p[..., 0] + s * p[..., 1]
        out[..., 1] = -s * p[..., 0] + c * p[..., 1]
        out[..., 2] = p[..., 2]
        return out

    def corners(self) -> np.ndarray:
        """The 8 box corners in the ego frame, (8, 3)."""
        h = self.size / 2.0
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        local = signs * h
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        ego = np.empty_like(local)
        ego[:, 0] = c * local[:, 0] - s * local[:, 1]
        ego[:, 1] = s * local[:, 0] + c * local[:, 1]
        ego[:, 2] = local[:, 2]
        return ego + self.center


def project_to_image(points, cam: CameraRig):
    """Project ego-frame points into the image.

    Args:
        points: (..., 3) ego coordinates.
        cam: camera rig.

    Returns:
        (u, v, depth, valid): pixel coordinates, camera-frame depth, and a
        mask that is False where the point sits behind the camera
        (depth <= BEHIND_CAMERA_EPS). u/v are finite only where valid.
    """
    p = np.asarray(points, dtype=np.float64)
    R = cam.extrinsic[:3, :3]
    t = cam.extrinsic[:3, 3]
    pc = p @ R.T + t
    depth = pc[..., 2]
    valid = depth > BEHIND_CAMERA_EPS
    safe = np.where(valid, depth, 1.0)
    u = cam.fx * pc[..., 0] / safe + cam.cx
    v = cam.fy * pc[..., 1] / safe + cam.cy
    return u, v, depth, valid


def unproject_pixel(u, v, depth, cam: CameraRig) -> np.ndarray:
    """Inverse of project_to_image: pixel + camera-frame depth -> ego point.

    depth must be strictly positive (contract violation otherwise).
    Broadcasts; returns (..., 3).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("unproject_pixel requires positive depth")
    x = (u - cam.cx) / cam.fx * depth
    y = (v - cam.cy) / cam.fy * depth
    pc = np.stack(np.broadcast_arrays(x, y, depth), axis=-1)
    R = cam.extrinsic[:3, :3]
    t = cam.extrinsic[:3, 3]
    return (pc - t) @ R


def bev_to_radial_coords(x, y, z_ref, cam: CameraRig):
    """Map a BEV location to fractional (depth-bin, column) radial coordinates.

    The BEV point (x, y, z_ref) is projected with the pinhole model; the
    radial column is the pixel u and the radial depth coordinate is the
    fractional bin index (bin centers land on integers).

    Returns:
        (d_frac, w_frac, in_view). in_view is False where the point is behind
        the camera, u falls outside [0, W-1], or d_frac outside [0, D-1].
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pts = np.stack(np.broadcast_arrays(x, y, np.asarray(z_ref, dtype=np.float64)), axis=-1)
    u, _, depth, valid = project_to_image(pts, cam)
    bins = cam.depth_bins
    d_frac = np.where(valid, bins.frac_index(np.where(valid, depth, bins.d_min)), -1.0)
    in_view = (
        valid
        & (u >= 0.0)
        & (u <= cam.width - 1.0)
        & (d_frac >= 0.0)
        & (d_frac <= bins.count - 1.0)
    )
    return d_frac, u, in_view


def point_in_box(points, box: OrientedBox):
    """Boundary-inclusive containment test; broadcasts over points (..., 3)."""
    local = box.to_local(points)
    half = box.size / 2.0
    return np.all(np.abs(local) <= half, axis=-1)


def face_distances(points, box: OrientedBox) -> np.ndarray:
    """Distances of interior points to the six box faces.

    Order: front, back, left, right, up, down — i.e. distance to the +x, -x,
    +y, -y, +z, -z faces in box-local coordinates. Opposite pairs sum to the
    corresponding extent. Points must satisfy point_in_box (contract
    violation otherwise); rounding-level excursions are clamped to zero.

    Returns (..., 6).
    """
    local = box.to_local(points)
    half = box.size / 2.0
    d = np.stack(
        [
            half[0] - local[..., 0],
            half[0] + local[..., 0],
            half[1] - local[..., 1],
            half[1] + local[..., 1],
            half[2] - local[..., 2],
            half[2] + local[..., 2],
        ],
        axis=-1,
    )
    if np.any(d < -1e-9):
        raise ValueError("face_distances called with a point outside the box")
    return np.maximum(d, 0.0)


def ray_box_intersect(origin, direction, box: OrientedBox):
    """Slab-method intersection of unit-direction rays with an oriented box.

    Args:
        origin: (..., 3) ray origins (ego frame).
        direction: (..., 3) unit directions (|d| = 1 within 1e-9; contract
            violation otherwise).
        box: the target box.

    Returns:
        (t_entry, t_exit, hit). Parametric distances along the ray with
        0 <= t_entry <= t_exit where hit; rays starting inside the box get
        t_entry = 0. Values are meaningless where hit is False.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    o, d = np.broadcast_arrays(o, d)
    norms = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ValueError("ray directions must be unit length")

    # Rotate ray into the box frame; the box becomes an origin-centered AABB.
    ol = box.to_local(o)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    dl = np.empty(d.shape, dtype=np.float64)
    dl[..., 0] = c * d[..., 0] + s * d[..., 1]
    dl[..., 1] = -s * d[..., 0] + c * d[..., 1]
    dl[..., 2] = d[..., 2]
    half = box.size / 2.0

    t_near = np.full(ol.shape[:-1], -np.inf)
    t_far = np.full(ol.shape[:-1], np.inf)
    hit = np.ones(ol.shape[:-1], dtype=bool)
    for ax in range(3):
        da = dl[..., ax]
        oa = ol[..., ax]
        parallel = np.abs(da) < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half[ax] - oa) / da
            t2 = (half[ax] - oa) / da
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        # A ray parallel to a slab either stays inside it forever or misses.
        inside = np.abs(oa) <= half[ax]
        hit &= ~parallel | inside
        lo = np.where(parallel, -np.inf, lo)
        hi = np.where(parallel, np.inf, hi)
        t_near = np.maximum(t_near, lo)
        t_far = np.minimum(t_far, hi)

    hit &= (t_near <= t_far) & (t_far >= 0.0)
    t_entry = np.maximum(t_near, 0.0)
    return t_entry, t_far, hit
