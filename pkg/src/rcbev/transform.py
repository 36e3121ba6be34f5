"""BEV feature-transformation engines.

Four routes from per-camera image features + depth scores to a Cartesian BEV
grid:

* radial_bev + cartesian_bev — the fast two-stage path: per-camera radial
  features (channel x depth-bin x column) built by W independent
  (C x H) @ (H x D) matrix products, then bilinear sampling at each BEV
  cell's projection. No frustum-sized tensor is ever materialized.
* radial_bev_oracle — the explicit route that materializes the full
  C x D x H x W outer product and reduces over image height in ascending-h
  order. Kept as a correctness oracle and memory-cost foil only.
* voxel_sampling — samples image features and depth scores at every
  (cell, height) voxel center and squeezes height into the grid.
* lss_pool — scatters depth-weighted pseudo-points into cells; leaves
  uncovered cells vacant, increasingly so at finer grids.

All engines are deterministic: accumulation runs camera-major, then in
ascending index order, so outputs are bitwise reproducible and independent of
BLAS thread count (GEMM reduction order does not depend on threading).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraRig, bev_to_radial_coords, project_to_image, unproject_pixel

DIM_NAMES = frozenset({"C", "D", "H", "W", "X", "Y"})
FLOAT_DTYPES = (np.float32, np.float64)


@dataclass
class FeatureTensor:
    """Dense feature array with named dimensions from {C, D, H, W, X, Y}."""

    dims: tuple
    data: np.ndarray

    def __post_init__(self):
        self.dims = tuple(self.dims)
        if not all(d in DIM_NAMES for d in self.dims):
            raise ValueError(f"unknown dimension names in {self.dims}")
        if len(set(self.dims)) != len(self.dims):
            raise ValueError("dimension names must be unique")
        if self.data.ndim != len(self.dims):
            raise ValueError(f"rank {self.data.ndim} does not match dims {self.dims}")
        if self.data.dtype not in FLOAT_DTYPES:
            raise ValueError("feature tensors are float32 or float64")

    @classmethod
    def from_array(cls, data, dims: str | Iterable[str], dtype=None) -> "FeatureTensor":
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        return cls(tuple(dims), np.ascontiguousarray(arr))

    def extent(self, name: str) -> int:
        return self.data.shape[self.dims.index(name)]

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def validate(self):
        if not np.all(np.isfinite(self.data)):
            raise ValueError("feature tensor contains non-finite values")
        return self

    def expect(self, dims: str):
        if self.dims != tuple(dims):
            raise ValueError(f"expected dims {tuple(dims)}, got {self.dims}")
        return self


@dataclass(frozen=True)
class BevGridSpec:
    """Cartesian BEV grid. Cell (i, j) center = (x_min + (i+.5)*cell, y_min + (j+.5)*cell)."""

    x_min: float
    y_min: float
    cell_size: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid must have at least one cell per axis")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def centers_x(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.cell_size

    def centers_y(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.cell_size

    def cell_centers(self) -> tuple:
        """Flattened (x, y) center coordinates in row-major (i, j) order."""
        gx, gy = np.meshgrid(self.centers_x(), self.centers_y(), indexing="ij")
        return gx.ravel(), gy.ravel()

    def cell_of(self, x, y):
        """Containing cell indices and an inside-grid mask; broadcasts."""
        i = np.floor((np.asarray(x, dtype=np.float64) - self.x_min) / self.cell_size).astype(np.int64)
        j = np.floor((np.asarray(y, dtype=np.float64) - self.y_min) / self.cell_size).astype(np.int64)
        inside = (i >= 0) & (i < self.nx) & (j >= 0) & (j < self.ny)
        return i, j, inside


@dataclass
class AllocationReport:
    """Exact dimensional accounting of a transform run.

    intermediate_floats counts the largest intermediate tensor the method
    materializes (peak single allocation, computed from dimensions, never
    sampled from an allocator); output_floats counts the result.
    uncovered_cells tallies BEV cells seen by no camera (cartesian sampling
    paths only; None where the notion does not apply).
    """

    intermediate_floats: int
    output_floats: int
    wall_time: float
    uncovered_cells: int | None = None

    def __post_init__(self):
        if self.intermediate_floats < 0 or self.output_floats < 0:
            raise ValueError("allocation counts cannot be negative")


def _check_pair(img: FeatureTensor, depth: FeatureTensor):
    img.expect("CHW")
    depth.expect("DHW")
    if img.shape[1:] != depth.shape[1:]:
        raise ValueError(
            f"image features H,W {img.shape[1:]} do not match depth scores {depth.shape[1:]}"
        )


def radial_bev(img: FeatureTensor, depth: FeatureTensor) -> FeatureTensor:
    """Radial BEV features: out[c,d,w] = sum_h img[c,h,w] * depth[d,h,w].

    Computed as W independent (C x H) @ (H x D) matrix products; the only
    extra storage beyond the C x D x W result is the transposition view
    (zero-copy in numpy) and GEMM's internal workspace.
    """
    _check_pair(img, depth)
    a = img.data.transpose(2, 0, 1)   # (W, C, H)
    b = depth.data.transpose(2, 1, 0)  # (W, H, D)
    out = np.matmul(a, b).transpose(1, 2, 0)
    return FeatureTensor(("C", "D", "W"), np.ascontiguousarray(out))


def radial_bev_oracle(img: FeatureTensor, depth: FeatureTensor) -> FeatureTensor:
    """Explicit-frustum route: materialize the C x D x H x W outer product
    and reduce over image height in ascending-h order. Test oracle and
    memory-cost foil; do not use on large inputs.
    """
    _check_pair(img, depth)
    frustum = img.data[:, None, :, :] * depth.data[None, :, :, :]
    C, D, H, W = frustum.shape
    out = np.zeros((C, D, W), dtype=frustum.dtype)
    for h in range(H):
        out += frustum[:, :, h, :]
    return FeatureTensor(("C", "D", "W"), out)


def _bilinear_weights(frac, extent):
    """Split fractional coordinates into (lo, hi, t) with lo/hi clamped in-range."""
    lo = np.floor(frac).astype(np.int64)
    lo = np.clip(lo, 0, max(extent - 2, 0))
    hi = np.minimum(lo + 1, extent - 1)
    t = frac - lo
    return lo, hi, t


def bilinear_sample(grid: FeatureTensor, d_frac, w_frac) -> np.ndarray:
    """Bilinearly sample radial features at fractional (depth-bin, column).

    Coordinates must lie in [0, D-1] x [0, W-1] (callers clamp or reject
    first). Returns (C,) for scalar coordinates, (C, n) for arrays; exact at
    integer coordinates.
    """
    grid.expect("CDW")
    C, D, W = grid.shape
    d_frac = np.asarray(d_frac, dtype=np.float64)
    w_frac = np.asarray(w_frac, dtype=np.float64)
    if np.any(d_frac < 0) or np.any(d_frac > D - 1) or np.any(w_frac < 0) or np.any(w_frac > W - 1):
        raise ValueError("sample coordinates out of range")
    scalar = d_frac.ndim == 0 and w_frac.ndim == 0
    d_frac, w_frac = np.atleast_1d(d_frac), np.atleast_1d(w_frac)

    d0, d1, td = _bilinear_weights(d_frac, D)
    w0, w1, tw = _bilinear_weights(w_frac, W)
    flat = grid.data.reshape(C, D * W)
    td = td.astype(grid.dtype)
    tw = tw.astype(grid.dtype)
    out = (
        flat[:, d0 * W + w0] * ((1 - td) * (1 - tw))
        + flat[:, d0 * W + w1] * ((1 - td) * tw)
        + flat[:, d1 * W + w0] * (td * (1 - tw))
        + flat[:, d1 * W + w1] * (td * tw)
    )
    return out[:, 0] if scalar else out


def camera_coverage(cams: Sequence[CameraRig], grid: BevGridSpec, z_ref: float = 0.0) -> np.ndarray:
    """Per-cell count of cameras whose radial view contains the cell center, (X, Y)."""
    xs, ys = grid.cell_centers()
    counts = np.zeros(grid.n_cells, dtype=np.int64)
    for cam in cams:
        _, _, ok = bev_to_radial_coords(xs, ys, z_ref, cam)
        counts += ok
    return counts.reshape(grid.nx, grid.ny)


def cartesian_bev(
    radials: Sequence[tuple],
    grid: BevGridSpec,
    z_ref: float = 0.0,
    fusion: str = "sum",
) -> FeatureTensor:
    """Fill the Cartesian BEV grid by sampling per-camera radial features.

    Args:
        radials: (FeatureTensor[C,D,W], CameraRig) pairs, all sharing C.
        grid: target grid.
        z_ref: reference height at which cell centers are projected.
        fusion: "sum" adds overlapping camera contributions; "mean" divides
            by the per-cell camera count.

    Cells in view of no camera stay zero. Accumulation order is fixed
    (camera ascending), so results are bitwise reproducible.
    """
    if not radials:
        raise ValueError("cartesian_bev needs at least one camera")
    if fusion not in ("sum", "mean"):
        raise ConfigurationError(f"unknown fusion rule {fusion!r}")
    C = radials[0][0].extent("C")
    dtype = radials[0][0].dtype
    for r, _ in radials:
        r.expect("CDW")
        if r.extent("C") != C:
            raise ValueError("all radial tensors must share the channel count")

    xs, ys = grid.cell_centers()
    out = np.zeros((C, grid.n_cells), dtype=dtype)
    counts = np.zeros(grid.n_cells, dtype=np.int64)
    for radial, cam in radials:
        d_frac, w_frac, ok = bev_to_radial_coords(xs, ys, z_ref, cam)
        if not np.any(ok):
            continue
        out[:, ok] += bilinear_sample(radial, d_frac[ok], w_frac[ok])
        counts[ok] += 1
    if fusion == "mean":
        covered = counts > 0
        out[:, covered] /= counts[covered].astype(dtype)
    return FeatureTensor(("C", "X", "Y"), out.reshape(C, grid.nx, grid.ny))


def _sample_image_bilinear(img: np.ndarray, u, v):
    """Bilinear sample of a (C, H, W) image at pixel coordinates; (C, n)."""
    C, H, W = img.shape
    u0, u1, tu = _bilinear_weights(u, W)
    v0, v1, tv = _bilinear_weights(v, H)
    flat = img.reshape(C, H * W)
    tu = tu.astype(img.dtype)
    tv = tv.astype(img.dtype)
    return (
        flat[:, v0 * W + u0] * ((1 - tv) * (1 - tu))
        + flat[:, v0 * W + u1] * ((1 - tv) * tu)
        + flat[:, v1 * W + u0] * (tv * (1 - tu))
        + flat[:, v1 * W + u1] * (tv * tu)
    )


def _sample_scores_trilinear(scores: np.ndarray, d, v, u):
    """Trilinear sample of a (D, H, W) score volume; (n,)."""
    D, H, W = scores.shape
    d0, d1, td = _bilinear_weights(d, D)
    v0, v1, tv = _bilinear_weights(v, H)
    u0, u1, tu = _bilinear_weights(u, W)
    flat = scores.ravel()
    td = td.astype(scores.dtype)
    tv = tv.astype(scores.dtype)
    tu = tu.astype(scores.dtype)

    def at(di, vi, ui):
        return flat[(di * H + vi) * W + ui]

    return (
        at(d0, v0, u0) * (1 - td) * (1 - tv) * (1 - tu)
        + at(d0, v0, u1) * (1 - td) * (1 - tv) * tu
        + at(d0, v1, u0) * (1 - td) * tv * (1 - tu)
        + at(d0, v1, u1) * (1 - td) * tv * tu
        + at(d1, v0, u0) * td * (1 - tv) * (1 - tu)
        + at(d1, v0, u1) * td * (1 - tv) * tu
        + at(d1, v1, u0) * td * tv * (1 - tu)
        + at(d1, v1, u1) * td * tv * tu
    )


def voxel_sampling(
    imgs: Sequence[FeatureTensor],
    depths: Sequence[FeatureTensor],
    cams: Sequence[CameraRig],
    grid: BevGridSpec,
    heights: Sequence[float],
) -> FeatureTensor:
    """Voxel-route baseline: sample every (cell, height) voxel center.

    Each voxel center is projected into each camera; the image feature is
    sampled bilinearly at (u, v), the depth score trilinearly at
    (d_frac, v, u), and feature * score accumulates into the voxel's BEV
    cell. Materializes a C * X * Y * len(heights) voxel volume.
    """
    heights = list(heights)
    if not heights:
        raise ConfigurationError("voxel_sampling needs at least one height")
    if not (len(imgs) == len(depths) == len(cams)):
        raise ValueError("imgs, depths and cams must align")
    for i, d in zip(imgs, depths):
        _check_pair(i, d)
    C = imgs[0].extent("C")
    dtype = imgs[0].dtype

    xs, ys = grid.cell_centers()
    voxels = np.zeros((C, len(heights), grid.n_cells), dtype=dtype)
    for img, depth, cam in zip(imgs, depths, cams):
        H, W = cam.height, cam.width
        D = cam.depth_bins.count
        for hi, z in enumerate(heights):
            pts = np.stack([xs, ys, np.full_like(xs, z)], axis=-1)
            u, v, dep, valid = project_to_image(pts, cam)
            d_frac = cam.depth_bins.frac_index(np.where(valid, dep, cam.depth_bins.d_min))
            ok = (
                valid
                & (u >= 0) & (u <= W - 1)
                & (v >= 0) & (v <= H - 1)
                & (d_frac >= 0) & (d_frac <= D - 1)
            )
            if not np.any(ok):
                continue
            feats = _sample_image_bilinear(img.data, u[ok], v[ok])
            scores = _sample_scores_trilinear(depth.data, d_frac[ok], v[ok], u[ok])
            voxels[:, hi, ok] += feats * scores
    out = voxels.sum(axis=1)
    return FeatureTensor(("C", "X", "Y"), out.reshape(C, grid.nx, grid.ny))


def lss_pool(
    imgs: Sequence[FeatureTensor],
    depths: Sequence[FeatureTensor],
    cams: Sequence[CameraRig],
    grid: BevGridSpec,
) -> FeatureTensor:
    """Pseudo-point pooling baseline (the vacancy-prone route).

    Every (d, h, w) pseudo-point of every camera is lifted to its ego
    position at the bin-center depth and img[:, h, w] * depth[d, h, w]
    accumulates into the containing cell; points outside the grid are
    dropped. Accumulation order: camera, then d, h, w ascending.
    """
    if not (len(imgs) == len(depths) == len(cams)):
        raise ValueError("imgs, depths and cams must align")
    for i, d in zip(imgs, depths):
        _check_pair(i, d)
    C = imgs[0].extent("C")
    dtype = imgs[0].dtype

    out = np.zeros((C, grid.n_cells), dtype=dtype)
    for img, depth, cam in zip(imgs, depths, cams):
        D = cam.depth_bins.count
        H, W = cam.height, cam.width
        centers = cam.depth_bins.centers()
        uu = np.broadcast_to(np.arange(W, dtype=np.float64), (D, H, W))
        vv = np.broadcast_to(np.arange(H, dtype=np.float64)[None, :, None], (D, H, W))
        dd = np.broadcast_to(centers[:, None, None], (D, H, W))
        pts = unproject_pixel(uu, vv, dd, cam)
        i, j, inside = grid.cell_of(pts[..., 0], pts[..., 1])
        # (C, D, H, W) lifted features — the memory cost this baseline pays.
        weighted = img.data[:, None, :, :] * depth.data[None, :, :, :]
        cell = (i * grid.ny + j).ravel()
        keep = inside.ravel()
        cell = cell[keep]
        wflat = weighted.reshape(C, -1)[:, keep]
        for c in range(C):
            out[c] += np.bincount(cell, weights=wflat[c], minlength=grid.n_cells).astype(dtype)
    return FeatureTensor(("C", "X", "Y"), out.reshape(C, grid.nx, grid.ny))


def vacancy_ratio(bev: FeatureTensor) -> float:
    """Fraction of BEV cells whose channel L1 norm is exactly zero."""
    bev.expect("CXY")
    norms = np.abs(bev.data).sum(axis=0)
    return float(np.count_nonzero(norms == 0) / norms.size)


def upsample_2x(t: FeatureTensor) -> FeatureTensor:
    """Bilinear 2x upsampling of the trailing two dimensions.

    Pixel-center alignment: output index j samples the input at
    (j + 0.5)/2 - 0.5, edge-clamped. Stands in for the learned upsampling of
    the depth-score ablation while preserving the tensor interface; pair with
    CameraRig.scaled(2) so projections stay consistent.
    """
    if t.data.ndim != 3:
        raise ValueError("upsample_2x expects a rank-3 tensor")
    h, w = t.data.shape[1], t.data.shape[2]

    def axis_coords(n):
        src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
        return np.clip(src, 0.0, n - 1.0)

    ch = axis_coords(h)
    cw = axis_coords(w)
    h0, h1, th = _bilinear_weights(ch, h)
    w0, w1, tw = _bilinear_weights(cw, w)
    th = th.astype(t.dtype)[None, :, None]
    tw = tw.astype(t.dtype)[None, None, :]
    d = t.data
    rows = d[:, h0, :] * (1 - th) + d[:, h1, :] * th
    out = rows[:, :, w0] * (1 - tw) + rows[:, :, w1] * tw
    return FeatureTensor(t.dims, np.ascontiguousarray(out))


# ---------------------------------------------------------------------------
# Full-pipeline runners with dimensional accounting (shared by CLI and bench).

METHODS = ("rc", "oracle", "voxel", "lss")


@dataclass
class TransformResult:
    bev: FeatureTensor
    report: AllocationReport
    radials: list = field(default_factory=list)


def _pipeline_alloc(method: str, C: int, D: int, H: int, W: int, grid: BevGridSpec,
                    n_heights: int = 0) -> int:
    """Largest intermediate tensor each route materializes (element count)."""
    if method == "rc":
        return C * D * W
    if method == "oracle":
        return C * D * H * W
    if method == "voxel":
        return C * grid.n_cells * n_heights
    if method == "lss":
        return C * D * H * W
    raise ConfigurationError(f"unknown transform method {method!r}")


def validate_transform_inputs(imgs, depths, cams):
    """Reject every dimension mismatch before any compute begins."""
    if not imgs:
        raise ValueError("no cameras supplied")
    if not (len(imgs) == len(depths) == len(cams)):
        raise ValueError(
            f"got {len(imgs)} feature tensors, {len(depths)} score tensors, {len(cams)} cameras"
        )
    C = imgs[0].extent("C")
    for k, (img, depth, cam) in enumerate(zip(imgs, depths, cams)):
        _check_pair(img, depth)
        if img.extent("C") != C:
            raise ValueError(f"camera {k}: channel count {img.extent('C')} != {C}")
        if (img.extent("H"), img.extent("W")) != (cam.height, cam.width):
            raise ValueError(
                f"camera {k}: feature size {img.shape[1:]} != rig image size "
                f"{(cam.height, cam.width)}"
            )
        if depth.extent("D") != cam.depth_bins.count:
            raise ValueError(
                f"camera {k}: score depth {depth.extent('D')} != rig bins {cam.depth_bins.count}"
            )


def run_transform(
    method: str,
    imgs: Sequence[FeatureTensor],
    depths: Sequence[FeatureTensor],
    cams: Sequence[CameraRig],
    grid: BevGridSpec,
    z_ref: float = 0.0,
    heights: Sequence[float] | None = None,
    fusion: str = "sum",
) -> TransformResult:
    """Run one transform route end to end, timing only the compute."""
    validate_transform_inputs(imgs, depths, cams)
    if method == "voxel" and not heights:
        raise ConfigurationError("method 'voxel' requires --heights")
    C = imgs[0].extent("C")
    D = depths[0].extent("D")
    H, W = imgs[0].extent("H"), imgs[0].extent("W")

    radials: list = []
    t0 = time.perf_counter()
    if method in ("rc", "oracle"):
        build = radial_bev if method == "rc" else radial_bev_oracle
        radial_pairs = [(build(i, d), cam) for i, d, cam in zip(imgs, depths, cams)]
        bev = cartesian_bev(radial_pairs, grid, z_ref=z_ref, fusion=fusion)
        radials = [r for r, _ in radial_pairs]
    elif method == "voxel":
        bev = voxel_sampling(imgs, depths, cams, grid, heights)
    elif method == "lss":
        bev = lss_pool(imgs, depths, cams, grid)
    else:
        raise ConfigurationError(f"unknown transform method {method!r}")
    wall = time.perf_counter() - t0

    uncovered = None
    if method in ("rc", "oracle"):
        uncovered = int(np.count_nonzero(camera_coverage(cams, grid, z_ref) == 0))
    report = AllocationReport(
        intermediate_floats=_pipeline_alloc(method, C, D, H, W, grid,
                                            n_heights=len(heights or [])),
        output_floats=C * grid.n_cells,
        wall_time=wall,
        uncovered_cells=uncovered,
    )
    return TransformResult(bev=bev, report=report, radials=radials)
