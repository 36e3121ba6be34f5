"""Binary tensor/label formats and the scene JSON schema.

Tensor files ("BEVT"): magic, format version u32, dtype tag u32
(0 = float32, 1 = float64, 2 = int32), rank u32, extents as u64 list, then
the little-endian payload in row-major order.

Label files ("INBX"): magic, version u32, dims as 3 x u64 (D, H, W), state
bytes (u8), centroid weights (f32), box ids (i32, -1 for absent).

All headers and payloads are little-endian; write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import CameraRig, DepthBinSpec, OrientedBox
from .labels import LabelVolume, Scene
from .transform import FeatureTensor

TENSOR_MAGIC = b"BEVT"
LABEL_MAGIC = b"INBX"
FORMAT_VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int32): 2}


def write_array(path, arr: np.ndarray):
    """Write a float32/float64/int32 array in the tensor container format."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _TAG_FOR:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, _TAG_FOR[arr.dtype], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_array(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TENSOR_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, tag, rank = struct.unpack("<III", f.read(12))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        if tag not in _DTYPE_TAGS:
            raise ValueError(f"{path}: unknown dtype tag {tag}")
        shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        dtype = _DTYPE_TAGS[tag]
        count = int(np.prod(shape)) if rank else 1
        payload = f.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_tensor(path, tensor: FeatureTensor):
    write_array(path, tensor.data)


def read_tensor(path, dims: str) -> FeatureTensor:
    """Read a tensor file and attach dimension names (names are not stored)."""
    arr = read_array(path)
    return FeatureTensor(tuple(dims), arr).validate()


def write_labels(path, labels: LabelVolume):
    d, h, w = labels.state.shape
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<3Q", d, h, w))
        f.write(np.ascontiguousarray(labels.state, dtype=np.uint8).tobytes())
        f.write(np.ascontiguousarray(labels.cai_weight, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(labels.box_id, dtype="<i4").tobytes())


def read_labels(path) -> LabelVolume:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(4) != LABEL_MAGIC:
            raise ValueError(f"{path}: not a label volume file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        d, h, w = struct.unpack("<3Q", f.read(24))
        n = d * h * w
        state = np.frombuffer(f.read(n), dtype=np.uint8).reshape(d, h, w).copy()
        cai = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(d, h, w).copy()
        box = np.frombuffer(f.read(4 * n), dtype="<i4").reshape(d, h, w).copy()
    return LabelVolume(state=state, cai_weight=cai, box_id=box)


# ---------------------------------------------------------------------------
# Scene JSON: cameras (intrinsics row-major 9, extrinsic row-major 16, image
# size, depth-bin triple), boxes (center 3, size 3, yaw), optional relative
# file references for per-camera surface-depth/instance-mask binaries.


def camera_to_dict(cam: CameraRig) -> dict:
    return {
        "intrinsics": [float(v) for v in cam.intrinsics.ravel()],
        "extrinsic": [float(v) for v in cam.extrinsic.ravel()],
        "height": cam.height,
        "width": cam.width,
        "depth_bins": {
            "d_min": cam.depth_bins.d_min,
            "d_step": cam.depth_bins.d_step,
            "count": cam.depth_bins.count,
        },
    }


def camera_from_dict(d: dict) -> CameraRig:
    bins = d["depth_bins"]
    return CameraRig(
        intrinsics=np.array(d["intrinsics"], dtype=np.float64).reshape(3, 3),
        extrinsic=np.array(d["extrinsic"], dtype=np.float64).reshape(4, 4),
        height=int(d["height"]),
        width=int(d["width"]),
        depth_bins=DepthBinSpec(float(bins["d_min"]), float(bins["d_step"]), int(bins["count"])),
    )


def write_scene(directory, scene: Scene) -> Path:
    """Write scene.json plus any per-camera map binaries into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {
        "cameras": [camera_to_dict(c) for c in scene.cameras],
        "boxes": [
            {"center": [float(v) for v in b.center],
             "size": [float(v) for v in b.size],
             "yaw": float(b.yaw)}
            for b in scene.boxes
        ],
        "ground_z": scene.ground_z,
        "surface_depth_files": None,
        "instance_mask_files": None,
    }
    if scene.surface_depth is not None:
        names = []
        for i, m in enumerate(scene.surface_depth):
            name = f"cam{i:02d}_surface.bevt"
            write_array(directory / name, m.astype(np.float32))
            names.append(name)
        doc["surface_depth_files"] = names
    if scene.instance_mask is not None:
        names = []
        for i, m in enumerate(scene.instance_mask):
            name = f"cam{i:02d}_mask.bevt"
            write_array(directory / name, m.astype(np.int32))
            names.append(name)
        doc["instance_mask_files"] = names
    path = directory / "scene.json"
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_scene(path) -> Scene:
    """Read a scene from scene.json (or the directory holding it)."""
    path = Path(path)
    if path.is_dir():
        path = path / "scene.json"
    with open(path) as f:
        doc = json.load(f)
    base = path.parent
    cameras = [camera_from_dict(c) for c in doc["cameras"]]
    boxes = [
        OrientedBox(center=np.array(b["center"]), size=np.array(b["size"]), yaw=float(b["yaw"]))
        for b in doc["boxes"]
    ]
    surface = None
    if doc.get("surface_depth_files"):
        surface = [read_array(base / n).astype(np.float64) for n in doc["surface_depth_files"]]
    masks = None
    if doc.get("instance_mask_files"):
        masks = [read_array(base / n) for n in doc["instance_mask_files"]]
    ground = doc.get("ground_z")
    return Scene(cameras=cameras, boxes=boxes, surface_depth=surface,
                 instance_mask=masks, ground_z=ground).validate()


def write_pgm(path, image: np.ndarray):
    """8-bit binary PGM (portable graymap)."""
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM output needs a 2-D uint8 image")
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        f.write(image.tobytes())
