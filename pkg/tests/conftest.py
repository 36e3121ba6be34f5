import numpy as np
import pytest

from rcbev.geometry import CameraRig, DepthBinSpec, OrientedBox


@pytest.fixture
def simple_cam():
    """Identity extrinsic, f=100, principal point (50, 50), bins 1 + 0.5 * 120."""
    K = np.array([[100.0, 0.0, 50.0], [0.0, 100.0, 50.0], [0.0, 0.0, 1.0]])
    return CameraRig(K, np.eye(4), 100, 100, DepthBinSpec(1.0, 0.5, 120))


def random_box(rng, max_center=20.0, max_size=8.0) -> OrientedBox:
    return OrientedBox(
        center=rng.uniform(-max_center, max_center, size=3),
        size=rng.uniform(0.2, max_size, size=3),
        yaw=rng.uniform(-np.pi, np.pi),
    )


def half_space_in_box(p, box) -> bool:
    """Independent containment oracle: six half-space constraints via box axes."""
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    axes = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    rel = np.asarray(p, dtype=np.float64) - box.center
    for ax, half in zip(axes, box.size / 2.0):
        d = float(rel @ ax)
        if d > half or -d > half:
            return False
    return True
