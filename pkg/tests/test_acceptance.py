"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Detection-accuracy metrics (mAP/NDS/...) are out of scope by design:
they need full-scale training; these property checks substitute.
"""

import hashlib
import os
import subprocess
import sys
import time

import numpy as np
import pytest

import rcbev
from rcbev.bench import BenchConfig, run_bench
from rcbev.geometry import DepthBinSpec, OrientedBox
from rcbev.labels import (
    IGNORE,
    NEGATIVE,
    NO_BOX,
    POSITIVE,
    LabelConfig,
    LabelVolume,
    Scene,
    apply_background_labels,
    apply_mask_correction,
    apply_occlusion_correction,
    build_labels,
    pseudo_point_grid,
    vanilla_inbox_label,
)
from rcbev.loss import LossConfig, ScoreVolume, cai_focal_grad, cai_focal_loss, cai_weight
from rcbev.synth import SynthParams, populate_maps, synth_features, synth_scene
from rcbev.transform import (
    BevGridSpec,
    FeatureTensor,
    camera_coverage,
    cartesian_bev,
    lss_pool,
    radial_bev,
    radial_bev_oracle,
    run_transform,
    vacancy_ratio,
)

from test_transform import forward_cam


def report(criterion, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    print(line)
    assert ok, line


def ft(arr, dims, dtype):
    return FeatureTensor.from_array(np.asarray(arr, dtype=dtype), dims)


def test_criterion_1_rc_sampling_correctness():
    """Frustum-sum and slice-matmul routes agree: 1e-5 (f32), 1e-12 (f64)."""
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst32 = worst64 = 0.0
    for _ in range(100):
        C = int(rng.integers(1, 33))
        D = int(rng.integers(1, 65))
        H = int(rng.integers(1, 33))
        W = int(rng.integers(1, 65))
        img = rng.uniform(0.0, 1.0, size=(C, H, W))
        dep = rng.uniform(0.0, 1.0, size=(D, H, W))

        a32 = radial_bev(ft(img, "CHW", np.float32), ft(dep, "DHW", np.float32)).data
        b32 = radial_bev_oracle(ft(img, "CHW", np.float32), ft(dep, "DHW", np.float32)).data
        scale32 = np.maximum(np.maximum(np.abs(a32), np.abs(b32)), np.finfo(np.float32).tiny)
        worst32 = max(worst32, float(np.max(np.abs(a32 - b32) / scale32)))

        a64 = radial_bev(ft(img, "CHW", np.float64), ft(dep, "DHW", np.float64)).data
        b64 = radial_bev_oracle(ft(img, "CHW", np.float64), ft(dep, "DHW", np.float64)).data
        scale64 = np.maximum(np.maximum(np.abs(a64), np.abs(b64)), np.finfo(np.float64).tiny)
        worst64 = max(worst64, float(np.max(np.abs(a64 - b64) / scale64)))
    elapsed = time.perf_counter() - t0
    report(1, worst32 <= 1e-5 and worst64 <= 1e-12,
           f"max rel diff f32={worst32:.3e} (<=1e-5), f64={worst64:.3e} (<=1e-12), "
           f"100 instances in {elapsed:.1f}s")


def test_criterion_2_memory_claim():
    """Oracle/rc intermediate-floats ratio is exactly H; H=16 -> 93.75% saved."""
    params = SynthParams(seed=0, n_cameras=2, n_boxes=0, image_height=16,
                         image_width=44, channels=8, score_mode="uniform")
    scene = synth_scene(params)
    feats = synth_features(params, scene)
    imgs = [f for f, _ in feats]
    deps = [d for _, d in feats]
    grid = BevGridSpec(-12.8, -12.8, 0.4, 64, 64)
    rc = run_transform("rc", imgs, deps, scene.cameras, grid).report
    oracle = run_transform("oracle", imgs, deps, scene.cameras, grid).report
    ratio = oracle.intermediate_floats / rc.intermediate_floats
    reduction = 1.0 - rc.intermediate_floats / oracle.intermediate_floats
    report(2, ratio == 16.0 and reduction == 0.9375,
           f"oracle/rc intermediate ratio = {ratio:g} (H=16), reduction = {reduction:.2%}")


def test_criterion_3_latency_claim_scaled():
    """6 cams, C=80, D=118, H=16, W=44, BEV 256x256, 20 heights: rc <= voxel/5."""
    cfg = BenchConfig(methods=("rc", "voxel"), bev_sizes=(256,), repetitions=5,
                      n_heights=20, n_cameras=6, channels=80, image_height=16,
                      image_width=44, depth_count=118)
    t0 = time.perf_counter()
    rep = run_bench(cfg)
    elapsed = time.perf_counter() - t0
    rows = {r.method: r for r in rep.rows}
    rc, voxel = rows["rc"].median_s, rows["voxel"].median_s
    report(3, rc <= voxel / 5.0,
           f"median rc={rc * 1e3:.1f}ms vs voxel={voxel * 1e3:.1f}ms "
           f"(ratio {voxel / rc:.1f}x, need >=5x), bench took {elapsed:.0f}s")


def _full_coverage_setup():
    """Single forward-facing camera and a grid entirely inside its radial view."""
    params = SynthParams(seed=5, n_cameras=1, n_boxes=0, image_height=16,
                         image_width=44, channels=8, score_mode="uniform")
    scene = synth_scene(params)
    feats = synth_features(params, scene)
    grid = BevGridSpec(x_min=4.0, y_min=-3.0, cell_size=0.5, nx=40, ny=12)
    return scene, feats, grid


def test_criterion_4_non_vacancy():
    """Positive scores + full coverage -> vacancy 0; lss vacancy grows with size."""
    scene, feats, grid = _full_coverage_setup()
    assert np.all(camera_coverage(scene.cameras, grid) >= 1)
    radials = [(radial_bev(img, dep), cam)
               for (img, dep), cam in zip(feats, scene.cameras)]
    vac_rc = vacancy_ratio(cartesian_bev(radials, grid))

    imgs = [f for f, _ in feats]
    deps = [d for _, d in feats]
    vac_lss = {}
    for size in (128, 256):
        g = BevGridSpec(-25.6, -25.6, 51.2 / size, size, size)
        vac_lss[size] = vacancy_ratio(lss_pool(imgs, deps, scene.cameras, g))
    report(4, vac_rc == 0.0 and vac_lss[256] >= vac_lss[128],
           f"cartesian vacancy = {vac_rc} (exactly 0), "
           f"lss vacancy 256^2={vac_lss[256]:.4f} >= 128^2={vac_lss[128]:.4f}")


def _inbox_oracle(points, boxes):
    """Independent exhaustive labeling: per-pixel loop, half-space membership."""
    D, H, W = points.shape[:3]
    state = np.zeros((D, H, W), dtype=np.uint8)
    box_id = np.full((D, H, W), NO_BOX, dtype=np.int32)
    axes_of = []
    for box in boxes:
        c, s = np.cos(box.yaw), np.sin(box.yaw)
        axes_of.append(np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]))
    for h in range(H):
        for w in range(W):
            col = points[:, h, w]  # (D, 3)
            best = np.full(D, np.inf)
            for idx, box in enumerate(boxes):
                rel = (col - box.center) @ axes_of[idx].T
                inside = np.all(np.abs(rel) <= box.size / 2.0, axis=-1)
                if not inside.any():
                    continue
                dist = np.sum((col - box.center) ** 2, axis=-1)
                take = inside & (dist < best)
                best[take] = dist[take]
                state[take, h, w] = POSITIVE
                box_id[take, h, w] = idx
    return state, box_id


def test_criterion_5_inbox_label_oracle():
    """build_labels (no corrections) equals the exhaustive point x box loop, exact."""
    t0 = time.perf_counter()
    total_points = 0
    for seed in range(10):
        n_boxes = 1 + seed % 10
        params = SynthParams(seed=1000 + seed, n_cameras=1, n_boxes=n_boxes,
                             image_height=16, image_width=44,
                             depth_bins=DepthBinSpec(1.0, 0.5, 118), channels=2)
        scene = synth_scene(params)
        cam = scene.cameras[0]
        points = pseudo_point_grid(cam)
        total_points += points[..., 0].size
        assert points[..., 0].size <= 5 * 10 ** 5

        got = build_labels(scene, 0, LabelConfig())
        state, box_id = _inbox_oracle(points, scene.boxes)
        if not (np.array_equal(got.state, state) and np.array_equal(got.box_id, box_id)):
            report(5, False, f"scene seed {1000 + seed} disagrees with the oracle")
    elapsed = time.perf_counter() - t0
    report(5, True, f"10 scenes, {total_points} pseudo-points total, exact match, {elapsed:.1f}s")


def test_criterion_6_correction_semantics():
    """Constructed scenes: each correction flips exactly the intended elements."""
    # (a) occlusion: far-box positives on occluded rays -> Ignore, nothing else
    cam = forward_cam(bins=DepthBinSpec(1.0, 0.5, 60))
    box_a = OrientedBox(np.array([10.0, 0.0, 0.0]), np.array([4.0, 2.0, 1.5]), 0.0)
    box_b = OrientedBox(np.array([22.0, 0.0, 0.0]), np.array([4.0, 2.0, 1.5]), 0.0)
    pts = pseudo_point_grid(cam)
    vanilla = vanilla_inbox_label(pts, [box_a, box_b])
    occ = apply_occlusion_correction(vanilla, cam, [box_a, box_b], points=pts)
    changed = vanilla.state != occ.state
    expected = (vanilla.state == POSITIVE) & (vanilla.box_id == 1)  # box B is occluded
    ok_a = np.array_equal(changed, expected) and np.all(occ.state[expected] == IGNORE)

    # (b) mask: exactly the mask-mismatched positives -> Ignore
    mask = np.full((cam.height, cam.width), NO_BOX, dtype=np.int32)
    mask[:, :cam.width // 2] = 0
    masked = apply_mask_correction(vanilla, mask)
    mism = (vanilla.state == POSITIVE) & (vanilla.box_id != mask[None, :, :])
    ok_b = (np.array_equal(vanilla.state != masked.state, mism)
            and np.all(masked.state[mism] == IGNORE))

    # (c) behind-surface: exactly the bins behind the return -> Ignore
    bins = DepthBinSpec(1.0, 0.5, 40)
    lab = LabelVolume.all_negative((40, 1, 1))
    surface = np.array([[7.6]])  # bin 13
    oc = apply_background_labels(lab, surface, "lidar", bins, behind_surface="ignore")
    col = oc.state[:, 0, 0]
    ok_c = (col[13] == POSITIVE and np.all(col[:13] == NEGATIVE)
            and np.all(col[14:] == IGNORE))

    # monotonicity on 50 random scenes: no Ignore ever converts back
    ok_mono = True
    for seed in range(50):
        params = SynthParams(seed=2000 + seed, n_cameras=1, n_boxes=5, image_height=8,
                             image_width=20, depth_bins=DepthBinSpec(1.0, 0.5, 24),
                             channels=2)
        scene = populate_maps(synth_scene(params))
        cam_i = scene.cameras[0]
        p = pseudo_point_grid(cam_i)
        stages = [vanilla_inbox_label(p, scene.boxes)]
        stages.append(apply_occlusion_correction(stages[-1], cam_i, scene.boxes, points=p))
        stages.append(apply_mask_correction(stages[-1], scene.instance_mask[0]))
        stages.append(apply_background_labels(stages[-1], scene.surface_depth[0], "lidar",
                                              cam_i.depth_bins, behind_surface="ignore"))
        for before, after in zip(stages, stages[1:]):
            if np.any(after.state[before.state == IGNORE] != IGNORE):
                ok_mono = False
            if np.any((before.state == POSITIVE) & (after.state == NEGATIVE)):
                ok_mono = False
    report(6, ok_a and ok_b and ok_c and ok_mono,
           f"occlusion exact={ok_a}, mask exact={ok_b}, behind-surface exact={ok_c}, "
           f"monotone on 50 scenes={ok_mono}")


def test_criterion_7_cai_weight_properties():
    """Centroid 1, faces 0, range, monotonicity, rigid/scale invariance on 1e4 pairs."""
    rng = np.random.default_rng(77)
    n_pairs = 0
    ok = True
    for _ in range(100):
        box = OrientedBox(center=rng.uniform(-20, 20, 3), size=rng.uniform(0.2, 8.0, 3),
                          yaw=rng.uniform(-np.pi, np.pi))
        c, s = np.cos(box.yaw), np.sin(box.yaw)
        R_box = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        local = rng.uniform(-0.499, 0.499, size=(100, 3)) * box.size
        pts = local @ R_box.T + box.center
        w = cai_weight(pts, box)
        n_pairs += len(pts)
        ok &= bool(np.all((w >= 0.0) & (w <= 1.0)))

        # exact extremes. Centroid stays exact under any yaw. Face points are
        # only on the face if center + half rounds to nothing, so draw the
        # exactness boxes on a dyadic 0.25 m lattice: up/down faces are then
        # exact under any yaw (z is rotation-invariant) and an axis-aligned
        # twin covers the x/y faces.
        ok &= cai_weight(box.center, box) == 1.0
        dy_center = np.round(box.center * 4) / 4
        dy_size = np.maximum(np.round(box.size * 4) / 4, 0.25)
        dy_box = OrientedBox(dy_center, dy_size, box.yaw)
        top = dy_center + np.array([0.0, 0.0, dy_size[2] / 2.0])
        ok &= cai_weight(top, dy_box) == 0.0
        twin = OrientedBox(dy_center, dy_size, 0.0)
        for ax in range(3):
            face = dy_center.copy()
            face[ax] += dy_size[ax] / 2.0
            ok &= cai_weight(face, twin) == 0.0

        # monotone toward the centroid along each box axis
        for ax in range(3):
            offs = np.sort(rng.uniform(0.0, 0.5, size=8)) * box.size[ax]
            probe_local = np.zeros((8, 3))
            probe_local[:, ax] = offs
            wa = cai_weight(probe_local @ R_box.T + box.center, box)
            ok &= bool(np.all(np.diff(wa) <= 1e-12))

        # rigid motion + joint scaling leave the weight unchanged (1e-12)
        phi = rng.uniform(-np.pi, np.pi)
        cp, sp = np.cos(phi), np.sin(phi)
        R = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
        t = rng.uniform(-15, 15, 3)
        moved = OrientedBox(R @ box.center + t, box.size, box.yaw + phi)
        w_m = cai_weight(pts @ R.T + t, moved)
        ok &= bool(np.all(np.abs(w_m - w) <= 1e-12))

        k = rng.uniform(0.5, 4.0)
        scaled = OrientedBox(k * box.center, k * box.size, box.yaw)
        w_s = cai_weight(k * pts, scaled)
        ok &= bool(np.all(np.abs(w_s - w) <= 1e-12))
    report(7, ok and n_pairs >= 10 ** 4, f"{n_pairs} random (point, box) pairs checked")


def test_criterion_8_loss_and_gradient():
    """Hand loss values (1e-6), FD gradient (1e-4 rel), Ignore inertness, focal regression."""
    # hand values
    mk = lambda state, weight, z: (
        LabelVolume(state=np.array([[[state]]], dtype=np.uint8),
                    cai_weight=np.array([[[weight]]], dtype=np.float32),
                    box_id=np.array([[[NO_BOX]]], dtype=np.int32)),
        ScoreVolume(np.array([[[z]]], dtype=np.float64), "sigmoid"),
    )
    lab_p, sc_p = mk(POSITIVE, 1.0, 0.0)
    lab_n, sc_n = mk(NEGATIVE, 0.0, 0.0)
    v_pos = cai_focal_loss(sc_p, lab_p, LossConfig())
    v_neg = cai_focal_loss(sc_n, lab_n, LossConfig())
    ok_hand = abs(v_pos - 0.0433217) <= 1e-6 and abs(v_neg - 0.1299651) <= 1e-6

    # gradient vs central differences on 1000 random elements, f64. The loss
    # is a sum of independent per-element terms, so dL/dz_i equals the finite
    # difference of the single-element loss; differencing element volumes
    # keeps the FD oracle free of the sum's cancellation noise.
    rng = np.random.default_rng(88)
    z = rng.uniform(-5, 5, size=(10, 10, 10))
    state = rng.choice([NEGATIVE, POSITIVE, IGNORE], size=z.shape, p=[0.5, 0.3, 0.2])
    weights = np.where(state == POSITIVE, rng.uniform(0.02, 1.0, z.shape), 0.0)
    labels = LabelVolume(state=state.astype(np.uint8),
                         cai_weight=weights.astype(np.float32),
                         box_id=np.where(state == POSITIVE, 0, NO_BOX).astype(np.int32))
    cfg = LossConfig(reduction="sum")
    analytic = cai_focal_grad(ScoreVolume(z, "sigmoid"), labels, cfg).data
    step = 1e-5
    worst = 0.0
    for idx in np.ndindex(z.shape):
        cell = LabelVolume(state=labels.state[idx].reshape(1, 1, 1),
                           cai_weight=labels.cai_weight[idx].reshape(1, 1, 1),
                           box_id=labels.box_id[idx].reshape(1, 1, 1))
        zp = np.array(z[idx] + step).reshape(1, 1, 1)
        zm = np.array(z[idx] - step).reshape(1, 1, 1)
        lp = cai_focal_loss(ScoreVolume(zp, "sigmoid"), cell, cfg)
        lm = cai_focal_loss(ScoreVolume(zm, "sigmoid"), cell, cfg)
        fd = (lp - lm) / (2 * step)
        if fd == 0.0 and analytic[idx] == 0.0:
            continue
        worst = max(worst, abs(analytic[idx] - fd) / max(abs(fd), 1e-12))
    ok_grad = worst < 1e-4

    # Ignore elements are loss- and gradient-inert
    bump = np.where(state == IGNORE, 7.0, 0.0)
    ok_inert = (cai_focal_loss(ScoreVolume(z + bump, "sigmoid"), labels, cfg)
                == pytest.approx(cai_focal_loss(ScoreVolume(z, "sigmoid"), labels, cfg), rel=1e-15))
    ok_inert &= bool(np.all(analytic[state == IGNORE] == 0.0))

    # with all weights 1 and no Ignore, equals standard focal loss to 1e-12
    state2 = rng.choice([NEGATIVE, POSITIVE], size=z.shape)
    labels2 = LabelVolume(state=state2.astype(np.uint8),
                          cai_weight=(state2 == POSITIVE).astype(np.float32),
                          box_id=np.where(state2 == POSITIVE, 0, NO_BOX).astype(np.int32))
    got = cai_focal_loss(ScoreVolume(z, "sigmoid"), labels2, cfg)
    p = 1.0 / (1.0 + np.exp(-z))
    y = (state2 == POSITIVE).astype(np.float64)
    ref = float(np.sum(-(y * 0.25 * (1 - p) ** 2 * np.log(p)
                         + (1 - y) * 0.75 * p ** 2 * np.log(1 - p))))
    ok_focal = abs(got - ref) <= 1e-12 * max(1.0, abs(ref))

    report(8, ok_hand and ok_grad and ok_inert and ok_focal,
           f"hand={ok_hand}, fd-grad={ok_grad}, ignore-inert={ok_inert}, "
           f"standard-focal={ok_focal}")


_PIPELINE_PROG = r"""
import hashlib
import numpy as np
from rcbev.geometry import DepthBinSpec
from rcbev.labels import LabelConfig, build_labels, pseudo_point_grid
from rcbev.loss import LossConfig, ScoreVolume, attach_cai_weights, cai_focal_grad, cai_focal_loss
from rcbev.synth import SynthParams, populate_maps, synth_features, synth_scene
from rcbev.transform import BevGridSpec, run_transform

params = SynthParams(seed=99, n_cameras=3, n_boxes=5, image_height=10, image_width=24,
                     depth_bins=DepthBinSpec(1.0, 0.5, 40), channels=16,
                     score_mode="softmax")
scene = populate_maps(synth_scene(params))
feats = synth_features(params, scene)
imgs = [f for f, _ in feats]
deps = [d for _, d in feats]
grid = BevGridSpec(-12.8, -12.8, 0.2, 128, 128)

h = hashlib.sha256()
for img, dep in feats:
    h.update(img.data.tobytes()); h.update(dep.data.tobytes())
for m in scene.surface_depth:
    h.update(np.ascontiguousarray(m).tobytes())
for m in scene.instance_mask:
    h.update(np.ascontiguousarray(m).tobytes())
h.update(run_transform("rc", imgs, deps, scene.cameras, grid).bev.data.tobytes())
h.update(run_transform("lss", imgs, deps, scene.cameras, grid).bev.data.tobytes())

labels = build_labels(scene, 0, LabelConfig(use_lidar=True, o_a=True, o_b=True, o_c=True))
labels = attach_cai_weights(labels, pseudo_point_grid(scene.cameras[0]), scene.boxes)
h.update(labels.state.tobytes()); h.update(labels.cai_weight.tobytes())
h.update(labels.box_id.tobytes())

rng = np.random.default_rng(5)
z = rng.uniform(-3, 3, size=labels.state.shape)
sv = ScoreVolume(z, "sigmoid")
loss = cai_focal_loss(sv, labels, LossConfig())
grad = cai_focal_grad(sv, labels, LossConfig())
h.update(np.float64(loss).tobytes()); h.update(grad.data.tobytes())
print(h.hexdigest())
"""


def test_criterion_9_determinism_across_threads():
    """Full pipeline hash is identical across runs and BLAS thread counts 1/4/8."""
    digests = {}
    for threads in (1, 4, 4, 8):  # 4 twice: across-runs check at a fixed count
        env = dict(os.environ)
        env["OPENBLAS_NUM_THREADS"] = str(threads)
        env["OMP_NUM_THREADS"] = str(threads)
        out = subprocess.run([sys.executable, "-c", _PIPELINE_PROG], env=env,
                             capture_output=True, text=True, timeout=300)
        assert out.returncode == 0, out.stderr
        digests.setdefault(out.stdout.strip(), []).append(threads)
    report(9, len(digests) == 1,
           f"pipeline sha256 {next(iter(digests))[:16]}... identical for thread counts 1/4/4/8")


def test_criterion_10_out_of_scope_documented():
    """Detection-accuracy numbers need full training runs; nothing here claims them."""
    report(10, True, "detection-accuracy metrics (mAP/NDS/...) are out of scope by design; "
                     "the property suites above stand in as acceptance")
