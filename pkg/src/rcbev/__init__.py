"""Radial-Cartesian BEV sampling, in-box depth labels, and centroid-aware loss."""

from .geometry import (
    BEHIND_CAMERA_EPS,
    CameraRig,
    DepthBinSpec,
    OrientedBox,
    bev_to_radial_coords,
    face_distances,
    point_in_box,
    project_to_image,
    ray_box_intersect,
    unproject_pixel,
)
from .transform import (
    AllocationReport,
    BevGridSpec,
    FeatureTensor,
    bilinear_sample,
    camera_coverage,
    cartesian_bev,
    lss_pool,
    radial_bev,
    radial_bev_oracle,
    run_transform,
    upsample_2x,
    vacancy_ratio,
    voxel_sampling,
)
from .labels import (
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
from .loss import (
    LossConfig,
    ScoreVolume,
    attach_cai_weights,
    cai_focal_grad,
    cai_focal_loss,
    cai_weight,
    ce_depth_loss,
)
from .synth import (
    SynthParams,
    analytic_masks,
    populate_maps,
    raycast_depth_map,
    synth_features,
    synth_scene,
)
from .errors import ConfigurationError

__version__ = "0.1.0"
