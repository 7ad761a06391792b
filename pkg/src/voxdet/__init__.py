"""Deterministic pre/post-processing toolkit for anchor-free LiDAR 3D detection."""

from .errors import InputError, InternalError, VoxdetError
from .geometry import (
    Box3D,
    ClassId,
    PolygonBEV,
    box_corners_bev,
    iou_3d_axis_aligned,
    iou_bev_rotated,
    point_in_box,
    points_in_box,
    wrap_angle,
)
from .voxelizer import SparseVoxels, VoxelGrid, quantize, voxel_index, voxelize, voxelize_serial
from .ingest import convert_range_records, densify, filter_range
from .targets import (
    HeadConfig,
    TargetSet,
    decode_iou_target,
    draw_gaussian,
    encode_iou_target,
    encode_targets,
    gaussian_radius,
)
from .losses import LossWeights, focal_loss, l1_masked, smooth_l1, total_loss
from .postprocess import (
    Detection,
    HeadMaps,
    NmsConfig,
    RescoreConfig,
    class_nms,
    decode_boxes,
    head_maps_from_targets,
    rescore,
    rescore_detections,
    topk_peaks,
)
from .evaluator import (
    EvalConfig,
    EvalReport,
    MatchResult,
    aph,
    average_precision,
    evaluate,
    evaluate_scenes,
    match_detections,
)
from .augment import (
    GlobalTransformSpec,
    GtDatabase,
    Scene,
    apply_global_transform,
    build_gt_database,
    instance_noise,
    sample_gt,
)
from .model_utils import LrScheduleSpec, fold_batchnorm, lr_schedule, swa_average
from .config import PipelineConfig, load_config, preset
from .harness import SynthSpec, bench, run_pipeline, synth_scene, write_corpus

__version__ = "0.1.0"
