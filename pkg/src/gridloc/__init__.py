"""Grid-point localization core: heatmap encoding and decoding with
grid-point-specific representation regions, NMS-once post-processing,
cross-image positive sampling, grid-head MAC accounting and a synthetic
evaluation harness."""

__version__ = "0.1.0"

from .decoding import (
    DecodedPoint,
    DecodeOptions,
    Heatmap,
    IncompleteGrid,
    NoPeak,
    decode_detection,
    decode_point,
    fuse_heatmaps,
    points_to_box,
)
from .encoding import SupervisionTarget, coverage_rate, encode_targets
from .evaluation import Detection, EvalResult, GroundTruth, average_precision, evaluate, match_detections
from .geometry import (
    Box,
    GridIndex,
    GridSpec,
    OutOfRegion,
    RepresentationMode,
    cell_to_point,
    extend_region,
    grid_point_locations,
    iou,
    point_to_cell,
    representation_region,
)
from .headshape import ConstraintError, build_original_head, build_plus_head, flops, validate_groups
from .nms import PipelineConfig, ScoredBox, count_pairwise_iou_evals, greedy_nms, pipeline_original, pipeline_plus
from .sampler import SampleBudget, SampleMode, batch_count_variance, sample_positives
from .simulator import NoiseModel, Scene, generate_scenes, render_heatmaps, run_experiment
