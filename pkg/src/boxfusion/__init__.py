"""boxfusion: post-processing and ensembling toolkit for object-detection outputs.

Fusion kernels (WBF, NMS, Soft-NMS, NMW), Otsu-based confidence filtering,
slice-grid planning with coordinate aggregation, a precision/recall/F1/mAP
evaluator, a calibrated synthetic detector simulator, and a config-driven
pipeline tying them together.
"""

__version__ = "0.1.0"

from .errors import (
    BoxFusionError,
    ConfigError,
    DegenerateDistributionError,
    ParseError,
    PipelineError,
    ValidationError,
)
from .geometry import Box, Detection, area, iou, translate
from .fusion import (
    DEFAULT_IOU_THRESHOLD,
    BoxCluster,
    FusionParams,
    apply_source_weights,
    fuse,
    fuse_images,
    fuse_nms,
    fuse_nmw,
    fuse_soft_nms,
    fuse_traced,
    fuse_wbf,
    group_clusters,
)
from .thresholding import (
    DEFAULT_BIN_COUNT,
    OtsuResult,
    ScoreHistogram,
    build_histogram,
    filter_by_threshold,
    otsu_threshold,
)
from .slicing import (
    DEFAULT_OVERLAP_RATIO,
    SlicePlan,
    aggregate_slices,
    default_slice_size,
    plan_slices,
    project_to_slices,
    remap_to_global,
)
from .evaluation import (
    DEFAULT_MATCH_IOU,
    ClassCounts,
    ClassMetrics,
    EvalReport,
    GroundTruthBox,
    MatchResult,
    PRF,
    average_precision,
    evaluate,
    match_detections,
    mean_average_precision,
    precision_recall_curve,
    precision_recall_f1,
)
from .io import (
    DetectionFile,
    DetectionRecord,
    EvalSpec,
    GroundTruthFile,
    PipelineConfig,
    SourceSpec,
    ThresholdSpec,
    parse_config,
    parse_detections,
    parse_ground_truth,
    write_detections,
    write_ground_truth,
    write_sliced_detections,
)
from .simulator import (
    ClassRates,
    DetectorProfile,
    SceneParams,
    ScoreModel,
    SyntheticScene,
    derive_seed,
    generate_dataset,
    generate_scene,
    load_profile,
    simulate_detector,
    simulate_detectors,
)
from .pipeline import (
    STAGES,
    ComparisonRow,
    PipelineRun,
    RunSummary,
    StageRecord,
    compare_runs,
    format_comparison,
    load_run,
    run_pipeline,
)
