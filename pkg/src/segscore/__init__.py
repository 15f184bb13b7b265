"""Instance-aware segmentation scoring and size-balanced loss tooling.

Alongside the conventional dataset-pooled mean IoU, this package scores
each ground-truth instance separately: predictions are split into
connected components, assigned to the instances they overlap (splitting
shared blobs proportionally), and averaged per class so small objects
count as much as large ones. It also generates component-size loss-weight
maps, evaluates the size-weighted / size-balanced losses, audits dataset
size balance, and reproduces synthetic corner-case sweeps.
"""

from .assignment import AssignmentResult, OverlapTable, apportion_counts, assign_image, overlap_table
from .errors import (
    AnnotationMismatchError,
    DomainError,
    FormatError,
    InternalError,
    SegScoreError,
)
from .grid import (
    DEFAULT_IGNORE_ID,
    MEDIUM_MAX_AREA,
    SMALL_MAX_AREA,
    Blob,
    Connectivity,
    GtInstance,
    InstanceSet,
    LabelMap,
    SizeClass,
    build_gt_instances,
    connected_components,
    size_class,
)
from .metrics import (
    BACKGROUND_CLASS,
    ClassStats,
    EvalConfig,
    InstanceRecord,
    Report,
    build_report,
    class_ia_iou,
    conventional_miou,
    evaluate_image,
    ia_miou,
    instance_iou,
    merge_stats,
    merge_stats_maps,
    size_stratified_ia,
)
from .size_loss import (
    DEFAULT_LAMBDA,
    DEFAULT_TAU,
    FisherDiagonal,
    ParamVector,
    ProbVolume,
    WeightMap,
    ewc_penalty,
    fisher_diag,
    l_sb,
    l_sw,
    weight_map,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationMismatchError",
    "AssignmentResult",
    "BACKGROUND_CLASS",
    "Blob",
    "ClassStats",
    "Connectivity",
    "DEFAULT_IGNORE_ID",
    "DEFAULT_LAMBDA",
    "DEFAULT_TAU",
    "DomainError",
    "EvalConfig",
    "FisherDiagonal",
    "FormatError",
    "GtInstance",
    "InstanceRecord",
    "InstanceSet",
    "InternalError",
    "LabelMap",
    "MEDIUM_MAX_AREA",
    "OverlapTable",
    "ParamVector",
    "ProbVolume",
    "Report",
    "SMALL_MAX_AREA",
    "SegScoreError",
    "SizeClass",
    "WeightMap",
    "apportion_counts",
    "assign_image",
    "build_gt_instances",
    "build_report",
    "class_ia_iou",
    "connected_components",
    "conventional_miou",
    "evaluate_image",
    "ewc_penalty",
    "fisher_diag",
    "ia_miou",
    "instance_iou",
    "l_sb",
    "l_sw",
    "merge_stats",
    "merge_stats_maps",
    "overlap_table",
    "size_class",
    "size_stratified_ia",
    "weight_map",
]
