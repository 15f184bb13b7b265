"""Segmentation metrics: conventional mIoU and its instance-aware variant.

Conventional per-class IoU pools intersection/union pixel counts over the
whole dataset. The instance-aware score computes one IoU per ground-truth
instance (after blob assignment), averages them within each class, and
averages the per-class means. Background has no instances and enters the
instance-aware average as a single dataset-pooled segment.

All counts are exact integers; floats appear only at final divisions, and
averages use ``math.fsum``, so results are independent of image order,
merge order, and worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .assignment import assign_image
from .errors import DomainError
from .grid import (
    MEDIUM_MAX_AREA,
    SMALL_MAX_AREA,
    Connectivity,
    InstanceSet,
    LabelMap,
    SizeClass,
    build_gt_instances,
)

BACKGROUND_CLASS = 0


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings echoed into every report."""

    num_classes: int
    ignore_id: int = 255
    connectivity: Connectivity = Connectivity.FOUR

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise DomainError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.ignore_id < self.num_classes:
            raise DomainError(
                f"ignore_id {self.ignore_id} collides with the class range "
                f"[0, {self.num_classes})"
            )


@dataclass(frozen=True)
class InstanceRecord:
    """One evaluated ground-truth instance; the atom the IA average pools."""

    class_id: int
    size_class: SizeClass
    iou: float
    image_ref: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.iou <= 1.0:
            raise DomainError(f"instance IoU must lie in [0, 1], got {self.iou}")


@dataclass(frozen=True)
class ClassStats:
    """Mergeable per-class accumulator: instance records + confusion counts.

    ``tp``/``fp``/``fn`` are dataset-pooled pixel counts for conventional
    IoU. For background they double as the pooled intersection
    (``tp``) and union (``tp + fp + fn``).
    """

    class_id: int
    config: EvalConfig
    records: tuple[InstanceRecord, ...] = ()
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise DomainError("confusion counts must be non-negative")

    @property
    def denominator(self) -> int:
        return self.tp + self.fp + self.fn

    @property
    def conventional_iou(self) -> Optional[float]:
        if self.denominator == 0:
            return None
        return self.tp / self.denominator


@dataclass(frozen=True)
class Report:
    """Final scores for one evaluation run."""

    config: EvalConfig
    per_class_conventional: dict[int, float]
    per_class_tilde: dict[int, Optional[float]]
    miou: float
    ia_miou: float
    ia_small: Optional[float]
    ia_medium: Optional[float]
    ia_large: Optional[float]
    instance_counts: dict[int, dict[SizeClass, int]]

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.per_class_conventional)


def instance_iou(intersection: int, assigned_pred: int, gt_area: int) -> float:
    """IoU of one instance from its assigned prediction-pixel counts."""
    if gt_area < 1:
        raise DomainError(f"gt_area must be >= 1, got {gt_area}")
    if not 0 <= intersection <= min(assigned_pred, gt_area):
        raise DomainError(
            f"need 0 <= intersection <= min(assigned_pred, gt_area); got "
            f"({intersection}, {assigned_pred}, {gt_area})"
        )
    return intersection / (assigned_pred + gt_area - intersection)


def class_ia_iou(records: Sequence[InstanceRecord]) -> float:
    """Mean instance IoU of one class."""
    if not records:
        raise DomainError("a class with no instance records has no instance-aware IoU")
    return math.fsum(r.iou for r in records) / len(records)


def ia_miou(per_class_values: Sequence[float]) -> float:
    """Mean of per-class instance-aware IoUs (background counts as a class)."""
    if not per_class_values:
        raise DomainError("instance-aware mIoU requires at least one class")
    return math.fsum(per_class_values) / len(per_class_values)


def size_stratified_ia(
    records: Sequence[InstanceRecord], size: SizeClass
) -> Optional[float]:
    """Instance-aware score restricted to one size bucket.

    Per class, the mean IoU over that class's records of the given size;
    classes without such records are excluded. Returns None when no class
    qualifies (absence is not a zero).
    """
    by_class: dict[int, list[float]] = {}
    for r in records:
        if r.size_class == size:
            by_class.setdefault(r.class_id, []).append(r.iou)
    if not by_class:
        return None
    means = [math.fsum(v) / len(v) for _, v in sorted(by_class.items())]
    return math.fsum(means) / len(means)


def conventional_miou(
    stats: Mapping[int, ClassStats]
) -> tuple[float, dict[int, float]]:
    """Dataset-pooled per-class IoUs and their mean.

    Classes whose pooled denominator is zero (never seen in ground truth or
    prediction) are excluded from both outputs.
    """
    per_class = {
        c: s.conventional_iou
        for c, s in sorted(stats.items())
        if s.denominator > 0
    }
    if not per_class:
        raise DomainError("no class has any evaluated pixels")
    return math.fsum(per_class.values()) / len(per_class), per_class


def merge_stats(a: ClassStats, b: ClassStats) -> ClassStats:
    """Combine two accumulators of the same class and configuration."""
    if a.class_id != b.class_id:
        raise DomainError(f"cannot merge stats of classes {a.class_id} and {b.class_id}")
    if a.config != b.config:
        raise DomainError("cannot merge stats produced under different configurations")
    return ClassStats(
        a.class_id,
        a.config,
        a.records + b.records,
        a.tp + b.tp,
        a.fp + b.fp,
        a.fn + b.fn,
    )


def merge_stats_maps(
    a: Mapping[int, ClassStats], b: Mapping[int, ClassStats]
) -> dict[int, ClassStats]:
    """Merge two per-class accumulator maps (union of classes)."""
    merged = dict(a)
    for c, s in b.items():
        merged[c] = merge_stats(merged[c], s) if c in merged else s
    return merged


def _validate_map(m: LabelMap, config: EvalConfig, role: str) -> None:
    if m.ignore_id != config.ignore_id:
        raise DomainError(
            f"{role} map ignore id {m.ignore_id} does not match config {config.ignore_id}"
        )
    bad = [c for c in m.present_classes() if c >= config.num_classes]
    if bad:
        raise DomainError(
            f"{role} map contains class id {bad[0]} outside [0, {config.num_classes})"
        )


def evaluate_image(
    pred: LabelMap,
    gt: LabelMap,
    config: EvalConfig,
    *,
    instance_map: Optional[np.ndarray] = None,
    instances: Optional[InstanceSet] = None,
    image_ref: str = "",
) -> dict[int, ClassStats]:
    """Evaluate one image into per-class accumulators.

    Prediction pixels over ignored ground truth are excluded entirely, as
    are ignore-valued prediction pixels (they belong to no class).
    ``instances`` may be supplied prebuilt; otherwise they are derived from
    ``gt`` (and ``instance_map`` when given).
    """
    if pred.shape != gt.shape:
        raise DomainError(f"prediction shape {pred.shape} != ground-truth shape {gt.shape}")
    _validate_map(pred, config, "prediction")
    _validate_map(gt, config, "ground-truth")
    if instances is None:
        instances = build_gt_instances(gt, instance_map, config.connectivity)
    else:
        if instance_map is not None:
            raise DomainError("pass either a prebuilt InstanceSet or an instance map, not both")
        if (instances.height, instances.width) != gt.shape:
            raise DomainError("prebuilt instances do not match the ground-truth dimensions")
        bad = [i.class_id for i in instances.instances if i.class_id >= config.num_classes]
        if bad:
            raise DomainError(
                f"prebuilt instances contain class id {bad[0]} outside [0, {config.num_classes})"
            )

    ignored = gt.labels == config.ignore_id
    pred_labels = pred.labels
    if bool(ignored.any()):
        pred_labels = pred.labels.copy()
        pred_labels[ignored] = config.ignore_id
    pred_eval = LabelMap(pred_labels, config.ignore_id)

    records: dict[int, list[InstanceRecord]] = {}
    for c, result in assign_image(pred_eval, instances, config.connectivity).items():
        for gi, assigned, inter in zip(
            result.instance_indices, result.assigned, result.intersections
        ):
            inst = instances.instances[gi]
            records.setdefault(c, []).append(
                InstanceRecord(c, inst.size_class, instance_iou(inter, assigned, inst.area), image_ref)
            )

    # Confusion counts over valid pixels; ignore-valued predictions fall
    # into a sentinel column so they count as misses, not as a class.
    C = config.num_classes
    valid = ~ignored
    g = gt.labels[valid].astype(np.int64)
    p = pred.labels[valid].astype(np.int64)
    p[p == config.ignore_id] = C
    cm = np.bincount(g * (C + 1) + p, minlength=C * (C + 1)).reshape(C, C + 1)
    tp = np.diag(cm[:, :C])
    gt_count = cm.sum(axis=1)
    pred_count = cm[:, :C].sum(axis=0)

    stats: dict[int, ClassStats] = {}
    for c in range(C):
        recs = tuple(records.get(c, ()))
        t, f_p, f_n = int(tp[c]), int(pred_count[c] - tp[c]), int(gt_count[c] - tp[c])
        if t + f_p + f_n == 0 and not recs:
            continue
        stats[c] = ClassStats(c, config, recs, t, f_p, f_n)
    return stats


def build_report(stats: Mapping[int, ClassStats], config: EvalConfig) -> Report:
    """Compute every reported score from merged per-class accumulators."""
    for s in stats.values():
        if s.config != config:
            raise DomainError("accumulators were produced under a different configuration")

    miou, per_class_conv = conventional_miou(stats)

    per_class_tilde: dict[int, Optional[float]] = {}
    ia_values: list[float] = []
    for c in sorted(per_class_conv):
        if c == BACKGROUND_CLASS:
            per_class_tilde[c] = per_class_conv[c]
            ia_values.append(per_class_conv[c])
        elif stats[c].records:
            tilde = class_ia_iou(stats[c].records)
            per_class_tilde[c] = tilde
            ia_values.append(tilde)
        else:
            # Predicted-only class: false positives are charged to the
            # background segment and the confusion counts; no instance mean.
            per_class_tilde[c] = None

    all_records = [r for c in sorted(per_class_conv) for r in stats[c].records]
    counts = {
        c: {size: 0 for size in SizeClass} for c in sorted(per_class_conv)
    }
    for r in all_records:
        counts[r.class_id][r.size_class] += 1

    return Report(
        config=config,
        per_class_conventional=per_class_conv,
        per_class_tilde=per_class_tilde,
        miou=miou,
        ia_miou=ia_miou(ia_values),
        ia_small=size_stratified_ia(all_records, SizeClass.SMALL),
        ia_medium=size_stratified_ia(all_records, SizeClass.MEDIUM),
        ia_large=size_stratified_ia(all_records, SizeClass.LARGE),
        instance_counts=counts,
    )


def size_thresholds() -> dict[str, int]:
    """The area thresholds echoed into report configs."""
    return {"small_max": SMALL_MAX_AREA, "medium_max": MEDIUM_MAX_AREA}
