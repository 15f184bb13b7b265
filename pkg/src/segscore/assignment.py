"""Assigning prediction blobs to ground-truth instances.

A prediction blob that overlaps exactly one instance is assigned to it
whole. A blob touching several instances keeps each intersection and
splits its remaining pixels proportionally to the intersection sizes
(largest-remainder rounding, so pixel counts are conserved exactly).
Blobs that overlap no instance of their class count as false positives.

Apportionment operates on pixel counts, not pixel locations: per-instance
IoU depends only on counts, so spatial splits are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Sequence

import numpy as np

from .errors import DomainError, InternalError
from .grid import Blob, Connectivity, InstanceSet, LabelMap, _label_components


@dataclass(frozen=True)
class OverlapTable:
    """Intersection pixel counts between prediction blobs and instances.

    Keys are ``(blob_index, instance_index)``: the blob's position in the
    sequence it was computed from and the instance's index within its
    :class:`InstanceSet`. Absent pairs have an empty intersection.
    """

    entries: dict[tuple[int, int], int]

    def intersection(self, blob_index: int, instance_index: int) -> int:
        return self.entries.get((blob_index, instance_index), 0)


@dataclass(frozen=True)
class AssignmentResult:
    """Per-instance assigned prediction pixels for one class of one image.

    ``instance_indices`` identifies instances by their index within the
    :class:`InstanceSet`; ``assigned`` and ``intersections`` are parallel
    to it. ``unmatched_fp_count`` totals this class's prediction pixels in
    blobs that overlap no instance of the class.
    """

    class_id: int
    instance_indices: tuple[int, ...]
    assigned: tuple[int, ...]
    intersections: tuple[int, ...]
    unmatched_fp_count: int

    def __post_init__(self) -> None:
        if not (len(self.instance_indices) == len(self.assigned) == len(self.intersections)):
            raise DomainError("assignment arrays must have equal lengths")
        if self.unmatched_fp_count < 0:
            raise DomainError("unmatched_fp_count must be non-negative")
        for a, i in zip(self.assigned, self.intersections):
            if i < 0 or a < i:
                raise DomainError("each intersection must satisfy 0 <= intersection <= assigned")


def overlap_table(
    blobs: Sequence[Blob], instances: InstanceSet, class_id: int
) -> OverlapTable:
    """Exact shared-pixel counts between blobs and instances of one class.

    Blobs and instances of other classes are skipped; pairs with an empty
    intersection are omitted.
    """
    entries: dict[tuple[int, int], int] = {}
    members = [
        (gi, inst) for gi, inst in enumerate(instances.instances) if inst.class_id == class_id
    ]
    for b, blob in enumerate(blobs):
        if blob.class_id != class_id:
            continue
        for gi, inst in members:
            shared = len(blob.pixels & inst.pixels)
            if shared:
                entries[(b, gi)] = shared
    return OverlapTable(entries)


def apportion_counts(
    blob_area: int, overlaps: Sequence[tuple[Hashable, int]]
) -> list[tuple[Hashable, int]]:
    """Split a blob's pixel count among the instances it overlaps.

    Each instance keeps its intersection; the ``blob_area - sum(overlaps)``
    leftover pixels are divided proportionally to the intersections using
    largest-remainder rounding. Remainder ties go to the larger
    intersection, then to the earlier entry. The assigned counts sum to
    ``blob_area`` exactly and the result is deterministic.
    """
    if not overlaps:
        raise DomainError("apportionment requires at least one overlap")
    keys = [k for k, _ in overlaps]
    inters = [int(v) for _, v in overlaps]
    if any(v < 0 for v in inters):
        raise DomainError("intersection counts must be non-negative")
    total = sum(inters)
    if total == 0:
        raise DomainError(
            "all intersections are zero; such a blob is an unmatched false positive"
        )
    if total > blob_area:
        raise DomainError(
            f"intersections sum to {total}, exceeding the blob area {blob_area}"
        )

    spare = blob_area - total
    quotas = [Fraction(spare * v, total) for v in inters]
    base = [q.numerator // q.denominator for q in quotas]
    leftover = spare - sum(base)
    by_preference = sorted(
        range(len(inters)), key=lambda i: (base[i] - quotas[i], -inters[i], i)
    )
    extra = [0] * len(inters)
    for i in by_preference[:leftover]:
        extra[i] = 1

    assigned = [inters[i] + base[i] + extra[i] for i in range(len(inters))]
    if sum(assigned) != blob_area:
        raise InternalError("apportionment failed to conserve the blob area")
    return list(zip(keys, assigned))


def assign_image(
    pred: LabelMap, gt_instances: InstanceSet, policy: Connectivity = Connectivity.FOUR
) -> dict[int, AssignmentResult]:
    """Assign every prediction blob of every foreground class of one image.

    Covers the union of classes present in the prediction (excluding
    background and ignore) and classes with ground-truth instances. Blobs
    overlapping several instances are split with :func:`apportion_counts`;
    several blobs on one instance accumulate additively; instances without
    any overlapping blob receive (0, 0).

    For each class, assigned counts plus ``unmatched_fp_count`` equal the
    class's predicted pixel count as given (conservation). Callers that
    want ignored ground-truth regions excluded must mask ``pred`` first.
    """
    if (pred.height, pred.width) != (gt_instances.height, gt_instances.width):
        raise DomainError(
            f"prediction shape {pred.shape} does not match instance grid shape "
            f"{(gt_instances.height, gt_instances.width)}"
        )
    by_class = gt_instances.by_class()
    classes = sorted(
        {c for c in pred.present_classes() if c != 0} | set(by_class.keys())
    )

    results: dict[int, AssignmentResult] = {}
    for c in classes:
        members = by_class.get(c, [])
        pred_mask = pred.labels == c
        total_pred = int(pred_mask.sum())
        if not members:
            results[c] = AssignmentResult(c, (), (), (), total_pred)
            continue

        assigned_acc = np.zeros(len(members), dtype=np.int64)
        inter_acc = np.zeros(len(members), dtype=np.int64)
        fp = 0
        if total_pred:
            labeled, count = _label_components(pred_mask, policy)
            # Local grid: 0 = no instance of this class, j+1 = members[j].
            lut = np.zeros(len(gt_instances.instances) + 1, dtype=np.int32)
            for j, gi in enumerate(members):
                lut[gi + 1] = j + 1
            local = lut[gt_instances.index_map + 1]
            ni = len(members)
            joint = np.bincount(
                (labeled.astype(np.int64) * (ni + 1) + local).ravel(),
                minlength=(count + 1) * (ni + 1),
            ).reshape(count + 1, ni + 1)
            inters_mat = joint[1:, 1:]
            blob_areas = joint[1:].sum(axis=1)
            touched_counts = (inters_mat > 0).sum(axis=1)

            # Blobs overlapping zero or one instance never need splitting;
            # handle them in bulk and keep the apportionment loop for the
            # (rare) blobs shared between instances.
            fp = int(blob_areas[touched_counts == 0].sum())
            single = np.flatnonzero(touched_counts == 1)
            if single.size:
                target = np.argmax(inters_mat[single] > 0, axis=1)
                np.add.at(assigned_acc, target, blob_areas[single])
                np.add.at(inter_acc, target, inters_mat[single, target])
            for b in np.flatnonzero(touched_counts >= 2):
                inters = inters_mat[b]
                touched = np.flatnonzero(inters)
                shares = apportion_counts(
                    int(blob_areas[b]), [(int(j), int(inters[j])) for j in touched]
                )
                for j, share in shares:
                    assigned_acc[j] += share
                    inter_acc[j] += int(inters[j])

        if int(assigned_acc.sum()) + fp != total_pred:
            raise InternalError(
                f"class {c}: assigned counts plus false positives do not equal "
                f"the predicted pixel count {total_pred}"
            )
        results[c] = AssignmentResult(
            c,
            tuple(members),
            tuple(int(v) for v in assigned_acc),
            tuple(int(v) for v in inter_acc),
            fp,
        )
    return results
