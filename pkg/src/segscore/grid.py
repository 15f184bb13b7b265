"""Pixel-grid data model.

Label maps, connected-component extraction, ground-truth instance
construction, and instance size classification. All types are immutable
after construction and safe to share across workers; every operation is a
pure function of its inputs.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row;
"row-major order" means sorted by ``(y, x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import AnnotationMismatchError, DomainError

DEFAULT_IGNORE_ID = 255

# Instance size buckets by pixel area: small < 32*32, medium < 96*96,
# large otherwise.
SMALL_MAX_AREA = 32 * 32
MEDIUM_MAX_AREA = 96 * 96


class Connectivity(Enum):
    """Neighborhood used when splitting a class mask into components."""

    FOUR = 4
    EIGHT = 8


_STRUCTURES = {
    Connectivity.FOUR: ndimage.generate_binary_structure(2, 1),
    Connectivity.EIGHT: ndimage.generate_binary_structure(2, 2),
}


class SizeClass(Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


def size_class(area: int) -> SizeClass:
    """Bucket an instance area (in pixels) into small/medium/large."""
    if area < 1:
        raise DomainError(f"instance area must be >= 1, got {area}")
    if area < SMALL_MAX_AREA:
        return SizeClass.SMALL
    if area < MEDIUM_MAX_AREA:
        return SizeClass.MEDIUM
    return SizeClass.LARGE


@dataclass(frozen=True, eq=False)
class LabelMap:
    """2-D grid of per-pixel class ids.

    ``ignore_id`` marks pixels excluded from every computation. Class id 0
    is always background. Entries must be non-negative integers; whether
    they fall inside a particular ``num_classes`` range is checked by the
    loaders and evaluators that know that range.
    """

    labels: np.ndarray
    ignore_id: int = DEFAULT_IGNORE_ID

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise DomainError(f"label grid must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DomainError(f"label grid must be at least 1x1, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise DomainError(f"label grid must hold integers, got dtype {arr.dtype}")
        if int(arr.min()) < 0:
            raise DomainError("label grid contains negative class ids")
        if self.ignore_id < 0:
            raise DomainError(f"ignore_id must be non-negative, got {self.ignore_id}")
        # Copy so freezing never affects the caller's array.
        arr = np.array(arr, dtype=np.int32, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def present_classes(self) -> list[int]:
        """Sorted class ids occurring in the map, excluding ignore pixels."""
        return [int(v) for v in np.unique(self.labels) if int(v) != self.ignore_id]


@dataclass(frozen=True)
class Blob:
    """One connected component of same-class pixels."""

    class_id: int
    pixels: frozenset[tuple[int, int]]
    area: int

    def __post_init__(self) -> None:
        if self.area != len(self.pixels) or self.area < 1:
            raise DomainError("blob area must equal its pixel count and be >= 1")


@dataclass(frozen=True)
class GtInstance:
    """One ground-truth instance: a pixel set with a class and a size bucket.

    ``instance_id`` is unique within an image and class. Instances built
    from an instance annotation may be disconnected; instances built by
    connected components never are.
    """

    instance_id: int
    class_id: int
    pixels: frozenset[tuple[int, int]]
    area: int
    size_class: SizeClass

    def __post_init__(self) -> None:
        if self.area != len(self.pixels) or self.area < 1:
            raise DomainError("instance area must equal its pixel count and be >= 1")


@dataclass(frozen=True, eq=False)
class InstanceSet:
    """All ground-truth instances of one image, in deterministic order.

    Instances are ordered by (class_id, first row-major pixel) so that
    downstream tie-breaking is reproducible. ``index_map`` holds, per
    pixel, the index into ``instances`` (-1 where no instance).
    """

    width: int
    height: int
    instances: tuple[GtInstance, ...]
    index_map: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.index_map)
        if arr.shape != (self.height, self.width):
            raise DomainError("index_map shape does not match the declared dimensions")
        arr = np.array(arr, dtype=np.int32, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "index_map", arr)

    def by_class(self) -> dict[int, list[int]]:
        """Instance indices grouped by class id, in construction order."""
        groups: dict[int, list[int]] = {}
        for i, inst in enumerate(self.instances):
            groups.setdefault(inst.class_id, []).append(i)
        return groups


def _label_components(mask: np.ndarray, policy: Connectivity) -> tuple[np.ndarray, int]:
    """Label a boolean mask. Label values carry no ordering guarantee; use
    :func:`_ordered_index_groups` where row-major order matters.
    """
    labeled, count = ndimage.label(mask, structure=_STRUCTURES[policy])
    return labeled, int(count)


def _ordered_index_groups(labeled: np.ndarray, count: int) -> list[np.ndarray]:
    """Flat-index arrays of each component, ordered by first row-major pixel.

    Indices inside each group ascend, so ``group[0]`` is the component's
    first pixel in row-major order.
    """
    if count == 0:
        return []
    flat = labeled.ravel()
    nz = np.flatnonzero(flat)
    labs = flat[nz]
    order = np.argsort(labs, kind="stable")
    sorted_idx = nz[order]
    starts = np.searchsorted(labs[order], np.arange(1, count + 1))
    ends = np.append(starts[1:], labs.size)
    groups = [sorted_idx[s:e] for s, e in zip(starts, ends)]
    groups.sort(key=lambda g: int(g[0]))
    return groups


def _pixels_of(idx: np.ndarray, width: int) -> frozenset[tuple[int, int]]:
    xs = (idx % width).tolist()
    ys = (idx // width).tolist()
    return frozenset(zip(xs, ys))


def connected_components(
    label_map: LabelMap, class_id: int, policy: Connectivity = Connectivity.FOUR
) -> list[Blob]:
    """Maximal connected components of the given class, under ``policy``.

    The returned blobs partition the class's pixels exactly and are ordered
    by each blob's smallest row-major pixel.
    """
    if class_id < 0 or class_id == label_map.ignore_id:
        raise DomainError(f"invalid class id {class_id} (ignore id is {label_map.ignore_id})")
    mask = label_map.labels == class_id
    labeled, count = _label_components(mask, policy)
    return [
        Blob(class_id, _pixels_of(g, label_map.width), int(g.size))
        for g in _ordered_index_groups(labeled, count)
    ]


def build_gt_instances(
    gt: LabelMap,
    instance_map: Optional[np.ndarray] = None,
    policy: Connectivity = Connectivity.FOUR,
) -> InstanceSet:
    """Build the ground-truth instances of one image.

    With ``instance_map`` (non-zero ids mark instances, 0 means none), one
    instance is built per distinct id and may be disconnected; its class is
    taken from ``gt``. Without it, every connected component of every
    non-background class becomes one instance. Ignore pixels never belong
    to an instance.

    Raises :class:`AnnotationMismatchError` when an annotated pixel lies on
    background or ignore ground truth, or when one id spans several classes.
    """
    h, w = gt.height, gt.width
    index_map = np.full((h, w), -1, dtype=np.int32)
    instances: list[GtInstance] = []

    if instance_map is None:
        flat_index = index_map.ravel()
        for c in gt.present_classes():
            if c == 0:
                continue
            labeled, count = _label_components(gt.labels == c, policy)
            for j, g in enumerate(_ordered_index_groups(labeled, count)):
                flat_index[g] = len(instances)
                area = int(g.size)
                instances.append(GtInstance(j, c, _pixels_of(g, w), area, size_class(area)))
    else:
        imap = np.asarray(instance_map)
        if imap.shape != (h, w):
            raise DomainError(
                f"instance map shape {imap.shape} does not match label map shape {(h, w)}"
            )
        if not np.issubdtype(imap.dtype, np.integer):
            raise DomainError(f"instance map must hold integers, got dtype {imap.dtype}")
        if imap.size and int(imap.min()) < 0:
            raise DomainError("instance map contains negative ids")
        flat_gt = gt.labels.ravel()
        flat_imap = imap.ravel()
        entries = []
        for iid in (int(v) for v in np.unique(imap) if v != 0):
            sel = np.flatnonzero(flat_imap == iid)
            classes = np.unique(flat_gt[sel])
            for bad, what in ((0, "background"), (gt.ignore_id, "ignore")):
                if bad in classes:
                    raise AnnotationMismatchError(
                        f"instance id {iid} covers {what} pixels in the class mask"
                    )
            if classes.size != 1:
                raise AnnotationMismatchError(
                    f"instance id {iid} spans classes {[int(c) for c in classes]}"
                )
            entries.append((int(classes[0]), int(sel[0]), iid, sel))
        entries.sort(key=lambda e: (e[0], e[1]))
        flat_index = index_map.ravel()
        for c, _first, iid, sel in entries:
            flat_index[sel] = len(instances)
            area = int(sel.size)
            instances.append(GtInstance(iid, c, _pixels_of(sel, w), area, size_class(area)))

    return InstanceSet(w, h, tuple(instances), index_map)
