"""Dataset and artifact I/O.

Mask conventions follow VOC: the stored 8-bit pixel value IS the class id,
with 255 meaning "ignore" (no colormap inference; palette order is
authoritative). Instance masks are 16-bit single-channel images whose
nonzero values are image-scoped instance ids. Weight maps and parameter
vectors use raw little-endian float32 sidecar files so round trips are
bit-exact.

Every malformed input raises a typed :class:`FormatError` naming the file
(and, where it helps, the offending value and location).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DomainError, FormatError, SegScoreError
from .grid import Connectivity, LabelMap, SizeClass, build_gt_instances
from .metrics import Report, size_thresholds
from .size_loss import ParamVector, WeightMap

_MASK_IGNORE_VALUE = 255  # on-disk ignore convention


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    gt_mask_path: Path
    pred_mask_path: Optional[Path] = None
    instance_mask_path: Optional[Path] = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    num_classes: int
    ignore_id: int = 255

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise FormatError(f"manifest num_classes must be >= 2, got {self.num_classes}")
        ids = [e.image_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupe = next(i for i in ids if ids.count(i) > 1)
            raise FormatError(f"manifest contains duplicate image_id {dupe!r}")


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Read a dataset manifest from JSON.

    Schema: ``{"entries": [{"image_id", "gt_mask_path", "pred_mask_path",
    "instance_mask_path"?}, ...], "num_classes", "ignore_id"?}``. Relative
    mask paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict) or "entries" not in raw or "num_classes" not in raw:
        raise FormatError(f"{path}: manifest must be an object with 'entries' and 'num_classes'")
    base = path.parent

    def resolve(value: object, field: str, image_id: str) -> Path:
        if not isinstance(value, str) or not value:
            raise FormatError(f"{path}: entry {image_id!r} has an empty or invalid {field}")
        p = Path(value)
        return p if p.is_absolute() else base / p

    entries = []
    for i, e in enumerate(raw["entries"]):
        if not isinstance(e, dict) or "image_id" not in e or "gt_mask_path" not in e:
            raise FormatError(f"{path}: entry #{i} must carry image_id and gt_mask_path")
        image_id = str(e["image_id"])
        entries.append(
            ManifestEntry(
                image_id=image_id,
                gt_mask_path=resolve(e["gt_mask_path"], "gt_mask_path", image_id),
                pred_mask_path=(
                    resolve(e["pred_mask_path"], "pred_mask_path", image_id)
                    if e.get("pred_mask_path")
                    else None
                ),
                instance_mask_path=(
                    resolve(e["instance_mask_path"], "instance_mask_path", image_id)
                    if e.get("instance_mask_path")
                    else None
                ),
            )
        )
    try:
        num_classes = int(raw["num_classes"])
        ignore_id = int(raw.get("ignore_id", 255))
    except (TypeError, ValueError):
        raise FormatError(f"{path}: num_classes and ignore_id must be integers") from None
    return DatasetManifest(tuple(entries), num_classes, ignore_id)


def _open_image(path: Union[str, Path]) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"{path}: unreadable image ({exc})") from None


def load_class_mask(
    path: Union[str, Path], num_classes: int, ignore_id: int = 255
) -> LabelMap:
    """Decode an 8-bit grayscale or palette-indexed class mask.

    The stored index is the class id; the value 255 maps to ``ignore_id``.
    Any other index outside ``[0, num_classes)`` is a format error.
    """
    img = _open_image(path)
    if img.mode not in ("L", "P"):
        raise FormatError(
            f"{path}: unsupported mask encoding (mode {img.mode}); "
            "need an 8-bit grayscale or palette image"
        )
    arr = np.asarray(img, dtype=np.int32)
    bad = (arr >= num_classes) & (arr != _MASK_IGNORE_VALUE)
    if bool(bad.any()):
        y, x = np.argwhere(bad)[0]
        raise FormatError(
            f"{path}: class id {int(arr[y, x])} at (x={int(x)}, y={int(y)}) "
            f"outside [0, {num_classes})"
        )
    if ignore_id != _MASK_IGNORE_VALUE:
        arr = np.where(arr == _MASK_IGNORE_VALUE, ignore_id, arr)
    return LabelMap(arr, ignore_id)


def write_class_mask(label_map: LabelMap, path: Union[str, Path]) -> None:
    """Write a class mask as an 8-bit grayscale PNG (ignore stored as 255)."""
    arr = label_map.labels
    fg_max = int(arr[arr != label_map.ignore_id].max()) if (arr != label_map.ignore_id).any() else 0
    if fg_max > 254:
        raise FormatError(f"{path}: class id {fg_max} does not fit an 8-bit mask")
    out = np.where(arr == label_map.ignore_id, _MASK_IGNORE_VALUE, arr).astype(np.uint8)
    Image.fromarray(out).save(path)


def load_instance_mask(path: Union[str, Path]) -> np.ndarray:
    """Decode a 16-bit single-channel instance-id mask (0 = no instance)."""
    img = _open_image(path)
    if img.mode not in ("I;16", "I"):
        raise FormatError(
            f"{path}: wrong bit depth (mode {img.mode}); need a 16-bit single-channel image"
        )
    arr = np.asarray(img)
    if arr.size and (int(arr.min()) < 0 or int(arr.max()) > 0xFFFF):
        raise FormatError(f"{path}: instance ids exceed the 16-bit range")
    return np.ascontiguousarray(arr.astype(np.int32))


def write_instance_mask(instance_map: np.ndarray, path: Union[str, Path]) -> None:
    """Write an instance-id grid as a 16-bit PNG."""
    arr = np.asarray(instance_map)
    if arr.ndim != 2 or (arr.size and (int(arr.min()) < 0 or int(arr.max()) > 0xFFFF)):
        raise FormatError(f"{path}: instance map must be 2-D with ids in [0, 65535]")
    Image.fromarray(arr.astype(np.uint16)).save(path)


@dataclass(frozen=True)
class DistributionReport:
    """Instance counts per class and size, with per-size totals and shares."""

    per_class: dict[int, dict[SizeClass, int]]
    totals: dict[SizeClass, int]
    percentages: dict[SizeClass, float]
    total_instances: int


def distribution_histogram(
    manifest: DatasetManifest, policy: Connectivity = Connectivity.FOUR
) -> DistributionReport:
    """Count ground-truth instances by class and size across a dataset.

    Instances come from instance masks where available, otherwise from
    connected components. Load failures are collected and reported
    together rather than aborting at the first bad entry.
    """
    counts: dict[int, dict[SizeClass, int]] = {}
    failures: list[str] = []
    for entry in manifest.entries:
        try:
            gt = load_class_mask(entry.gt_mask_path, manifest.num_classes, manifest.ignore_id)
            imap = (
                load_instance_mask(entry.instance_mask_path)
                if entry.instance_mask_path
                else None
            )
            instances = build_gt_instances(gt, imap, policy)
        except SegScoreError as exc:
            failures.append(f"{entry.image_id}: {exc}")
            continue
        for inst in instances.instances:
            per = counts.setdefault(inst.class_id, {s: 0 for s in SizeClass})
            per[inst.size_class] += 1
    if failures:
        raise FormatError(
            f"failed to process {len(failures)} manifest entr"
            f"{'y' if len(failures) == 1 else 'ies'}:\n  " + "\n  ".join(failures)
        )
    totals = {s: sum(per[s] for per in counts.values()) for s in SizeClass}
    total = sum(totals.values())
    percentages = {s: (100.0 * totals[s] / total if total else 0.0) for s in SizeClass}
    return DistributionReport(
        {c: dict(per) for c, per in sorted(counts.items())}, totals, percentages, total
    )


# --- deterministic JSON/CSV emission ------------------------------------
# Reports must be byte-identical across runs and worker counts, and floats
# are serialized with exactly six decimal places, so emission is explicit
# instead of going through json.dumps' float repr.


def _emit_json(value: object, indent: int = 0) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6f}"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(k))}: {_emit_json(v, indent + 1)}'
            for k, v in value.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{pad}  {_emit_json(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    raise FormatError(f"cannot serialize value of type {type(value).__name__}")


def _fmt_cell(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def report_to_jsonable(report: Report) -> dict:
    """The plain-dict form of a report, as serialized to JSON."""
    return {
        "config": {
            "connectivity": report.config.connectivity.value,
            "ignore_id": report.config.ignore_id,
            "num_classes": report.config.num_classes,
            "size_thresholds": size_thresholds(),
        },
        "per_class": {
            str(c): {
                "conventional_iou": report.per_class_conventional[c],
                "tilde_iou": report.per_class_tilde[c],
            }
            for c in report.class_ids
        },
        "miou": report.miou,
        "ia_miou": report.ia_miou,
        "ia_small": report.ia_small,
        "ia_medium": report.ia_medium,
        "ia_large": report.ia_large,
        "instance_counts": {
            str(c): {s.value: report.instance_counts[c][s] for s in SizeClass}
            for c in report.class_ids
        },
    }


def write_report(report: Report, path: Union[str, Path], format: str = "json") -> None:
    """Serialize a report to JSON or CSV.

    Numbers carry six decimal places; undefined values (e.g. a size
    stratum with no instances) become JSON null / an empty CSV cell, never
    zero.
    """
    path = Path(path)
    if format == "json":
        text = _emit_json(report_to_jsonable(report)) + "\n"
        _write_text(path, text)
    elif format == "csv":
        rows = [["key", "conventional_iou", "tilde_iou", "instances_small",
                 "instances_medium", "instances_large"]]
        for c in report.class_ids:
            counts = report.instance_counts[c]
            rows.append([
                f"class_{c}",
                _fmt_cell(report.per_class_conventional[c]),
                _fmt_cell(report.per_class_tilde[c]),
                str(counts[SizeClass.SMALL]),
                str(counts[SizeClass.MEDIUM]),
                str(counts[SizeClass.LARGE]),
            ])
        for key, value in (
            ("miou", report.miou),
            ("ia_miou", report.ia_miou),
            ("ia_small", report.ia_small),
            ("ia_medium", report.ia_medium),
            ("ia_large", report.ia_large),
        ):
            rows.append([key, _fmt_cell(value), "", "", "", ""])
        _write_csv(path, rows)
    else:
        raise DomainError(f"unknown report format {format!r}")


def write_distribution_report(
    report: DistributionReport, path: Union[str, Path], format: str = "json"
) -> None:
    """Serialize a dataset distribution audit to JSON or CSV."""
    path = Path(path)
    if format == "json":
        doc = {
            "per_class": {
                str(c): {s.value: per[s] for s in SizeClass}
                for c, per in report.per_class.items()
            },
            "totals": {s.value: report.totals[s] for s in SizeClass},
            "percentages": {s.value: report.percentages[s] for s in SizeClass},
            "total_instances": report.total_instances,
        }
        _write_text(path, _emit_json(doc) + "\n")
    elif format == "csv":
        rows = [["key", "small", "medium", "large"]]
        for c, per in report.per_class.items():
            rows.append([f"class_{c}"] + [str(per[s]) for s in SizeClass])
        rows.append(["totals"] + [str(report.totals[s]) for s in SizeClass])
        rows.append(["percentages"] + [f"{report.percentages[s]:.6f}" for s in SizeClass])
        _write_csv(path, rows)
    else:
        raise DomainError(f"unknown report format {format!r}")


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise FormatError(f"{path}: cannot write ({exc})") from None


def _write_csv(path: Path, rows: list[list[str]]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise FormatError(f"{path}: cannot write ({exc})") from None


# --- raw float32 sidecar formats -----------------------------------------

_WMAP_HEADER = struct.Struct("<II")  # width, height
_PVEC_HEADER = struct.Struct("<I")  # element count


def write_weight_map(
    weight_map: WeightMap,
    path: Union[str, Path],
    viz_path: Optional[Union[str, Path]] = None,
) -> None:
    """Write a weight map: 8-byte (width, height) header + row-major f32 LE.

    ``viz_path`` optionally writes an 8-bit grayscale rendering scaled so
    the largest weight maps to 255.
    """
    path = Path(path)
    payload = _WMAP_HEADER.pack(weight_map.width, weight_map.height)
    payload += np.ascontiguousarray(weight_map.weights, dtype="<f4").tobytes()
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise FormatError(f"{path}: cannot write ({exc})") from None
    if viz_path is not None:
        w = weight_map.weights.astype(np.float64)
        peak = float(w.max()) or 1.0
        Image.fromarray(np.round(w / peak * 255.0).astype(np.uint8)).save(viz_path)


def load_weight_map(path: Union[str, Path]) -> WeightMap:
    """Read a weight map written by :func:`write_weight_map`, bit-exactly.

    The clamp bound is not stored; it is reconstructed as the largest
    weight present (any bound at or above that is consistent).
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc})") from None
    if len(data) < _WMAP_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    width, height = _WMAP_HEADER.unpack_from(data)
    expected = _WMAP_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for a {width}x{height} map, got {len(data)}"
        )
    if width < 1 or height < 1:
        raise FormatError(f"{path}: invalid dimensions {width}x{height}")
    arr = np.frombuffer(data, dtype="<f4", offset=_WMAP_HEADER.size).reshape(height, width)
    tau = max(1.0, float(arr.max()))
    return WeightMap(arr, tau)


def write_param_vector(vector: ParamVector, path: Union[str, Path]) -> None:
    """Write a parameter vector: 4-byte count header + f32 LE payload."""
    path = Path(path)
    payload = _PVEC_HEADER.pack(len(vector))
    payload += vector.values.astype("<f4").tobytes()
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise FormatError(f"{path}: cannot write ({exc})") from None


def load_param_vector(path: Union[str, Path]) -> ParamVector:
    """Read a parameter vector written by :func:`write_param_vector`."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc})") from None
    if len(data) < _PVEC_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    (count,) = _PVEC_HEADER.unpack_from(data)
    expected = _PVEC_HEADER.size + 4 * count
    if len(data) != expected:
        raise FormatError(
            f"{path}: length header says {count} floats ({expected} bytes), got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=_PVEC_HEADER.size)
    return ParamVector(values.astype(np.float64))
