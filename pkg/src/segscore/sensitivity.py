"""Synthetic corner-case generators and metric-behavior sweeps.

Two controlled experiments contrast the pooled and instance-aware scores:

* growth sweeps place one large and one or more small ground-truth squares
  on a canvas and grow a prediction step by step inside chosen targets,
  with the others held fully covered or fully uncovered;
* removal sweeps start from a perfect prediction and erase ground-truth
  instances from it one at a time, smallest first.

Both emit per-step rows with the pooled mean IoU, the instance-aware mean,
and the watched class's two scores.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DomainError, FormatError
from .grid import Connectivity, InstanceSet, LabelMap, build_gt_instances
from .metrics import EvalConfig, Report, build_report, evaluate_image

SWEEP_CSV_HEADER = ("step", "miou", "ia_miou", "class_tilde", "class_conventional")

_CASES = {
    # case -> (large square grows, fixed squares fully covered)
    "A": (True, False),
    "B": (False, True),
    "C": (True, True),
    "D": (False, False),
}


@dataclass(frozen=True)
class CornerScenario:
    """Geometry and growth schedule for one corner-case sweep."""

    case: str
    canvas: int = 200
    large_side: int = 100
    small_side: int = 10
    small_count: int = 1
    steps: int = 10
    class_id: int = 1

    def __post_init__(self) -> None:
        if self.case not in _CASES:
            raise DomainError(f"unknown corner case {self.case!r}; expected one of A, B, C, D")
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        if self.small_count < 1:
            raise DomainError(f"small_count must be >= 1, got {self.small_count}")
        if self.class_id < 1:
            raise DomainError("the scenario class must be a foreground class")


@dataclass(frozen=True)
class SweepRow:
    step: int
    miou: float
    ia_miou: float
    class_tilde: Optional[float]
    class_conventional: Optional[float]


def _square_layout(scenario: CornerScenario) -> list[tuple[int, int, int]]:
    """(x0, y0, side) for the large square then each small square.

    The large square sits at the top-left margin; the small squares form a
    column at the right edge. Everything must fit inside the canvas with
    at least a one-pixel gap between squares.
    """
    margin = max(1, scenario.canvas // 20)
    squares = [(margin, margin, scenario.large_side)]
    small_x = scenario.canvas - margin - scenario.small_side
    gap = max(1, scenario.small_side)
    for i in range(scenario.small_count):
        squares.append((small_x, margin + i * (scenario.small_side + gap), scenario.small_side))

    for x0, y0, side in squares:
        if x0 < 0 or y0 < 0 or x0 + side > scenario.canvas or y0 + side > scenario.canvas:
            raise DomainError(
                f"infeasible geometry: a {side}x{side} square at ({x0}, {y0}) leaves the "
                f"{scenario.canvas}x{scenario.canvas} canvas"
            )
    if margin + scenario.large_side >= small_x:
        raise DomainError(
            "infeasible geometry: the large square reaches the small-square column"
        )
    return squares


def _paint_square(arr: np.ndarray, x0: int, y0: int, side: int, value: int) -> None:
    arr[y0 : y0 + side, x0 : x0 + side] = value


def _paint_partial(arr: np.ndarray, x0: int, y0: int, side: int, covered: int, value: int) -> None:
    """Fill the first ``covered`` pixels of a square in row-major order."""
    full_rows, rest = divmod(covered, side)
    if full_rows:
        arr[y0 : y0 + full_rows, x0 : x0 + side] = value
    if rest:
        arr[y0 + full_rows, x0 : x0 + rest] = value


def gen_corner_case(
    case: str,
    canvas: int = 200,
    large_side: int = 100,
    small_side: int = 10,
    small_count: int = 1,
    steps: int = 10,
    class_id: int = 1,
) -> list[tuple[LabelMap, LabelMap, np.ndarray]]:
    """Generate per-step (prediction, ground truth, instance map) frames.

    Cases A and C grow the large square's prediction (small squares fixed
    uncovered / covered); cases B and D grow the small squares (large fixed
    covered / uncovered). At step k the growing squares are filled
    row-major from their top-left corner to a fraction k/steps of their
    area (rounded to the nearest pixel), so the final step covers them
    completely.
    """
    scenario = CornerScenario(case, canvas, large_side, small_side, small_count, steps, class_id)
    squares = _square_layout(scenario)
    large_grows, fixed_covered = _CASES[case]

    gt_arr = np.zeros((canvas, canvas), dtype=np.int32)
    inst_arr = np.zeros((canvas, canvas), dtype=np.int32)
    for i, (x0, y0, side) in enumerate(squares):
        _paint_square(gt_arr, x0, y0, side, class_id)
        _paint_square(inst_arr, x0, y0, side, i + 1)
    gt = LabelMap(gt_arr)

    growing = squares[:1] if large_grows else squares[1:]
    fixed = squares[1:] if large_grows else squares[:1]

    frames = []
    for k in range(steps + 1):
        pred_arr = np.zeros((canvas, canvas), dtype=np.int32)
        if fixed_covered:
            for x0, y0, side in fixed:
                _paint_square(pred_arr, x0, y0, side, class_id)
        for x0, y0, side in growing:
            area = side * side
            covered = (2 * area * k + steps) // (2 * steps)  # round(area*k/steps)
            _paint_partial(pred_arr, x0, y0, side, covered, class_id)
        frames.append((LabelMap(pred_arr), gt, inst_arr.copy()))
    return frames


def _row_from_report(step: int, report: Report, class_id: int) -> SweepRow:
    return SweepRow(
        step=step,
        miou=report.miou,
        ia_miou=report.ia_miou,
        class_tilde=report.per_class_tilde.get(class_id),
        class_conventional=report.per_class_conventional.get(class_id),
    )


def run_growth_sweep(
    scenario: CornerScenario, policy: Connectivity = Connectivity.FOUR
) -> list[SweepRow]:
    """Evaluate every growth step of a corner-case scenario."""
    config = EvalConfig(num_classes=scenario.class_id + 1, connectivity=policy)
    frames = gen_corner_case(
        scenario.case,
        scenario.canvas,
        scenario.large_side,
        scenario.small_side,
        scenario.small_count,
        scenario.steps,
        scenario.class_id,
    )
    rows = []
    for step, (pred, gt, inst_map) in enumerate(frames):
        stats = evaluate_image(
            pred, gt, config, instance_map=inst_map, image_ref=f"step{step}"
        )
        rows.append(_row_from_report(step, build_report(stats, config), scenario.class_id))
    return rows


def gen_removal_scene(
    canvas: int = 300,
    sides: Sequence[int] = (4, 8, 16, 30, 50, 80),
    class_id: int = 1,
    policy: Connectivity = Connectivity.FOUR,
) -> tuple[LabelMap, InstanceSet]:
    """A row of disjoint squares of the given sides, smallest to largest."""
    if not sides or any(s < 1 for s in sides):
        raise DomainError("sides must be a non-empty sequence of positive integers")
    if class_id < 1:
        raise DomainError("the scene class must be a foreground class")
    margin, gap = 10, 2
    arr = np.zeros((canvas, canvas), dtype=np.int32)
    x = margin
    for side in sides:
        if x + side > canvas - margin or margin + side > canvas - margin:
            raise DomainError(
                f"infeasible geometry: squares {tuple(sides)} do not fit a "
                f"{canvas}x{canvas} canvas"
            )
        _paint_square(arr, x, margin, side, class_id)
        x += side + gap
    gt = LabelMap(arr)
    return gt, build_gt_instances(gt, None, policy)


def run_removal_sweep(
    gt: LabelMap,
    instances: InstanceSet,
    class_id: int,
    policy: Connectivity = Connectivity.FOUR,
) -> list[SweepRow]:
    """Erase the class's instances from a perfect prediction, smallest first.

    Step k evaluates the prediction with the k smallest instances (area
    ties broken by construction order) reset to background; step 0 is the
    perfect prediction.
    """
    targets = [
        (i, inst) for i, inst in enumerate(instances.instances) if inst.class_id == class_id
    ]
    if not targets:
        raise DomainError(f"no instances of class {class_id} in the scene")
    order = sorted(targets, key=lambda t: (t[1].area, t[0]))
    config = EvalConfig(
        num_classes=max(max(gt.present_classes()), 1) + 1, connectivity=policy
    )

    rows = []
    pred_arr = gt.labels.copy()
    for k in range(len(order) + 1):
        if k:
            idx, _inst = order[k - 1]
            pred_arr[instances.index_map == idx] = 0
        stats = evaluate_image(
            LabelMap(pred_arr, gt.ignore_id),
            gt,
            config,
            instances=instances,
            image_ref=f"removed{k}",
        )
        rows.append(_row_from_report(k, build_report(stats, config), class_id))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: Union[str, Path]) -> None:
    """Write sweep rows as CSV with six-decimal numbers (blank = undefined)."""

    def cell(v: Optional[float]) -> str:
        return "" if v is None else f"{v:.6f}"

    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SWEEP_CSV_HEADER)
            for r in rows:
                writer.writerow(
                    [str(r.step), cell(r.miou), cell(r.ia_miou),
                     cell(r.class_tilde), cell(r.class_conventional)]
                )
    except OSError as exc:
        raise FormatError(f"{path}: cannot write ({exc})") from None
