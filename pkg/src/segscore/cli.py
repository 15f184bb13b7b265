"""Command-line entry point.

Subcommands: ``evaluate`` (score predictions against ground truth),
``gen-weights`` (per-image loss-weight maps), ``analyze-dist`` (dataset
size/class balance audit), ``corner-sim`` / ``removal-sim`` (synthetic
metric-behavior sweeps), and ``ewc-penalty`` (parameter-anchor penalty
from saved vectors).

Exit codes: 0 success, 2 usage error, 3 input/format error, 4 internal
invariant violation. Per-image work runs on a process pool sized by
``--workers`` (or the ``SEGSCORE_WORKERS`` environment variable); results
are merged in manifest order, so outputs are byte-identical for any
worker count.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial, reduce
from pathlib import Path
from typing import Callable, Optional, Sequence, TypeVar

from .dataset_io import (
    DatasetManifest,
    ManifestEntry,
    distribution_histogram,
    load_class_mask,
    load_instance_mask,
    load_manifest,
    load_param_vector,
    write_distribution_report,
    write_report,
    write_weight_map,
)
from .errors import DomainError, FormatError, InternalError
from .grid import Connectivity, SizeClass
from .metrics import (
    ClassStats,
    EvalConfig,
    Report,
    build_report,
    evaluate_image,
    merge_stats_maps,
)
from .sensitivity import (
    CornerScenario,
    gen_removal_scene,
    run_growth_sweep,
    run_removal_sweep,
    write_sweep_csv,
)
from .size_loss import DEFAULT_LAMBDA, DEFAULT_TAU, FisherDiagonal, ewc_penalty, weight_map

T = TypeVar("T")
U = TypeVar("U")


def _tau_arg(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid tau {text!r}") from None
    if value < 1.0:
        raise argparse.ArgumentTypeError(f"tau must be >= 1, got {value}")
    return value


def _lambda_arg(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid lambda {text!r}") from None
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"lambda must be >= 0, got {value}")
    return value


def _workers_arg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid worker count {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"worker count must be >= 1, got {value}")
    return value


def _sides_arg(text: str) -> tuple[int, ...]:
    try:
        sides = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid side list {text!r}") from None
    if not sides or any(s < 1 for s in sides):
        raise argparse.ArgumentTypeError("sides must be positive integers")
    return sides


def _resolve_workers(explicit: Optional[int]) -> int:
    if explicit is not None:
        return explicit
    env = os.environ.get("SEGSCORE_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise DomainError(f"SEGSCORE_WORKERS must be an integer, got {env!r}") from None
        if value < 1:
            raise DomainError(f"SEGSCORE_WORKERS must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def _parallel_map(fn: Callable[[T], U], items: Sequence[T], workers: int) -> list[U]:
    """Order-preserving map, inline for one worker or a small workload."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _evaluate_entry(entry: ManifestEntry, config: EvalConfig) -> dict[int, ClassStats]:
    if entry.pred_mask_path is None:
        raise FormatError(f"entry {entry.image_id!r} has no pred_mask_path to evaluate")
    gt = load_class_mask(entry.gt_mask_path, config.num_classes, config.ignore_id)
    pred = load_class_mask(entry.pred_mask_path, config.num_classes, config.ignore_id)
    instance_map = (
        load_instance_mask(entry.instance_mask_path) if entry.instance_mask_path else None
    )
    return evaluate_image(
        pred, gt, config, instance_map=instance_map, image_ref=entry.image_id
    )


def _gen_weights_entry(
    entry: ManifestEntry,
    config: EvalConfig,
    tau: float,
    out_dir: str,
    viz_dir: Optional[str],
) -> str:
    mask = load_class_mask(entry.gt_mask_path, config.num_classes, config.ignore_id)
    wmap = weight_map(mask, tau, config.connectivity)
    out_path = Path(out_dir) / f"{entry.image_id}.wmap"
    viz_path = Path(viz_dir) / f"{entry.image_id}.png" if viz_dir else None
    write_weight_map(wmap, out_path, viz_path)
    return str(out_path)


def _load_config(args: argparse.Namespace, manifest: DatasetManifest) -> EvalConfig:
    num_classes = args.num_classes if args.num_classes is not None else manifest.num_classes
    ignore_id = args.ignore_id if args.ignore_id is not None else manifest.ignore_id
    return EvalConfig(num_classes, ignore_id, Connectivity(args.connectivity))


def _format_stratum(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _print_summary(report: Report) -> None:
    print(
        f"mIoU {report.miou:.4f} IA-mIoU {report.ia_miou:.4f} "
        f"IA_S {_format_stratum(report.ia_small)} "
        f"IA_M {_format_stratum(report.ia_medium)} "
        f"IA_L {_format_stratum(report.ia_large)}"
    )


def _cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    if not manifest.entries:
        raise FormatError(f"{args.manifest}: manifest has no entries")
    config = _load_config(args, manifest)
    workers = _resolve_workers(args.workers)
    per_image = _parallel_map(
        partial(_evaluate_entry, config=config), manifest.entries, workers
    )
    stats = reduce(merge_stats_maps, per_image, {})
    report = build_report(stats, config)
    write_report(report, args.out, args.format)
    _print_summary(report)
    return 0


def _cmd_gen_weights(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    if not manifest.entries:
        raise FormatError(f"{args.manifest}: manifest has no entries")
    config = _load_config(args, manifest)
    workers = _resolve_workers(args.workers)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.viz_dir:
        args.viz_dir.mkdir(parents=True, exist_ok=True)
    written = _parallel_map(
        partial(
            _gen_weights_entry,
            config=config,
            tau=args.tau,
            out_dir=str(args.out_dir),
            viz_dir=str(args.viz_dir) if args.viz_dir else None,
        ),
        manifest.entries,
        workers,
    )
    print(f"wrote {len(written)} weight maps to {args.out_dir}")
    return 0


def _cmd_analyze_dist(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    report = distribution_histogram(manifest, Connectivity(args.connectivity))
    write_distribution_report(report, args.out, args.format)
    if report.total_instances:
        shares = " ".join(
            f"{size.value} {report.totals[size]} ({report.percentages[size]:.1f}%)"
            for size in SizeClass
        )
    else:
        shares = "none"
    print(f"instances {report.total_instances}: {shares}")
    return 0


def _cmd_corner_sim(args: argparse.Namespace) -> int:
    scenario = CornerScenario(
        case=args.case,
        canvas=args.canvas,
        large_side=args.large_side,
        small_side=args.small_side,
        small_count=args.small_count,
        steps=args.steps,
    )
    rows = run_growth_sweep(scenario, Connectivity(args.connectivity))
    write_sweep_csv(rows, args.out)
    print(f"wrote {len(rows)} steps to {args.out}")
    return 0


def _cmd_removal_sim(args: argparse.Namespace) -> int:
    gt, instances = gen_removal_scene(
        args.canvas, args.sides, policy=Connectivity(args.connectivity)
    )
    rows = run_removal_sweep(gt, instances, 1, Connectivity(args.connectivity))
    write_sweep_csv(rows, args.out)
    print(f"wrote {len(rows)} steps to {args.out}")
    return 0


def _cmd_ewc_penalty(args: argparse.Namespace) -> int:
    theta = load_param_vector(args.theta)
    theta_star = load_param_vector(args.theta_star)
    fisher = FisherDiagonal(load_param_vector(args.fisher).values)
    print(float(ewc_penalty(theta, theta_star, fisher, args.lam)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segscore",
        description=(
            "Instance-aware segmentation scoring, size-balanced loss weighting, "
            "and dataset balance audits."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_connectivity(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--connectivity", type=int, choices=(4, 8), default=4,
            help="pixel neighborhood for components (default: %(default)s)",
        )

    def add_manifest_common(p: argparse.ArgumentParser, workers: bool = True) -> None:
        p.add_argument("--manifest", type=Path, required=True, help="dataset manifest JSON")
        add_connectivity(p)
        p.add_argument(
            "--ignore-id", type=int, default=None,
            help="override the manifest's ignore id (default: manifest value, 255)",
        )
        p.add_argument(
            "--num-classes", type=int, default=None,
            help="override the manifest's class count (default: manifest value)",
        )
        if workers:
            p.add_argument(
                "--workers", type=_workers_arg, default=None,
                help="process pool size (default: SEGSCORE_WORKERS or all cores)",
            )

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    add_manifest_common(p)
    p.add_argument("--out", type=Path, required=True, help="report output path")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="report format (default: %(default)s)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("gen-weights", help="write per-image loss-weight maps")
    add_manifest_common(p)
    p.add_argument("--out-dir", type=Path, required=True, help="directory for .wmap files")
    p.add_argument("--tau", type=_tau_arg, default=DEFAULT_TAU,
                   help="weight clamp (default: %(default)s)")
    p.add_argument("--viz-dir", type=Path, default=None,
                   help="also write 8-bit weight visualizations here")
    p.set_defaults(func=_cmd_gen_weights)

    p = sub.add_parser("analyze-dist", help="audit instance counts by class and size")
    add_manifest_common(p, workers=False)
    p.add_argument("--out", type=Path, required=True, help="distribution report path")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="report format (default: %(default)s)")
    p.set_defaults(func=_cmd_analyze_dist)

    p = sub.add_parser("corner-sim", help="growth sweep on a synthetic two-square scene")
    p.add_argument("--case", choices=("A", "B", "C", "D"), required=True,
                   help="which squares grow and whether the fixed ones are covered")
    p.add_argument("--out", type=Path, required=True, help="sweep CSV path")
    p.add_argument("--steps", type=int, default=10, help="growth steps (default: %(default)s)")
    p.add_argument("--canvas", type=int, default=200, help="canvas side (default: %(default)s)")
    p.add_argument("--large-side", type=int, default=100,
                   help="large square side (default: %(default)s)")
    p.add_argument("--small-side", type=int, default=10,
                   help="small square side (default: %(default)s)")
    p.add_argument("--small-count", type=int, default=1,
                   help="number of small squares (default: %(default)s)")
    add_connectivity(p)
    p.set_defaults(func=_cmd_corner_sim)

    p = sub.add_parser("removal-sim", help="instance-removal sweep from a perfect prediction")
    p.add_argument("--out", type=Path, required=True, help="sweep CSV path")
    p.add_argument("--canvas", type=int, default=300, help="canvas side (default: %(default)s)")
    p.add_argument("--sides", type=_sides_arg, default=(4, 8, 16, 30, 50, 80),
                   help="comma-separated square sides (default: 4,8,16,30,50,80)")
    add_connectivity(p)
    p.set_defaults(func=_cmd_removal_sim)

    p = sub.add_parser("ewc-penalty", help="parameter-anchor penalty from saved vectors")
    p.add_argument("--theta", type=Path, required=True, help="current parameter vector file")
    p.add_argument("--theta-star", type=Path, required=True,
                   help="anchor parameter vector file")
    p.add_argument("--fisher", type=Path, required=True, help="Fisher diagonal file")
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default=DEFAULT_LAMBDA,
                   help="penalty strength (default: %(default)s)")
    p.set_defaults(func=_cmd_ewc_penalty)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DomainError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
