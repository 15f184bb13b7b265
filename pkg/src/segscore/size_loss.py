"""Size-balanced loss mathematics.

Per-pixel weight maps derived from pseudo-mask component sizes, the
size-weighted cross-entropy value, Fisher-diagonal estimation, and the
quadratic parameter-anchoring penalty. No training loop lives here: these
are pure functions an external trainer can call, plus exportable weight
maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainError
from .grid import Connectivity, LabelMap, _label_components

DEFAULT_TAU = 5.0
DEFAULT_LAMBDA = 500.0


@dataclass(frozen=True, eq=False)
class WeightMap:
    """Per-pixel loss weights: background 1, foreground in [1, tau], ignore 0."""

    weights: np.ndarray
    tau: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.weights, dtype=np.float32)
        if arr.ndim != 2 or arr.size == 0:
            raise DomainError(f"weight grid must be a non-empty 2-D array, got shape {arr.shape}")
        if self.tau < 1.0:
            raise DomainError(f"tau must be >= 1, got {self.tau}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("weights must be finite")
        nonzero = arr[arr != 0.0]
        if nonzero.size and (nonzero.min() < 1.0 or nonzero.max() > self.tau * (1 + 1e-6)):
            raise DomainError("nonzero weights must lie in [1, tau]")
        arr = np.array(arr, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)

    @property
    def height(self) -> int:
        return int(self.weights.shape[0])

    @property
    def width(self) -> int:
        return int(self.weights.shape[1])


@dataclass(frozen=True, eq=False)
class ProbVolume:
    """Per-pixel class probabilities, shape (height, width, num_classes)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise DomainError(
                f"probabilities must have shape (H, W, C) with C >= 1, got {arr.shape}"
            )
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError("probabilities must lie in [0, 1]")
        sums = arr.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise DomainError("per-pixel probabilities must sum to 1 within 1e-6")
        arr = np.array(arr, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.values.shape[2])


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Ordered, finite model parameters (or gradients)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise DomainError("parameter values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class FisherDiagonal:
    """Per-parameter importance estimates (mean squared gradients)."""

    values: np.ndarray
    sample_count: int = 1

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)) or (arr.size and arr.min() < 0.0):
            raise DomainError("Fisher diagonal entries must be finite and non-negative")
        if self.sample_count < 0:
            raise DomainError("sample_count must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)


def weight_map(
    pseudo_mask: LabelMap,
    tau: float = DEFAULT_TAU,
    policy: Connectivity = Connectivity.FOUR,
) -> WeightMap:
    """Per-pixel weights from a pseudo mask's component sizes.

    A pixel in component n of class c gets
    ``min(tau, total_class_pixels / component_area)``, computed per image
    and per class, so relatively small components are up-weighted and the
    clamp keeps weights bounded. Background pixels get 1, ignore pixels 0.
    """
    if tau < 1.0:
        raise DomainError(f"tau must be >= 1, got {tau}")
    labels = pseudo_mask.labels
    out = np.ones(labels.shape, dtype=np.float64)
    for c in pseudo_mask.present_classes():
        if c == 0:
            continue
        labeled, count = _label_components(labels == c, policy)
        if count == 0:
            continue
        areas = np.bincount(labeled.ravel())[1:]
        total = int(areas.sum())
        lut = np.minimum(tau, total / areas)
        fg = labeled > 0
        out[fg] = lut[labeled[fg] - 1]
    out[labels == pseudo_mask.ignore_id] = 0.0
    return WeightMap(out.astype(np.float32), float(tau))


def l_sw(probs: ProbVolume, labels: LabelMap, weights: WeightMap) -> float:
    """Size-weighted cross-entropy.

    Averages ``-w * log p(labeled class)`` over the full image area; ignore
    pixels contribute nothing to the sum but stay in the ``H*W`` normalizer.
    """
    shape = (labels.height, labels.width)
    if (probs.height, probs.width) != shape or (weights.height, weights.width) != shape:
        raise DomainError(
            f"dimension mismatch: probs {(probs.height, probs.width)}, "
            f"labels {shape}, weights {(weights.height, weights.width)}"
        )
    lab = labels.labels
    valid = lab != labels.ignore_id
    if bool(valid.any()) and int(lab[valid].max()) >= probs.num_classes:
        raise DomainError(
            f"label id {int(lab[valid].max())} outside the probability volume's "
            f"{probs.num_classes} classes"
        )
    idx = np.where(valid, lab, 0)
    p = np.take_along_axis(probs.values, idx[..., None], axis=2)[..., 0]
    if bool(np.any(valid & (p <= 0.0))):
        raise DomainError("zero probability at a labeled pixel")
    w = weights.weights.astype(np.float64)
    contrib = np.where(valid, w * np.log(np.where(valid, p, 1.0)), 0.0)
    return float(-contrib.sum() / lab.size)


def fisher_diag(
    gradient_samples: Sequence[Union[ParamVector, np.ndarray, Sequence[float]]]
) -> FisherDiagonal:
    """Mean squared gradient per parameter over the given samples."""
    if len(gradient_samples) == 0:
        raise DomainError("at least one gradient sample is required")
    rows = [
        s.values if isinstance(s, ParamVector) else np.asarray(s, dtype=np.float64).reshape(-1)
        for s in gradient_samples
    ]
    lengths = {r.size for r in rows}
    if len(lengths) != 1:
        raise DomainError(f"gradient samples have mismatched lengths {sorted(lengths)}")
    stacked = np.stack(rows)
    return FisherDiagonal((stacked * stacked).mean(axis=0), len(rows))


def ewc_penalty(
    theta: ParamVector,
    theta_star: ParamVector,
    fisher: FisherDiagonal,
    lam: float = DEFAULT_LAMBDA,
) -> float:
    """Quadratic penalty anchoring ``theta`` to ``theta_star``.

    ``sum_i (lam / 2) * F_i * (theta_i - theta_star_i)**2``; larger ``lam``
    suppresses drift from the previous task's optimum more strongly.
    """
    if lam < 0.0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if not len(theta) == len(theta_star) == len(fisher):
        raise DomainError(
            f"length mismatch: theta {len(theta)}, theta_star {len(theta_star)}, "
            f"fisher {len(fisher)}"
        )
    delta = theta.values - theta_star.values
    return float(0.5 * lam * np.dot(fisher.values, delta * delta))


def l_sb(
    probs: ProbVolume,
    labels: LabelMap,
    weights: WeightMap,
    theta: ParamVector,
    theta_star: ParamVector,
    fisher: FisherDiagonal,
    lam: float = DEFAULT_LAMBDA,
) -> float:
    """Size-balanced loss: size-weighted cross-entropy plus the anchor penalty."""
    return l_sw(probs, labels, weights) + ewc_penalty(theta, theta_star, fisher, lam)
