"""Pseudo-label filtering by confidence score and image-level class activations.

Stage one keeps predictions whose score clears ``tau_cls``. Stage two consults
a multi-label image classifier's activation for the predicted class: the
filtering variant requires both stages to agree (AND), the mining variant
keeps a prediction when either stage fires (OR). The image classifier is
simulated by a noisy oracle over the record's hidden ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import ImageRecord, Prediction

_MODES = ("one_stage", "two_stage_filtering", "two_stage_mining")

# Activation band for classes the oracle reports as present.
_HIGH_BAND = (0.6, 1.0)

_P_CLAMP = 1e-7


@dataclass(frozen=True)
class ImageLevelLabel:
    """Multi-label activations in [0, 1], one per class, for one image."""

    image_id: int | str
    activations: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(not 0.0 <= a <= 1.0 for a in self.activations):
            raise ValueError("activations must lie in [0, 1]")

    def activation(self, class_id: int) -> float:
        return self.activations[class_id - 1]


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds and variant selection for pseudo-label filtering."""

    tau_cls: float = 0.7
    tau_ml: float = 0.2
    mode: str = "two_stage_filtering"

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau_cls <= 1.0:
            raise ValueError(f"tau_cls must be in [0, 1], got {self.tau_cls}")
        if not 0.0 <= self.tau_ml <= 1.0:
            raise ValueError(f"tau_ml must be in [0, 1], got {self.tau_ml}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class OracleNoise:
    """Error rates of the simulated image-level classifier.

    ``fn_rate`` is the chance a present class activates in the low band,
    ``fp_rate`` the chance an absent class activates in the high band.
    ``tau_ml`` bounds the low band from above.
    """

    fn_rate: float = 0.1
    fp_rate: float = 0.1
    tau_ml: float = 0.2

    def __post_init__(self) -> None:
        for name in ("fn_rate", "fp_rate", "tau_ml"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


def two_stage_filter(
    preds: Sequence[Prediction],
    image_label: ImageLevelLabel | None,
    config: FilterConfig,
) -> list[Prediction]:
    """Score-threshold filtering, optionally AND-gated by class activation.

    ``one_stage`` keeps predictions with score >= tau_cls. ``two_stage_filtering``
    additionally requires the predicted class's activation >= tau_ml (the
    image label is then mandatory). Prediction order is preserved.
    """
    if config.mode == "two_stage_mining":
        raise ValueError("mining variant is handled by two_stage_mining")
    if config.mode == "one_stage":
        return [p for p in preds if p.score >= config.tau_cls]
    if image_label is None:
        raise ValueError("two-stage filtering needs an image-level label")
    return [
        p
        for p in preds
        if p.score >= config.tau_cls
        and image_label.activation(p.class_id) >= config.tau_ml
    ]


def two_stage_mining(
    preds: Sequence[Prediction],
    image_label: ImageLevelLabel,
    config: FilterConfig,
) -> list[Prediction]:
    """OR variant: keep a prediction when either stage fires.

    A prediction survives when its score clears tau_cls or its class
    activation clears tau_ml. Supersets the one-stage output.
    """
    return [
        p
        for p in preds
        if p.score >= config.tau_cls
        or image_label.activation(p.class_id) >= config.tau_ml
    ]


def oracle_image_labels(
    record: ImageRecord,
    noise: OracleNoise,
    rng: np.random.Generator,
    n_classes: int,
) -> ImageLevelLabel:
    """Simulate image-level activations from the record's ground truth.

    Present classes draw from the high band [0.6, 1.0] unless a false negative
    fires; absent classes draw from the low band [0, tau_ml) unless a false
    positive fires.
    """
    present = {inst.class_id for inst in record.ground_truth}
    activations = []
    for class_id in range(1, n_classes + 1):
        if class_id in present:
            high = rng.random() >= noise.fn_rate
        else:
            high = rng.random() < noise.fp_rate
        if high:
            activations.append(float(rng.uniform(*_HIGH_BAND)))
        else:
            activations.append(float(rng.uniform(0.0, noise.tau_ml)))
    return ImageLevelLabel(image_id=record.id, activations=tuple(activations))


def focal_bce(p: float, y: int, gamma: float = 2.0) -> float:
    """Focal binary cross-entropy with hard-example up-weighting.

    -y * (1-p)^gamma * ln(p) - (1-y) * p^gamma * ln(1-p), with p clamped to
    [1e-7, 1 - 1e-7]. gamma = 0 recovers plain binary cross-entropy.
    """
    if y not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {y}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    p = min(max(float(p), _P_CLAMP), 1.0 - _P_CLAMP)
    if y == 1:
        return -((1.0 - p) ** gamma) * math.log(p)
    return -(p**gamma) * math.log(1.0 - p)
