"""Parametric synthetic detector and its teacher-student update rules.

There is no network here: a small parameter vector stands in for detector
weights. Detection quality is simulated directly from those parameters
(per-class recall, localization noise, class confusion, partial boxes,
background false positives), training improves them through saturating
updates, and the teacher tracks the student by exponential moving average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import BBox, ImageRecord, Prediction

# Decay floors: confusion and partial-box rates never fall below these.
CONFUSION_FLOOR = 0.01
PARTIAL_FLOOR = 0.01

_MODES = ("supervised", "unsup_cls_only", "unsup_selective")
_LOG_CLAMP = 1e-12
_MIN_SIDE = 1e-3


@dataclass(frozen=True)
class DetectorParams:
    """Snapshot of detector skill.

    recall_skill: per-class detection probability in [0, 1].
    confusion_rate: chance an emitted box carries a wrong class.
    loc_skill: localization quality in [0, 1]; 1 means exact boxes.
    partial_rate: chance an emitted box is truncated to a sub-rectangle.
    fp_rate: expected background false positives per image.
    confidence_sharpness: slope of the skill-to-score logistic.
    """

    recall_skill: tuple[float, ...]
    confusion_rate: float
    loc_skill: float
    partial_rate: float
    fp_rate: float
    confidence_sharpness: float

    def __post_init__(self) -> None:
        if not self.recall_skill:
            raise ValueError("recall_skill needs at least one class")
        for name in ("confusion_rate", "loc_skill", "partial_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if any(not 0.0 <= s <= 1.0 for s in self.recall_skill):
            raise ValueError("recall_skill values must be in [0, 1]")
        if self.fp_rate < 0.0:
            raise ValueError(f"fp_rate must be non-negative, got {self.fp_rate}")
        if self.confidence_sharpness <= 0.0:
            raise ValueError("confidence_sharpness must be positive")

    @property
    def n_classes(self) -> int:
        return len(self.recall_skill)


@dataclass(frozen=True)
class TrainingTarget:
    """One proposal-level training target with the student's predicted scores.

    ``true_class_prob`` is the probability the student puts on the assigned
    class (the background class for background targets). ``box_delta`` holds
    normalized regression residuals for foreground targets.
    """

    foreground: bool
    objectness: float
    true_class_prob: float
    box_delta: tuple[float, float, float, float] | None = None
    from_cropbank: bool = False


@dataclass(frozen=True)
class LossBreakdown:
    """The four detector loss terms and their sum."""

    rpn_cls: float
    rpn_reg: float
    roi_cls: float
    roi_reg: float
    total: float


def ema_update(
    teacher: DetectorParams, student: DetectorParams, alpha: float
) -> DetectorParams:
    """Blend every parameter: alpha * teacher + (1 - alpha) * student."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if teacher.n_classes != student.n_classes:
        raise ValueError("teacher and student must cover the same classes")

    def blend(t: float, s: float) -> float:
        return alpha * t + (1.0 - alpha) * s

    recall = tuple(
        min(1.0, max(0.0, blend(t, s)))
        for t, s in zip(teacher.recall_skill, student.recall_skill)
    )
    return DetectorParams(
        recall_skill=recall,
        confusion_rate=min(1.0, max(0.0, blend(teacher.confusion_rate, student.confusion_rate))),
        loc_skill=min(1.0, max(0.0, blend(teacher.loc_skill, student.loc_skill))),
        partial_rate=min(1.0, max(0.0, blend(teacher.partial_rate, student.partial_rate))),
        fp_rate=max(0.0, blend(teacher.fp_rate, student.fp_rate)),
        confidence_sharpness=max(
            1e-9, blend(teacher.confidence_sharpness, student.confidence_sharpness)
        ),
    )


def _draw_weighted(
    rng: np.random.Generator, weights: np.ndarray, exclude: int | None = None
) -> int:
    """Class id drawn by weight, optionally excluding one class."""
    w = weights.astype(float).copy()
    if exclude is not None:
        w[exclude - 1] = 0.0
    total = w.sum()
    if total <= 0.0:
        w = np.ones_like(w)
        if exclude is not None and w.size > 1:
            w[exclude - 1] = 0.0
        total = w.sum()
    return int(rng.choice(w.size, p=w / total)) + 1


def synth_detect(
    params: DetectorParams,
    record: ImageRecord,
    rng: np.random.Generator,
    class_weights: Sequence[float] | None = None,
) -> list[Prediction]:
    """Simulate detector output on one image from its hidden ground truth.

    Each ground-truth instance of class k is emitted with probability
    recall_skill[k]. Emitted boxes are perturbed by zero-mean noise with
    per-coordinate scale (1 - loc_skill) * 0.1 * min(w, h), truncated with
    probability partial_rate to a random sub-rectangle covering 40-70% of the
    instance area, and flipped to a frequency-weighted wrong class with
    probability confusion_rate. Scores follow a logistic in the true class's
    skill plus uniform +-0.1 noise, clamped to [0, 1]. Poisson(fp_rate)
    background false positives are added with frequency-weighted classes and
    scores uniform in [0.3, 0.8]. Boxes are clipped to the image.

    ``class_weights`` supplies the class frequencies used for confusion
    targets and false-positive classes; uniform when omitted.
    """
    k = params.n_classes
    if class_weights is None:
        weights = np.ones(k, dtype=float)
    else:
        weights = np.asarray(class_weights, dtype=float)
        if weights.shape != (k,):
            raise ValueError("class_weights must have one entry per class")
        if (weights < 0).any():
            raise ValueError("class_weights must be non-negative")

    width, height = record.width, record.height
    preds: list[Prediction] = []
    for inst in record.ground_truth:
        skill = params.recall_skill[inst.class_id - 1]
        if rng.random() >= skill:
            continue
        box = inst.bbox
        noise_scale = (1.0 - params.loc_skill) * 0.1 * min(box.w, box.h)
        dx, dy, dw, dh = rng.normal(0.0, 1.0, size=4) * noise_scale
        x, y = box.x + dx, box.y + dy
        w = max(box.w + dw, _MIN_SIDE)
        h = max(box.h + dh, _MIN_SIDE)
        if rng.random() < params.partial_rate:
            area_frac = rng.uniform(0.4, 0.7)
            frac_w = rng.uniform(area_frac, 1.0)
            frac_h = area_frac / frac_w
            new_w, new_h = w * frac_w, h * frac_h
            x = x + rng.uniform(0.0, w - new_w)
            y = y + rng.uniform(0.0, h - new_h)
            w, h = new_w, new_h
        class_id = inst.class_id
        if rng.random() < params.confusion_rate and k > 1:
            class_id = _draw_weighted(rng, weights, exclude=inst.class_id)
        score_base = 1.0 / (1.0 + math.exp(-params.confidence_sharpness * (skill - 0.5)))
        score = min(1.0, max(0.0, score_base + rng.uniform(-0.1, 0.1)))
        clipped = _clip_box(x, y, w, h, width, height)
        preds.append(Prediction(class_id=class_id, bbox=clipped, score=float(score)))

    for _ in range(rng.poisson(params.fp_rate)):
        class_id = _draw_weighted(rng, weights)
        w = rng.uniform(0.05, 0.4) * width
        h = rng.uniform(0.05, 0.4) * height
        x = rng.uniform(0.0, width - w)
        y = rng.uniform(0.0, height - h)
        score = float(rng.uniform(0.3, 0.8))
        preds.append(
            Prediction(class_id=class_id, bbox=BBox(x, y, w, h), score=score)
        )
    return preds


def _clip_box(
    x: float, y: float, w: float, h: float, width: float, height: float
) -> BBox:
    """Clip to the image, keeping a minimal positive extent inside bounds."""
    x1 = min(max(x, 0.0), width - _MIN_SIDE)
    y1 = min(max(y, 0.0), height - _MIN_SIDE)
    x2 = max(min(x + w, width), x1 + _MIN_SIDE)
    y2 = max(min(y + h, height), y1 + _MIN_SIDE)
    return BBox(x1, y1, x2 - x1, y2 - y1)


def student_update(
    params: DetectorParams,
    batch_class_exposure: Sequence[int],
    batch_reg_targets: int,
    lr: float,
) -> DetectorParams:
    """Saturating skill update from one batch.

    Per-class recall moves toward 1 in proportion to the class's share of
    batch instances. Localization moves toward 1 with the share of instances
    that carried regression supervision, and the confusion and partial-box
    rates decay toward their floors by the same signal. Zero exposure and
    zero regression targets leave the parameters unchanged.
    """
    exposure = np.asarray(batch_class_exposure, dtype=float)
    if exposure.shape != (params.n_classes,):
        raise ValueError("exposure vector must have one entry per class")
    if (exposure < 0).any():
        raise ValueError("exposure counts must be non-negative")
    if batch_reg_targets < 0:
        raise ValueError("regression target count must be non-negative")

    total = exposure.sum()
    share = exposure / max(1.0, total)
    recall = tuple(
        min(1.0, s + lr * e * (1.0 - s))
        for s, e in zip(params.recall_skill, share)
    )
    reg_signal = batch_reg_targets / max(1.0, total)
    loc = min(1.0, params.loc_skill + lr * reg_signal * (1.0 - params.loc_skill))
    decay = 1.0 - lr * reg_signal
    confusion = CONFUSION_FLOOR + max(0.0, params.confusion_rate - CONFUSION_FLOOR) * decay
    partial = PARTIAL_FLOOR + max(0.0, params.partial_rate - PARTIAL_FLOOR) * decay
    return DetectorParams(
        recall_skill=recall,
        confusion_rate=min(1.0, max(0.0, confusion)),
        loc_skill=max(0.0, loc),
        partial_rate=min(1.0, max(0.0, partial)),
        fp_rate=params.fp_rate,
        confidence_sharpness=params.confidence_sharpness,
    )


def smooth_l1(x: float, transition: float = 1.0) -> float:
    """Huber-style penalty: quadratic below the transition, linear above."""
    ax = abs(x)
    if ax < transition:
        return 0.5 * x * x / transition
    return ax - 0.5 * transition


def _safe_log(p: float) -> float:
    return math.log(max(p, _LOG_CLAMP))


def loss_breakdown(targets: Sequence[TrainingTarget], mode: str) -> LossBreakdown:
    """Compose the four detector loss terms for one batch of targets.

    rpn_cls is binary cross-entropy of objectness against the fg/bg
    assignment; roi_cls is cross-entropy of the assigned class. Regression
    terms average smooth-L1 over box deltas of foreground targets: all of
    them in ``supervised`` mode, none in ``unsup_cls_only``, and only targets
    flagged as pasted from the crop bank in ``unsup_selective``.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    if not targets:
        return LossBreakdown(0.0, 0.0, 0.0, 0.0, 0.0)

    rpn_cls = 0.0
    roi_cls = 0.0
    for t in targets:
        p_fg = t.objectness if t.foreground else 1.0 - t.objectness
        rpn_cls -= _safe_log(p_fg)
        roi_cls -= _safe_log(t.true_class_prob)
    rpn_cls /= len(targets)
    roi_cls /= len(targets)

    if mode == "unsup_cls_only":
        reg_pool = []
    else:
        reg_pool = [
            t
            for t in targets
            if t.foreground
            and t.box_delta is not None
            and (mode == "supervised" or t.from_cropbank)
        ]
    if reg_pool:
        reg = sum(sum(smooth_l1(d) for d in t.box_delta) for t in reg_pool) / len(reg_pool)
    else:
        reg = 0.0
    total = rpn_cls + reg + roi_cls + reg
    return LossBreakdown(
        rpn_cls=rpn_cls, rpn_reg=reg, roi_cls=roi_cls, roi_reg=reg, total=total
    )
