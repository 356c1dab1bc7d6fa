"""Foreground-background and foreground-foreground rebalancing.

Two mechanisms act on training images. Crop-and-paste mixing raises the
foreground share of training targets (`fbr_mix`). An adaptive class sampling
distribution decides which classes get pasted: classes whose pseudo-label
recall is low receive high sampling weight (`pseudo_recall`,
`affr_distribution`). Geometry is handled in annotation space only; occluded
base annotations are dropped by visible fraction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cropbank import CropEntry
from .dataset import BBox, ImageRecord, Instance

log = logging.getLogger(__name__)

# Pseudo recall assigned to classes absent from the labeled data. Large enough
# to sort such classes ahead of every real value; excluded from weight sums.
LABELED_ABSENT_PR = 1e9

# Visible fractions at or below this count as full occlusion.
_FULL_OCCLUSION_EPS = 1e-12


@dataclass(frozen=True)
class ClassStats:
    """Per-class pseudo and labeled instance counts plus the data ratio.

    ``ratio`` is the unlabeled-to-labeled data amount ratio used to scale the
    expected pseudo count of each class.
    """

    pseudo_counts: tuple[int, ...]
    labeled_counts: tuple[int, ...]
    ratio: float

    def __post_init__(self) -> None:
        if len(self.pseudo_counts) != len(self.labeled_counts):
            raise ValueError("pseudo and labeled count vectors must align")
        if self.ratio <= 0.0:
            raise ValueError(f"data ratio must be positive, got {self.ratio}")
        if any(c < 0 for c in self.pseudo_counts) or any(
            c < 0 for c in self.labeled_counts
        ):
            raise ValueError("instance counts must be non-negative")


@dataclass(frozen=True)
class SamplingDistribution:
    """Normalized class sampling weights plus the exponent that built them."""

    mu: tuple[float, ...]
    beta: float

    def __post_init__(self) -> None:
        if not self.mu:
            raise ValueError("sampling distribution needs at least one class")
        if any(m < 0 for m in self.mu):
            raise ValueError("sampling weights must be non-negative")
        if abs(sum(self.mu) - 1.0) > 1e-9:
            raise ValueError("sampling weights must sum to 1")

    @classmethod
    def normalized(cls, weights: Sequence[float], beta: float) -> "SamplingDistribution":
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if total <= 0.0:
            raise ValueError("cannot normalize an all-zero weight vector")
        return cls(mu=tuple((w / total).tolist()), beta=beta)

    @classmethod
    def uniform(cls, n_classes: int) -> "SamplingDistribution":
        if n_classes < 1:
            raise ValueError("need at least one class")
        return cls(mu=(1.0 / n_classes,) * n_classes, beta=0.0)


@dataclass(frozen=True)
class PasteConfig:
    """Crop-and-paste settings for `fbr_mix` plus the sampling exponent."""

    crops_per_image: int = 2
    rescale_min: float = 0.5
    rescale_max: float = 1.0
    occlusion_threshold: float = 0.0
    beta: float = 2.0

    def __post_init__(self) -> None:
        if self.crops_per_image < 0:
            raise ValueError("crops_per_image must be non-negative")
        if not 0.0 < self.rescale_min <= self.rescale_max:
            raise ValueError("rescale range must satisfy 0 < min <= max")
        if not 0.0 <= self.occlusion_threshold <= 1.0:
            raise ValueError("occlusion_threshold must be in [0, 1]")
        if self.beta < 0.0:
            raise ValueError("beta must be non-negative")


@dataclass(frozen=True)
class PastePlacement:
    """A crop placed at a destination box, with the applied rescale factor."""

    crop: CropEntry
    target_bbox: BBox
    rescale: float = 1.0


@dataclass(frozen=True)
class MixedRecord:
    """A base image after paste mixing.

    ``merged_annotations`` lists pasted instances first (paste order), then the
    surviving base instances. ``visibility`` and ``pasted_flags`` run parallel
    to it; a pasted instance's visibility accounts only for later placements.
    """

    base: ImageRecord
    placements: tuple[PastePlacement, ...]
    merged_annotations: tuple[Instance, ...]
    visibility: tuple[float, ...]
    pasted_flags: tuple[bool, ...]

    def __post_init__(self) -> None:
        if not (
            len(self.merged_annotations) == len(self.visibility) == len(self.pasted_flags)
        ):
            raise ValueError("merged annotation bookkeeping must align")


def pseudo_recall(stats: ClassStats) -> np.ndarray:
    """Per-class pseudo recall: pseudo count over ratio-scaled labeled count.

    PR_k = N_k_pseudo / (ratio * N_k_labeled). A class with no labeled
    instances gets the sentinel ``LABELED_ABSENT_PR``; downstream weighting
    excludes the sentinel from sums and gives such classes the minimum weight.
    """
    if stats.ratio <= 0.0:
        raise ValueError(f"data ratio must be positive, got {stats.ratio}")
    pseudo = np.asarray(stats.pseudo_counts, dtype=float)
    labeled = np.asarray(stats.labeled_counts, dtype=float)
    pr = np.full(pseudo.shape, LABELED_ABSENT_PR, dtype=float)
    present = labeled > 0
    pr[present] = pseudo[present] / (stats.ratio * labeled[present])
    return pr


def affr_distribution(pr: Sequence[float], beta: float) -> SamplingDistribution:
    """Mirror-rank sampling weights: neglected classes sample most.

    Classes are sorted by descending pseudo recall (ties broken by lower class
    id); the class at rank k receives raw weight
    ``(PR at rank K-k+1 / sum of PR) ** beta`` and raw weights are normalized
    to sum 1. beta = 0 gives the uniform distribution; sentinel classes (no
    labeled instances) are excluded from the sum and receive the minimum raw
    weight. Falls back to uniform when every real PR is zero.
    """
    if beta < 0.0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    values = np.asarray(pr, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("pseudo recall must be a non-empty vector")
    if (values < 0.0).any():
        raise ValueError("pseudo recall values must be non-negative")

    k = values.size
    sentinel = values >= LABELED_ABSENT_PR
    real = np.flatnonzero(~sentinel)
    total = values[real].sum() if real.size else 0.0
    if total <= 0.0:
        log.warning("every pseudo recall is zero; falling back to uniform sampling")
        return SamplingDistribution.uniform(k)

    order = sorted(real.tolist(), key=lambda i: (-values[i], i))
    raw = np.zeros(k, dtype=float)
    for rank, class_index in enumerate(order):
        mirrored = values[order[len(order) - 1 - rank]]
        raw[class_index] = (mirrored / total) ** beta
    if sentinel.any():
        raw[sentinel] = raw[real].min()
    if raw.sum() <= 0.0:
        log.warning("degenerate sampling weights; falling back to uniform sampling")
        return SamplingDistribution.uniform(k)
    return SamplingDistribution.normalized(raw, beta)


def visible_fraction(inst: BBox, occluders: Sequence[BBox]) -> float:
    """Fraction of ``inst`` area not covered by the union of ``occluders``.

    Exact for rectangles: the box is cut into the grid induced by all occluder
    edges and each cell is attributed by its center point.
    """
    clipped = []
    for occ in occluders:
        c = occ.intersection(inst)
        if c is not None:
            clipped.append(c)
    if not clipped:
        return 1.0

    xs = np.unique(
        np.array(
            [inst.x, inst.x2] + [v for c in clipped for v in (c.x, c.x2)], dtype=float
        )
    )
    ys = np.unique(
        np.array(
            [inst.y, inst.y2] + [v for c in clipped for v in (c.y, c.y2)], dtype=float
        )
    )
    cx = (xs[:-1] + xs[1:]) / 2.0
    cy = (ys[:-1] + ys[1:]) / 2.0
    covered = np.zeros((cx.size, cy.size), dtype=bool)
    for c in clipped:
        mx = (cx > c.x) & (cx < c.x2)
        my = (cy > c.y) & (cy < c.y2)
        covered |= np.outer(mx, my)
    cell_area = np.outer(np.diff(xs), np.diff(ys))
    covered_area = float(cell_area[covered].sum())
    visible = max(0.0, inst.area - covered_area)
    return min(1.0, visible / inst.area)


def merge_annotations(
    base: Sequence[Instance],
    pasted: Sequence[PastePlacement],
    occlusion_threshold: float,
) -> list[Instance]:
    """Combine base and pasted annotations after occlusion bookkeeping.

    Pasted instances sit on top and are always kept, in paste order. A base
    instance survives when its visible fraction is at least the threshold;
    fully occluded instances are dropped regardless of threshold.
    """
    if not 0.0 <= occlusion_threshold <= 1.0:
        raise ValueError(
            f"occlusion threshold must be in [0, 1], got {occlusion_threshold}"
        )
    rects = [p.target_bbox for p in pasted]
    merged = [
        Instance(
            class_id=p.crop.class_id,
            bbox=p.target_bbox,
            source_image_id=p.crop.source_image_id,
        )
        for p in pasted
    ]
    for inst in base:
        vf = visible_fraction(inst.bbox, rects) if rects else 1.0
        if vf <= _FULL_OCCLUSION_EPS or vf < occlusion_threshold:
            continue
        merged.append(inst)
    return merged


def fbr_mix(
    record: ImageRecord,
    crops: Sequence[CropEntry],
    rng: np.random.Generator,
    config: PasteConfig,
) -> MixedRecord:
    """Paste crops onto a record at uniform random in-bounds positions.

    A crop that fits is pasted at its own size. One that does not is rescaled
    so its longer side becomes a uniform random fraction (config range) of the
    destination's shorter side; if it still cannot fit even at the minimum
    rescale it is skipped with a warning. With no crops the record passes
    through unchanged.
    """
    width, height = record.width, record.height
    placements: list[PastePlacement] = []
    for crop in crops:
        w, h = crop.bbox.w, crop.bbox.h
        scale = 1.0
        if w > width or h > height:
            factor = float(rng.uniform(config.rescale_min, config.rescale_max))
            scale = factor * min(width, height) / max(w, h)
            if w * scale > width or h * scale > height:
                scale = config.rescale_min * min(width, height) / max(w, h)
                if w * scale > width or h * scale > height:
                    log.warning(
                        "crop %.0fx%.0f from image %s does not fit %sx%s even at "
                        "minimum rescale; skipped",
                        w, h, crop.source_image_id, width, height,
                    )
                    continue
        pw, ph = w * scale, h * scale
        x = float(rng.uniform(0.0, width - pw))
        y = float(rng.uniform(0.0, height - ph))
        placements.append(
            PastePlacement(crop=crop, target_bbox=BBox(x, y, pw, ph), rescale=scale)
        )

    merged = merge_annotations(
        record.ground_truth, placements, config.occlusion_threshold
    )
    rects = [p.target_bbox for p in placements]
    n_pasted = len(placements)
    visibility = []
    for i, p in enumerate(placements):
        visibility.append(visible_fraction(p.target_bbox, rects[i + 1 :]))
    for inst in merged[n_pasted:]:
        visibility.append(visible_fraction(inst.bbox, rects) if rects else 1.0)
    flags = (True,) * n_pasted + (False,) * (len(merged) - n_pasted)
    return MixedRecord(
        base=record,
        placements=tuple(placements),
        merged_annotations=tuple(merged),
        visibility=tuple(visibility),
        pasted_flags=flags,
    )
