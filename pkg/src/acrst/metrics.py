"""Detection metrics: IoU, greedy matching, pseudo-label quality, distribution
divergence and average precision."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import BBox, Instance, Prediction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching predictions against ground truth on one image.

    ``pairs`` holds (prediction index, ground-truth index, IoU) triples; each
    index appears at most once across the result.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    inter = a.intersection(b)
    if inter is None:
        return 0.0
    overlap = inter.area
    return overlap / (a.area + b.area - overlap)


def match_greedy(
    preds: Sequence[Prediction],
    gts: Sequence[Instance],
    iou_thr: float,
    class_aware: bool = True,
) -> MatchResult:
    """Greedy one-to-one matching in descending score order.

    Each prediction claims the unclaimed ground truth with the highest IoU at
    or above the threshold (same class when ``class_aware``). Ties are broken
    deterministically: equal scores by prediction index, equal IoUs by lower
    ground-truth index.
    """
    if not 0.0 < iou_thr <= 1.0:
        raise ValueError(f"iou threshold must be in (0, 1], got {iou_thr}")
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    claimed = [False] * len(gts)
    pairs = []
    matched_preds = set()
    for pi in order:
        pred = preds[pi]
        best_gi = -1
        best_iou = 0.0
        for gi, gt in enumerate(gts):
            if claimed[gi]:
                continue
            if class_aware and gt.class_id != pred.class_id:
                continue
            overlap = iou(pred.bbox, gt.bbox)
            if overlap >= iou_thr and overlap > best_iou:
                best_gi, best_iou = gi, overlap
        if best_gi >= 0:
            claimed[best_gi] = True
            matched_preds.add(pi)
            pairs.append((pi, best_gi, best_iou))
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_preds=tuple(i for i in range(len(preds)) if i not in matched_preds),
        unmatched_gts=tuple(i for i, c in enumerate(claimed) if not c),
    )


def pseudo_quality(
    preds: Sequence[Prediction],
    gts: Sequence[Instance],
    iou_thr: float = 0.5,
) -> tuple[float, float]:
    """(accuracy, recall) of predictions under class-aware matching.

    Accuracy is the matched share of predictions, recall the matched share of
    ground truths. Both degenerate vacuously to 1.0 when their denominator is
    empty.
    """
    result = match_greedy(preds, gts, iou_thr, class_aware=True)
    accuracy = len(result.pairs) / len(preds) if preds else 1.0
    recall = len(result.pairs) / len(gts) if gts else 1.0
    return accuracy, recall


def fg_ratio(foreground: int, background: int) -> float:
    """Foreground share of training target assignments."""
    if foreground < 0 or background < 0:
        raise ValueError("target counts must be non-negative")
    total = foreground + background
    if total == 0:
        raise ValueError("foreground ratio undefined for zero targets")
    return foreground / total


def class_kld(
    pseudo_counts: Sequence[int],
    truth_counts: Sequence[int],
    epsilon: float = 1e-6,
) -> float:
    """KL divergence (nats) of the pseudo class distribution from the truth.

    Both count vectors are epsilon-smoothed and normalized first, so the
    result is finite even with empty classes. Direction is pseudo || truth.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    p = np.asarray(pseudo_counts, dtype=float)
    q = np.asarray(truth_counts, dtype=float)
    if p.shape != q.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("count vectors must be non-empty and aligned")
    if (p < 0).any() or (q < 0).any():
        raise ValueError("counts must be non-negative")
    if q.sum() <= 0:
        raise ValueError("truth counts must not be all zero")
    p = p + epsilon
    q = q + epsilon
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def box_miou(
    preds: Sequence[Prediction],
    gts: Sequence[Instance],
    iou_thr: float = 0.5,
) -> float:
    """Mean IoU over matched prediction/ground-truth pairs.

    Returns 0.0 (logged) when nothing matches, so callers can tell the
    degenerate case apart only by the match count.
    """
    result = match_greedy(preds, gts, iou_thr, class_aware=True)
    if not result.pairs:
        log.debug("box_miou: no matched pairs, reporting 0.0")
        return 0.0
    return sum(v for _, _, v in result.pairs) / len(result.pairs)


def _tp_flags(
    preds: Sequence[Prediction], gts: Sequence[Instance], iou_thr: float
) -> list[bool]:
    result = match_greedy(preds, gts, iou_thr, class_aware=True)
    matched = {pi for pi, _, _ in result.pairs}
    return [i in matched for i in range(len(preds))]


def average_precision(
    preds_by_image: Sequence[Sequence[Prediction]],
    gts_by_image: Sequence[Sequence[Instance]],
    iou_thr: float,
) -> float:
    """101-point interpolated average precision at one IoU threshold.

    Predictions are pooled over images and ranked by score; true positives
    come from per-image class-aware greedy matching. Returns 0.0 when there
    are no ground truths.
    """
    if len(preds_by_image) != len(gts_by_image):
        raise ValueError("prediction and ground-truth image lists must align")
    rows: list[tuple[float, bool]] = []
    n_gt = 0
    for preds, gts in zip(preds_by_image, gts_by_image):
        n_gt += len(gts)
        flags = _tp_flags(preds, gts, iou_thr)
        rows.extend((p.score, flag) for p, flag in zip(preds, flags))
    if n_gt == 0 or not rows:
        return 0.0
    rows.sort(key=lambda r: -r[0])
    tp = np.cumsum([r[1] for r in rows])
    fp = np.cumsum([not r[1] for r in rows])
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # Precision envelope: best precision achievable at or beyond each recall.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    sample_points = np.linspace(0.0, 1.0, 101)
    indices = np.searchsorted(recall, sample_points, side="left")
    sampled = np.where(indices < len(envelope), envelope[np.minimum(indices, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def ap_50_95(
    preds_by_image: Sequence[Sequence[Prediction]],
    gts_by_image: Sequence[Sequence[Instance]],
) -> float:
    """Mean average precision over IoU thresholds 0.50, 0.55, ..., 0.95."""
    thresholds = [0.5 + 0.05 * i for i in range(10)]
    return float(
        np.mean([average_precision(preds_by_image, gts_by_image, t) for t in thresholds])
    )
