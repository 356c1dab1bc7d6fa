import math

import numpy as np
import pytest

from acrst import (
    BBox,
    Instance,
    Prediction,
    ap_50_95,
    average_precision,
    box_miou,
    class_kld,
    fg_ratio,
    iou,
    match_greedy,
    pseudo_quality,
)


def gt(class_id, x, y, w, h):
    return Instance(class_id=class_id, bbox=BBox(x, y, w, h), source_image_id=1)


def pred(class_id, x, y, w, h, score):
    return Prediction(class_id=class_id, bbox=BBox(x, y, w, h), score=score)


class TestIou:
    def test_one_seventh(self):
        # Two 2x2 boxes overlapping in a unit square: 1 / (4 + 4 - 1).
        a = BBox(0, 0, 2, 2)
        b = BBox(1, 1, 2, 2)
        assert math.isclose(iou(a, b), 1 / 7, abs_tol=1e-12)

    def test_identity(self):
        a = BBox(3, 4, 5, 6)
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)) == 0.0

    def test_touching(self):
        assert iou(BBox(0, 0, 2, 2), BBox(2, 0, 2, 2)) == 0.0

    def test_symmetric(self):
        a = BBox(0, 0, 4, 4)
        b = BBox(2, 1, 5, 2)
        assert iou(a, b) == iou(b, a)


class TestMatching:
    def test_high_score_claims_best_gt(self):
        gts = [gt(1, 0, 0, 10, 10), gt(1, 100, 0, 10, 10)]
        preds = [
            pred(1, 1, 0, 10, 10, score=0.5),
            pred(1, 0, 0, 10, 10, score=0.9),
        ]
        result = match_greedy(preds, gts, iou_thr=0.5)
        # The 0.9 prediction matches first and takes gt 0 exactly.
        assert result.pairs[0][:2] == (1, 0)
        assert result.pairs[0][2] == 1.0
        assert result.unmatched_preds == (0,)
        assert result.unmatched_gts == (1,)

    def test_class_aware_blocks_cross_class(self):
        gts = [gt(2, 0, 0, 10, 10)]
        preds = [pred(1, 0, 0, 10, 10, score=0.9)]
        result = match_greedy(preds, gts, iou_thr=0.5, class_aware=True)
        assert result.pairs == ()
        result = match_greedy(preds, gts, iou_thr=0.5, class_aware=False)
        assert len(result.pairs) == 1

    def test_one_to_one(self):
        gts = [gt(1, 0, 0, 10, 10)]
        preds = [pred(1, 0, 0, 10, 10, 0.9), pred(1, 1, 1, 10, 10, 0.8)]
        result = match_greedy(preds, gts, iou_thr=0.3)
        assert len(result.pairs) == 1
        assert result.unmatched_preds == (1,)

    def test_iou_tie_takes_lower_gt_index(self):
        gts = [gt(1, 0, 0, 10, 10), gt(1, 0, 0, 10, 10)]
        preds = [pred(1, 0, 0, 10, 10, 0.9)]
        result = match_greedy(preds, gts, iou_thr=0.5)
        assert result.pairs == ((0, 0, 1.0),)

    def test_score_tie_takes_lower_pred_index(self):
        gts = [gt(1, 0, 0, 10, 10)]
        preds = [pred(1, 0, 0, 10, 10, 0.7), pred(1, 0, 0, 10, 10, 0.7)]
        result = match_greedy(preds, gts, iou_thr=0.5)
        assert result.pairs == ((0, 0, 1.0),)

    def test_below_threshold_not_matched(self):
        gts = [gt(1, 0, 0, 2, 2)]
        preds = [pred(1, 1, 1, 2, 2, 0.9)]
        assert match_greedy(preds, gts, iou_thr=0.5).pairs == ()
        assert len(match_greedy(preds, gts, iou_thr=1 / 7).pairs) == 1

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            match_greedy([], [], iou_thr=0.0)
        with pytest.raises(ValueError):
            match_greedy([], [], iou_thr=1.1)


class TestPseudoQuality:
    def test_two_thirds_accuracy_half_recall(self):
        gts = [
            gt(1, 0, 0, 10, 10),
            gt(1, 20, 0, 10, 10),
            gt(2, 40, 0, 10, 10),
            gt(3, 60, 0, 10, 10),
        ]
        preds = [
            pred(1, 0, 0, 10, 10, 0.9),
            pred(1, 20, 0, 10, 10, 0.8),
            pred(2, 80, 0, 10, 10, 0.7),
        ]
        accuracy, recall = pseudo_quality(preds, gts, iou_thr=0.5)
        assert math.isclose(accuracy, 2 / 3, abs_tol=1e-12)
        assert math.isclose(recall, 0.5, abs_tol=1e-12)

    def test_vacuous_cases(self):
        assert pseudo_quality([], [gt(1, 0, 0, 5, 5)]) == (1.0, 0.0)
        assert pseudo_quality([pred(1, 0, 0, 5, 5, 0.9)], []) == (0.0, 1.0)
        assert pseudo_quality([], []) == (1.0, 1.0)


class TestFgRatio:
    def test_value(self):
        assert fg_ratio(32, 224) == 0.125

    def test_all_foreground(self):
        assert fg_ratio(10, 0) == 1.0

    def test_zero_total(self):
        with pytest.raises(ValueError):
            fg_ratio(0, 0)

    def test_negative(self):
        with pytest.raises(ValueError):
            fg_ratio(-1, 5)


class TestClassKld:
    def test_worked_example(self):
        # (0.25, 0.75) against (0.5, 0.5): 0.25 ln(1/2) + 0.75 ln(3/2).
        value = class_kld([10, 30], [20, 20])
        expected = 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
        assert math.isclose(value, expected, abs_tol=1e-4)
        assert math.isclose(value, 0.130812, abs_tol=1e-4)

    def test_identical_distributions_zero(self):
        assert class_kld([5, 5, 10], [10, 10, 20]) < 1e-9

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = rng.integers(0, 50, size=4)
            q = rng.integers(0, 50, size=4)
            if q.sum() == 0:
                continue
            assert class_kld(p, q) >= -1e-12

    def test_empty_class_is_finite(self):
        assert math.isfinite(class_kld([0, 10], [5, 5]))

    def test_validation(self):
        with pytest.raises(ValueError):
            class_kld([1, 2], [1, 2, 3])
        with pytest.raises(ValueError):
            class_kld([1, 2], [0, 0])
        with pytest.raises(ValueError):
            class_kld([1, 2], [1, 2], epsilon=0.0)


class TestBoxMiou:
    def test_mean_over_matched_pairs(self):
        gts = [gt(1, 0, 0, 10, 10), gt(1, 20, 0, 10, 10)]
        preds = [
            pred(1, 0, 0, 10, 10, 0.9),
            pred(1, 20, 0, 10, 8, 0.8),
        ]
        expected = (1.0 + 0.8) / 2
        assert math.isclose(box_miou(preds, gts, iou_thr=0.5), expected, abs_tol=1e-12)

    def test_no_matches_reports_zero(self):
        assert box_miou([], [gt(1, 0, 0, 5, 5)]) == 0.0
        assert box_miou([pred(1, 50, 50, 5, 5, 0.9)], [gt(1, 0, 0, 5, 5)]) == 0.0


class TestAveragePrecision:
    def test_perfect_detection(self):
        gts = [[gt(1, 0, 0, 10, 10)]]
        preds = [[pred(1, 0, 0, 10, 10, 0.9)]]
        assert average_precision(preds, gts, iou_thr=0.5) == 1.0

    def test_half_recall_is_near_half(self):
        gts = [[gt(1, 0, 0, 10, 10), gt(1, 20, 0, 10, 10)]]
        preds = [[pred(1, 0, 0, 10, 10, 0.9)]]
        ap = average_precision(preds, gts, iou_thr=0.5)
        assert math.isclose(ap, 51 / 101, abs_tol=1e-12)
        assert abs(ap - 0.5) < 0.01

    def test_tp_fp_tp_envelope(self):
        # Ranked TP, FP, TP over two ground truths: envelope gives
        # 51 points at precision 1 and 50 at 2/3.
        gts = [[gt(1, 0, 0, 10, 10), gt(1, 20, 0, 10, 10)]]
        preds = [
            [
                pred(1, 0, 0, 10, 10, 0.9),
                pred(1, 50, 0, 10, 10, 0.8),
                pred(1, 20, 0, 10, 10, 0.7),
            ]
        ]
        ap = average_precision(preds, gts, iou_thr=0.5)
        expected = (51 * 1.0 + 50 * (2 / 3)) / 101
        assert math.isclose(ap, expected, abs_tol=1e-12)

    def test_no_ground_truth_is_zero(self):
        assert average_precision([[pred(1, 0, 0, 5, 5, 0.9)]], [[]], 0.5) == 0.0
        assert average_precision([], [], 0.5) == 0.0

    def test_pooled_across_images(self):
        # Splitting the same predictions across images changes nothing when
        # boxes stay disjoint per image.
        g1, g2 = gt(1, 0, 0, 10, 10), gt(1, 20, 0, 10, 10)
        p1 = pred(1, 0, 0, 10, 10, 0.9)
        p2 = pred(1, 50, 0, 10, 10, 0.8)
        pooled = average_precision([[p1, p2]], [[g1, g2]], 0.5)
        split = average_precision([[p1], [p2]], [[g1], [g2]], 0.5)
        assert math.isclose(pooled, split, abs_tol=1e-12)

    def test_order_invariance_within_image(self):
        rng = np.random.default_rng(4)
        gts = [[gt(1, 0, 0, 10, 10), gt(2, 20, 0, 10, 10), gt(1, 40, 0, 10, 10)]]
        base = [
            pred(1, 1, 0, 10, 10, 0.9),
            pred(2, 20, 0, 10, 10, 0.6),
            pred(1, 40, 2, 10, 10, 0.8),
            pred(2, 70, 0, 10, 10, 0.4),
        ]
        reference = average_precision([base], gts, 0.5)
        for _ in range(10):
            shuffled = list(base)
            rng.shuffle(shuffled)
            assert math.isclose(
                average_precision([shuffled], gts, 0.5), reference, abs_tol=1e-12
            )

    def test_misaligned_image_lists(self):
        with pytest.raises(ValueError):
            average_precision([[]], [], 0.5)


class TestAp5095:
    def test_perfect_is_one(self):
        gts = [[gt(1, 0, 0, 10, 10)]]
        preds = [[pred(1, 0, 0, 10, 10, 0.9)]]
        assert ap_50_95(preds, gts) == 1.0

    def test_iou_point_eight_passes_seven_thresholds(self):
        # A single pair at IoU exactly 0.8 counts at 0.50 through 0.80.
        gts = [[gt(1, 0, 0, 10, 10)]]
        preds = [[pred(1, 0, 0, 10, 8, 0.9)]]
        assert math.isclose(ap_50_95(preds, gts), 0.7, abs_tol=1e-12)

    def test_tighter_boxes_score_higher(self):
        gts = [[gt(1, 0, 0, 10, 10)]]
        loose = [[pred(1, 0, 0, 10, 6, 0.9)]]
        tight = [[pred(1, 0, 0, 10, 9, 0.9)]]
        assert ap_50_95(tight, gts) > ap_50_95(loose, gts)
