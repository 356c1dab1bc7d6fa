import math

import numpy as np
import pytest

from acrst import (
    BBox,
    FilterConfig,
    ImageLevelLabel,
    ImageRecord,
    Instance,
    OracleNoise,
    Prediction,
    focal_bce,
    oracle_image_labels,
    two_stage_filter,
    two_stage_mining,
)


def pred(class_id, score):
    return Prediction(class_id=class_id, bbox=BBox(0, 0, 10, 10), score=score)


@pytest.fixture
def three_preds():
    # score clears / activation low; score low / activation clears; both clear.
    return [pred(1, 0.8), pred(2, 0.6), pred(3, 0.9)]


@pytest.fixture
def label():
    return ImageLevelLabel(image_id=1, activations=(0.1, 0.5, 0.3))


class TestTwoStageFilter:
    def test_and_keeps_only_doubly_confirmed(self, three_preds, label):
        config = FilterConfig(tau_cls=0.7, tau_ml=0.2, mode="two_stage_filtering")
        kept = two_stage_filter(three_preds, label, config)
        assert [(p.class_id, p.score) for p in kept] == [(3, 0.9)]

    def test_one_stage_ignores_label(self, three_preds):
        config = FilterConfig(tau_cls=0.7, mode="one_stage")
        kept = two_stage_filter(three_preds, None, config)
        assert [p.class_id for p in kept] == [1, 3]

    def test_two_stage_requires_label(self, three_preds):
        config = FilterConfig(mode="two_stage_filtering")
        with pytest.raises(ValueError):
            two_stage_filter(three_preds, None, config)

    def test_mining_mode_rejected(self, three_preds, label):
        config = FilterConfig(mode="two_stage_mining")
        with pytest.raises(ValueError):
            two_stage_filter(three_preds, label, config)

    def test_order_preserved(self, label):
        preds = [pred(3, 0.71), pred(3, 0.99), pred(3, 0.85)]
        config = FilterConfig(tau_cls=0.7, tau_ml=0.2, mode="two_stage_filtering")
        kept = two_stage_filter(preds, label, config)
        assert [p.score for p in kept] == [0.71, 0.99, 0.85]

    def test_thresholds_are_inclusive(self):
        config = FilterConfig(tau_cls=0.7, tau_ml=0.2, mode="two_stage_filtering")
        lab = ImageLevelLabel(image_id=1, activations=(0.2,))
        kept = two_stage_filter([pred(1, 0.7)], lab, config)
        assert len(kept) == 1


class TestTwoStageMining:
    def test_or_keeps_singly_confirmed(self, three_preds, label):
        config = FilterConfig(tau_cls=0.7, tau_ml=0.2, mode="two_stage_mining")
        kept = two_stage_mining(three_preds, label, config)
        assert [p.class_id for p in kept] == [1, 2, 3]

    def test_rejects_doubly_unconfirmed(self, label):
        config = FilterConfig(tau_cls=0.7, tau_ml=0.2, mode="two_stage_mining")
        kept = two_stage_mining([pred(1, 0.5)], label, config)
        assert kept == []


class TestSetRelations:
    """AND output is a subset of one-stage output; OR output a superset."""

    def test_random_predictions(self):
        rng = np.random.default_rng(17)
        for _ in range(500):
            n_classes = int(rng.integers(1, 6))
            preds = [
                pred(int(rng.integers(1, n_classes + 1)), float(rng.random()))
                for _ in range(int(rng.integers(0, 12)))
            ]
            lab = ImageLevelLabel(
                image_id=1, activations=tuple(rng.random(n_classes).tolist())
            )
            tau_cls = float(rng.random())
            tau_ml = float(rng.random())
            one = two_stage_filter(
                preds, None, FilterConfig(tau_cls, tau_ml, "one_stage")
            )
            both = two_stage_filter(
                preds, lab, FilterConfig(tau_cls, tau_ml, "two_stage_filtering")
            )
            either = two_stage_mining(
                preds, lab, FilterConfig(tau_cls, tau_ml, "two_stage_mining")
            )
            assert set(map(id, both)) <= set(map(id, one)) <= set(map(id, either))
            # Exact membership, element by element.
            for p in preds:
                act = lab.activation(p.class_id)
                assert (p in one) == (p.score >= tau_cls)
                assert (p in both) == (p.score >= tau_cls and act >= tau_ml)
                assert (p in either) == (p.score >= tau_cls or act >= tau_ml)


class TestOracle:
    def record(self, class_ids, image_id=1):
        gt = tuple(
            Instance(class_id=c, bbox=BBox(0, 0, 5, 5), source_image_id=image_id)
            for c in class_ids
        )
        return ImageRecord(id=image_id, width=100, height=100, ground_truth=gt)

    def test_noiseless_bands(self):
        noise = OracleNoise(fn_rate=0.0, fp_rate=0.0, tau_ml=0.2)
        rng = np.random.default_rng(0)
        rec = self.record([1, 3])
        lab = oracle_image_labels(rec, noise, rng, n_classes=4)
        assert 0.6 <= lab.activation(1) <= 1.0
        assert lab.activation(2) < 0.2
        assert 0.6 <= lab.activation(3) <= 1.0
        assert lab.activation(4) < 0.2

    def test_low_band_bounded_by_tau_ml(self):
        noise = OracleNoise(fn_rate=0.0, fp_rate=0.0, tau_ml=0.05)
        rng = np.random.default_rng(1)
        rec = self.record([1])
        for _ in range(200):
            lab = oracle_image_labels(rec, noise, rng, n_classes=2)
            assert lab.activation(2) < 0.05

    def test_error_rates_within_two_percent(self):
        noise = OracleNoise(fn_rate=0.1, fp_rate=0.3, tau_ml=0.2)
        rng = np.random.default_rng(2)
        rec = self.record([1])
        n = 20_000
        fn = fp = 0
        for _ in range(n):
            lab = oracle_image_labels(rec, noise, rng, n_classes=2)
            fn += lab.activation(1) < 0.2
            fp += lab.activation(2) >= 0.6
        assert abs(fn / n - 0.1) < 0.02
        assert abs(fp / n - 0.3) < 0.02

    def test_always_fn_always_fp(self):
        noise = OracleNoise(fn_rate=1.0, fp_rate=1.0, tau_ml=0.2)
        rng = np.random.default_rng(3)
        lab = oracle_image_labels(self.record([1]), noise, rng, n_classes=2)
        assert lab.activation(1) < 0.2
        assert lab.activation(2) >= 0.6

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            OracleNoise(fn_rate=1.5)


class TestFocalBce:
    def test_worked_example(self):
        # y=1, p=0.5, gamma=2: 0.25 * ln 2.
        assert math.isclose(focal_bce(0.5, 1, gamma=2.0), 0.25 * math.log(2), abs_tol=1e-12)
        assert math.isclose(focal_bce(0.5, 1, gamma=2.0), 0.173287, abs_tol=1e-6)

    def test_gamma_zero_is_plain_bce(self):
        assert math.isclose(focal_bce(0.5, 1, gamma=0.0), math.log(2), abs_tol=1e-12)
        assert math.isclose(focal_bce(0.25, 0, gamma=0.0), -math.log(0.75), abs_tol=1e-12)

    def test_symmetry(self):
        assert math.isclose(
            focal_bce(0.8, 1, gamma=2.0), focal_bce(0.2, 0, gamma=2.0), abs_tol=1e-12
        )

    def test_confident_correct_is_downweighted(self):
        assert focal_bce(0.9, 1, gamma=2.0) < focal_bce(0.9, 1, gamma=0.0)

    def test_clamp_keeps_loss_finite(self):
        assert math.isfinite(focal_bce(0.0, 1))
        assert math.isfinite(focal_bce(1.0, 0))
        assert focal_bce(0.0, 1) > 10.0

    def test_invalid_target(self):
        with pytest.raises(ValueError):
            focal_bce(0.5, 2)

    def test_negative_gamma(self):
        with pytest.raises(ValueError):
            focal_bce(0.5, 1, gamma=-1.0)


class TestFilterConfig:
    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            FilterConfig(tau_cls=1.5)
        with pytest.raises(ValueError):
            FilterConfig(tau_ml=-0.1)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            FilterConfig(mode="three_stage")

    def test_activation_bounds(self):
        with pytest.raises(ValueError):
            ImageLevelLabel(image_id=1, activations=(1.2,))
