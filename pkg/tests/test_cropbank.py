import numpy as np
import pytest
import scipy.stats

from acrst import (
    BBox,
    CropBank,
    CropEntry,
    EmptyBankError,
    Prediction,
    SamplingDistribution,
    bank_to_csv,
    build_labeled_bank,
    parse_coco_annotations,
    refresh_pseudo_bank,
    sample_crops,
)


def entry(class_id, origin="labeled", score=1.0, image_id=1):
    return CropEntry(
        source_image_id=image_id,
        bbox=BBox(0, 0, 10, 10),
        class_id=class_id,
        score=score,
        origin=origin,
    )


class TestCropEntry:
    def test_labeled_must_score_one(self):
        with pytest.raises(ValueError):
            entry(1, origin="labeled", score=0.9)

    def test_score_range(self):
        with pytest.raises(ValueError):
            entry(1, origin="pseudo", score=1.2)

    def test_unknown_origin(self):
        with pytest.raises(ValueError):
            entry(1, origin="mystery")


class TestBuild:
    def test_one_entry_per_instance(self, coco_text):
        ds = parse_coco_annotations(coco_text)
        bank = build_labeled_bank(ds)
        assert bank.n_labeled == 3
        assert bank.n_pseudo == 0
        assert all(e.origin == "labeled" and e.score == 1.0 for e in bank.labeled_bank)

    def test_entries_carry_geometry(self, coco_text):
        ds = parse_coco_annotations(coco_text)
        bank = build_labeled_bank(ds)
        assert bank.labeled_bank[0].bbox == BBox(5, 5, 20, 10)
        assert bank.labeled_bank[0].source_image_id == 10


class TestRefresh:
    def setup_method(self):
        self.bank = CropBank(labeled_bank=(entry(1), entry(2)))
        self.preds = {
            5: [Prediction(1, BBox(0, 0, 4, 4), 0.8)],
            6: [Prediction(2, BBox(1, 1, 5, 5), 0.9), Prediction(1, BBox(2, 2, 3, 3), 0.75)],
        }

    def test_wholesale_replacement_on_period(self):
        bank = refresh_pseudo_bank(self.bank, self.preds, period=1, epoch=0)
        assert bank.n_pseudo == 3
        assert bank.refresh_counter == 0
        assert all(e.origin == "pseudo" for e in bank.pseudo_bank)
        assert bank.pseudo_bank[0].score == 0.8
        again = refresh_pseudo_bank(bank, {7: []}, period=1, epoch=1)
        assert again.n_pseudo == 0

    def test_off_period_keeps_banks(self):
        bank = refresh_pseudo_bank(self.bank, self.preds, period=2, epoch=3)
        assert bank.pseudo_bank == self.bank.pseudo_bank
        assert bank.labeled_bank is self.bank.labeled_bank
        assert bank.refresh_counter == self.bank.refresh_counter + 1

    def test_labeled_bank_never_changes(self):
        bank = self.bank
        for epoch in range(6):
            bank = refresh_pseudo_bank(bank, self.preds, period=2, epoch=epoch)
        assert bank.labeled_bank is self.bank.labeled_bank

    def test_bad_period(self):
        with pytest.raises(ValueError):
            refresh_pseudo_bank(self.bank, {}, period=0, epoch=0)


class TestSampling:
    def test_one_hot_distribution(self):
        bank = CropBank(labeled_bank=(entry(1), entry(2), entry(2)))
        dist = SamplingDistribution(mu=(0.0, 1.0), beta=2.0)
        rng = np.random.default_rng(0)
        crops = sample_crops(bank, dist, 50, rng)
        assert len(crops) == 50
        assert all(c.class_id == 2 for c in crops)

    def test_renormalizes_over_available_classes(self):
        bank = CropBank(labeled_bank=(entry(1),))
        dist = SamplingDistribution(mu=(0.1, 0.9), beta=2.0)
        crops = sample_crops(bank, dist, 20, np.random.default_rng(1))
        assert all(c.class_id == 1 for c in crops)

    def test_union_of_banks_is_sampled(self):
        bank = CropBank(
            labeled_bank=(entry(1, image_id=100),),
            pseudo_bank=(entry(1, origin="pseudo", score=0.8, image_id=200),),
        )
        dist = SamplingDistribution.uniform(1)
        crops = sample_crops(bank, dist, 400, np.random.default_rng(2))
        sources = {c.source_image_id for c in crops}
        assert sources == {100, 200}

    def test_empty_bank_raises(self):
        bank = CropBank(labeled_bank=())
        with pytest.raises(EmptyBankError):
            sample_crops(bank, SamplingDistribution.uniform(2), 1, np.random.default_rng(0))

    def test_zero_weight_on_available_classes_raises(self):
        bank = CropBank(labeled_bank=(entry(1),))
        dist = SamplingDistribution(mu=(0.0, 1.0), beta=2.0)
        with pytest.raises(ValueError):
            sample_crops(bank, dist, 1, np.random.default_rng(0))

    def test_deterministic_for_seed(self):
        bank = CropBank(labeled_bank=(entry(1), entry(2), entry(3)))
        dist = SamplingDistribution.uniform(3)
        a = sample_crops(bank, dist, 100, np.random.default_rng(42))
        b = sample_crops(bank, dist, 100, np.random.default_rng(42))
        assert a == b

    def test_uniform_frequencies_within_two_percent(self):
        bank = CropBank(labeled_bank=(entry(1), entry(2)))
        dist = SamplingDistribution.uniform(2)
        crops = sample_crops(bank, dist, 100_000, np.random.default_rng(7))
        share = sum(c.class_id == 1 for c in crops) / len(crops)
        assert abs(share - 0.5) < 0.02

    def test_two_level_sampling_matches_distribution_chisquare(self):
        """Class frequencies at 1e5 draws pass a goodness-of-fit test."""
        bank = CropBank(
            labeled_bank=tuple(entry(k) for k in (1, 1, 1, 2, 3, 3)),
            pseudo_bank=tuple(entry(k, origin="pseudo", score=0.5) for k in (2, 4)),
        )
        dist = SamplingDistribution(mu=(0.4, 0.3, 0.2, 0.1), beta=2.0)
        n = 100_000
        crops = sample_crops(bank, dist, n, np.random.default_rng(123))
        observed = np.bincount([c.class_id for c in crops], minlength=5)[1:]
        expected = np.asarray(dist.mu) * n
        result = scipy.stats.chisquare(observed, expected)
        assert result.pvalue > 0.001

    def test_within_class_entries_uniform(self):
        pool = tuple(entry(1, image_id=i) for i in range(4))
        bank = CropBank(labeled_bank=pool)
        crops = sample_crops(
            bank, SamplingDistribution.uniform(1), 100_000, np.random.default_rng(5)
        )
        counts = np.bincount([c.source_image_id for c in crops], minlength=4)
        assert scipy.stats.chisquare(counts).pvalue > 0.001


def test_csv_dump_round_trips_columns():
    bank = CropBank(
        labeled_bank=(entry(1),),
        pseudo_bank=(entry(2, origin="pseudo", score=0.75, image_id=9),),
    )
    text = bank_to_csv(bank)
    lines = text.strip().split("\n")
    assert lines[0] == "source_image_id,class_id,x,y,w,h,score,origin"
    assert len(lines) == 3
    assert lines[1].endswith("labeled")
    assert lines[2].endswith("pseudo")
