"""Crop memory bank: a fixed labeled bank plus a periodically refreshed pseudo bank.

The labeled bank is built once from ground truth and never changes. The pseudo
bank is replaced wholesale from post-filtering predictions on a fixed epoch
period. Sampling is two-level: first a class from a sampling distribution,
then a uniform entry of that class from the union of both banks.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .dataset import BBox, Dataset, Prediction

if TYPE_CHECKING:
    from .rebalance import SamplingDistribution


class EmptyBankError(RuntimeError):
    """Sampling was requested but no class has any stored crop."""


@dataclass(frozen=True)
class CropEntry:
    """One stored crop: provenance, geometry, class and confidence."""

    source_image_id: int | str
    bbox: BBox
    class_id: int
    score: float
    origin: str  # "labeled" or "pseudo"

    def __post_init__(self) -> None:
        if self.origin not in ("labeled", "pseudo"):
            raise ValueError(f"unknown crop origin {self.origin!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"crop score must be in [0, 1], got {self.score}")
        if self.origin == "labeled" and self.score != 1.0:
            raise ValueError("labeled crops carry score 1.0")


@dataclass(frozen=True)
class CropBank:
    """Immutable snapshot of both banks plus refresh bookkeeping."""

    labeled_bank: tuple[CropEntry, ...]
    pseudo_bank: tuple[CropEntry, ...] = ()
    refresh_counter: int = 0  # epochs since the pseudo bank was last rebuilt

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_bank)

    @property
    def n_pseudo(self) -> int:
        return len(self.pseudo_bank)

    def entries_by_class(self) -> dict[int, list[CropEntry]]:
        """Union of both banks grouped by class id."""
        groups: dict[int, list[CropEntry]] = {}
        for entry in self.labeled_bank + self.pseudo_bank:
            groups.setdefault(entry.class_id, []).append(entry)
        return groups

    def pseudo_class_counts(self, n_classes: int) -> np.ndarray:
        counts = np.zeros(n_classes, dtype=np.int64)
        for entry in self.pseudo_bank:
            counts[entry.class_id - 1] += 1
        return counts


def build_labeled_bank(labeled: Dataset) -> CropBank:
    """One labeled crop per ground-truth instance on labeled-flagged images."""
    entries = tuple(
        CropEntry(
            source_image_id=img.id,
            bbox=inst.bbox,
            class_id=inst.class_id,
            score=1.0,
            origin="labeled",
        )
        for img in labeled.labeled_images()
        for inst in img.ground_truth
    )
    return CropBank(labeled_bank=entries)


def refresh_pseudo_bank(
    bank: CropBank,
    pseudo_labels: Mapping[int | str, Sequence[Prediction]],
    period: int,
    epoch: int,
) -> CropBank:
    """Replace the pseudo bank wholesale when ``epoch % period == 0``.

    ``pseudo_labels`` must be post-filtering predictions keyed by image id.
    Off-period epochs leave both banks untouched and only advance the
    refresh counter.
    """
    if period <= 0:
        raise ValueError(f"refresh period must be positive, got {period}")
    if epoch % period != 0:
        return replace(bank, refresh_counter=bank.refresh_counter + 1)
    entries = tuple(
        CropEntry(
            source_image_id=image_id,
            bbox=pred.bbox,
            class_id=pred.class_id,
            score=pred.score,
            origin="pseudo",
        )
        for image_id, preds in pseudo_labels.items()
        for pred in preds
    )
    return CropBank(
        labeled_bank=bank.labeled_bank, pseudo_bank=entries, refresh_counter=0
    )


def sample_crops(
    bank: CropBank,
    distribution: "SamplingDistribution",
    n: int,
    rng: np.random.Generator,
) -> list[CropEntry]:
    """Draw ``n`` crops: class by the distribution, entry uniformly within class.

    Classes without any stored entry are excluded and the class weights are
    renormalized over the rest. Raises :class:`EmptyBankError` when both banks
    are empty and ValueError when no available class has positive weight.
    """
    if n < 0:
        raise ValueError(f"sample size must be non-negative, got {n}")
    groups = bank.entries_by_class()
    if not groups:
        raise EmptyBankError("both banks are empty, nothing to sample")
    mu = np.asarray(distribution.mu, dtype=float)
    available = [k for k in range(1, len(mu) + 1) if groups.get(k)]
    if not available:
        raise EmptyBankError("no stored crop falls inside the distribution's classes")
    weights = mu[np.array(available) - 1]
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("no available class has positive sampling probability")
    if n == 0:
        return []
    class_draws = rng.choice(len(available), size=n, p=weights / total)
    entry_u = rng.random(n)
    out = []
    for ci, u in zip(class_draws, entry_u):
        pool = groups[available[int(ci)]]
        out.append(pool[int(u * len(pool))])
    return out


def bank_to_csv(bank: CropBank) -> str:
    """Debug dump of both banks, labeled entries first."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["source_image_id", "class_id", "x", "y", "w", "h", "score", "origin"]
    )
    for entry in bank.labeled_bank + bank.pseudo_bank:
        b = entry.bbox
        writer.writerow(
            [entry.source_image_id, entry.class_id, b.x, b.y, b.w, b.h, entry.score, entry.origin]
        )
    return buf.getvalue()
