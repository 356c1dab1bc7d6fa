"""Annotation data model, COCO-style JSON ingestion, and labeled/unlabeled splits.

The on-disk format is a JSON object with ``images``, ``annotations`` and
``categories`` sections. Category ids are remapped to contiguous 1..K in input
order; the original ids are kept on :class:`Category` so reports can echo them.
Unknown keys anywhere in the document are ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


class ParseError(ValueError):
    """Annotation document is not valid JSON or misses a required section."""


class ValidationError(ValueError):
    """Annotation document violates a schema constraint."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box as (left, top, width, height) in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def intersection(self, other: BBox) -> BBox | None:
        """Overlap rectangle with ``other``, or None when disjoint."""
        x1 = max(self.x, other.x)
        y1 = max(self.y, other.y)
        x2 = min(self.x2, other.x2)
        y2 = min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return BBox(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class Instance:
    """One ground-truth object: a class id and a box on a source image."""

    class_id: int
    bbox: BBox
    source_image_id: int | str


@dataclass(frozen=True)
class Prediction:
    """One detector output: class, box and confidence score in [0, 1]."""

    class_id: int
    bbox: BBox
    score: float


@dataclass(frozen=True)
class Category:
    """Class with contiguous ``id`` (1..K) and the original file id."""

    id: int
    name: str
    source_id: int


@dataclass(frozen=True)
class ImageRecord:
    """An image and its ground-truth instances.

    All ground-truth boxes must lie inside [0, width] x [0, height].
    """

    id: int | str
    width: float
    height: float
    ground_truth: tuple[Instance, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.id}: non-positive dimensions")
        for inst in self.ground_truth:
            b = inst.bbox
            if b.x < 0 or b.y < 0 or b.x2 > self.width or b.y2 > self.height:
                raise ValueError(
                    f"image {self.id}: ground-truth box {b} outside image bounds"
                )


@dataclass(frozen=True)
class Dataset:
    """Images plus the category table and a per-image labeled flag.

    ``labeled_flags`` runs parallel to ``images``. Unlabeled images keep their
    ground truth so metrics can be computed against it; the flag marks it as
    hidden from training.
    """

    images: tuple[ImageRecord, ...]
    categories: tuple[Category, ...]
    labeled_flags: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.images) != len(self.labeled_flags):
            raise ValueError("labeled_flags must parallel images")

    @property
    def num_classes(self) -> int:
        return len(self.categories)

    @property
    def n_labeled(self) -> int:
        return sum(self.labeled_flags)

    @property
    def n_unlabeled(self) -> int:
        return len(self.images) - self.n_labeled

    def labeled_images(self) -> Iterator[ImageRecord]:
        for img, flag in zip(self.images, self.labeled_flags):
            if flag:
                yield img

    def unlabeled_images(self) -> Iterator[ImageRecord]:
        for img, flag in zip(self.images, self.labeled_flags):
            if not flag:
                yield img


def _require(record: dict, key: str, what: str):
    if key not in record:
        raise ValidationError(f"{what} record missing required field '{key}'")
    return record[key]


def parse_coco_annotations(text: str) -> Dataset:
    """Parse an annotation document into a :class:`Dataset`.

    Raises :class:`ParseError` for malformed JSON or missing sections and
    :class:`ValidationError` for schema violations; validation messages name
    the offending record id. All images start labeled; use
    :func:`split_standard` to divide them.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(
            f"malformed annotation document: {e.msg} (line {e.lineno} column {e.colno})"
        ) from e
    if not isinstance(doc, dict):
        raise ParseError("annotation document must be a JSON object")
    for section in ("images", "annotations", "categories"):
        if section not in doc:
            raise ParseError(f"annotation document missing '{section}' section")

    categories: list[Category] = []
    class_of_source: dict[int, int] = {}
    for slot, cat in enumerate(doc["categories"], start=1):
        source_id = _require(cat, "id", "category")
        name = _require(cat, "name", "category")
        if source_id in class_of_source:
            raise ValidationError(f"duplicate category id {source_id}")
        class_of_source[source_id] = slot
        categories.append(Category(id=slot, name=str(name), source_id=int(source_id)))

    image_meta: dict = {}
    image_order: list = []
    for img in doc["images"]:
        image_id = _require(img, "id", "image")
        width = _require(img, "width", "image")
        height = _require(img, "height", "image")
        if image_id in image_meta:
            raise ValidationError(f"duplicate image id {image_id}")
        if width <= 0 or height <= 0:
            raise ValidationError(f"image {image_id} has non-positive dimensions")
        image_meta[image_id] = (float(width), float(height))
        image_order.append(image_id)

    instances: dict[object, list[Instance]] = {i: [] for i in image_order}
    seen_ann: set = set()
    for ann in doc["annotations"]:
        ann_id = _require(ann, "id", "annotation")
        image_id = _require(ann, "image_id", "annotation")
        cat_id = _require(ann, "category_id", "annotation")
        bbox = _require(ann, "bbox", "annotation")
        if ann_id in seen_ann:
            raise ValidationError(f"duplicate annotation id {ann_id}")
        seen_ann.add(ann_id)
        if image_id not in image_meta:
            raise ValidationError(
                f"annotation {ann_id} references unknown image {image_id}"
            )
        if cat_id not in class_of_source:
            raise ValidationError(
                f"annotation {ann_id} references unknown category {cat_id}"
            )
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise ValidationError(f"annotation {ann_id} bbox must be [x, y, w, h]")
        x, y, w, h = (float(v) for v in bbox)
        if w <= 0 or h <= 0:
            raise ValidationError(f"annotation {ann_id} has non-positive box sides")
        width, height = image_meta[image_id]
        if x < 0 or y < 0 or x + w > width or y + h > height:
            raise ValidationError(f"annotation {ann_id} box exceeds image bounds")
        instances[image_id].append(
            Instance(
                class_id=class_of_source[cat_id],
                bbox=BBox(x, y, w, h),
                source_image_id=image_id,
            )
        )

    images = tuple(
        ImageRecord(
            id=image_id,
            width=image_meta[image_id][0],
            height=image_meta[image_id][1],
            ground_truth=tuple(instances[image_id]),
        )
        for image_id in image_order
    )
    return Dataset(
        images=images,
        categories=tuple(categories),
        labeled_flags=(True,) * len(images),
    )


def serialize_coco_annotations(dataset: Dataset) -> str:
    """Inverse of :func:`parse_coco_annotations` (annotation ids regenerated)."""
    source_of_class = {c.id: c.source_id for c in dataset.categories}
    annotations = []
    next_id = 1
    for img in dataset.images:
        for inst in img.ground_truth:
            annotations.append(
                {
                    "id": next_id,
                    "image_id": img.id,
                    "category_id": source_of_class[inst.class_id],
                    "bbox": [inst.bbox.x, inst.bbox.y, inst.bbox.w, inst.bbox.h],
                }
            )
            next_id += 1
    doc = {
        "images": [
            {"id": img.id, "width": img.width, "height": img.height}
            for img in dataset.images
        ],
        "annotations": annotations,
        "categories": [
            {"id": c.source_id, "name": c.name} for c in dataset.categories
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def split_standard(
    dataset: Dataset, fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Partition into a labeled and an unlabeled dataset.

    round(fraction * N) images are chosen uniformly at random (seeded) for the
    labeled side. The unlabeled side keeps its ground truth but is flagged
    hidden. Image order within each side follows the input order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must be in (0, 1), got {fraction}")
    if not dataset.images:
        raise ValueError("cannot split an empty dataset")
    n = len(dataset.images)
    n_labeled = int(round(fraction * n))
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(n, size=n_labeled, replace=False).tolist())
    labeled_images = tuple(img for i, img in enumerate(dataset.images) if i in chosen)
    unlabeled_images = tuple(
        img for i, img in enumerate(dataset.images) if i not in chosen
    )
    labeled = Dataset(
        images=labeled_images,
        categories=dataset.categories,
        labeled_flags=(True,) * len(labeled_images),
    )
    unlabeled = Dataset(
        images=unlabeled_images,
        categories=dataset.categories,
        labeled_flags=(False,) * len(unlabeled_images),
    )
    return labeled, unlabeled


def class_counts(dataset: Dataset, labeled_only: bool = False) -> np.ndarray:
    """Instance counts per class (index k-1 = class k), hidden truth included.

    With ``labeled_only`` only instances on labeled-flagged images count.
    """
    counts = np.zeros(dataset.num_classes, dtype=np.int64)
    for img, flag in zip(dataset.images, dataset.labeled_flags):
        if labeled_only and not flag:
            continue
        for inst in img.ground_truth:
            counts[inst.class_id - 1] += 1
    return counts
