"""Bounding boxes from semantic segmentation masks via connected components.

Used where a dataset annotates a class only as segmentation (ACDC-style
traffic lights/signs): each sufficiently large connected component of a mapped
class id becomes one tight axis-aligned box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .schema import CLASS_INDEX, Annotation, BBox, ImageRecord, ObjectClass
from .carla import SegmentationImage


class Connectivity(Enum):
    FOUR = "four"
    EIGHT = "eight"


_STRUCTURES = {
    Connectivity.FOUR: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    Connectivity.EIGHT: np.ones((3, 3), dtype=bool),
}


@dataclass(frozen=True)
class ClassMap:
    """Mask class id -> object class; injective on the listed ids."""

    entries: dict[int, ObjectClass]

    def __post_init__(self):
        classes = list(self.entries.values())
        if len(set(classes)) != len(classes):
            raise ValueError("class map must be injective (one mask id per object class)")


def parse_class_map(document: bytes) -> ClassMap:
    raw = json.loads(document.decode("utf-8"))
    return ClassMap(entries={int(k): ObjectClass(v) for k, v in raw.items()})


def boxes_from_mask(
    seg: SegmentationImage,
    class_map: ClassMap,
    connectivity: Connectivity = Connectivity.EIGHT,
    min_area: int = 16,
) -> list[Annotation]:
    """One tight half-open box per connected component with >= min_area pixels.

    Output is sorted by (class, y_min, x_min); class order follows the fixed
    four-class universe.
    """
    if min_area < 1:
        raise ValueError(f"min_area must be >= 1, got {min_area}")
    structure = _STRUCTURES[connectivity]
    annotations: list[Annotation] = []
    for class_id in sorted(class_map.entries):
        object_class = class_map.entries[class_id]
        mask = seg.class_ids == class_id
        if not mask.any():
            continue
        labeled, n_components = ndimage.label(mask, structure=structure)
        component_sizes = np.bincount(labeled.ravel())[1:]
        slices = ndimage.find_objects(labeled)
        for component, sl in enumerate(slices):
            if component_sizes[component] < min_area:
                continue
            rows, cols = sl
            annotations.append(Annotation(
                bbox=BBox(
                    x_min=float(cols.start), y_min=float(rows.start),
                    x_max=float(cols.stop), y_max=float(rows.stop),
                ),
                object_class=object_class,
            ))
    annotations.sort(key=lambda a: (CLASS_INDEX[a.object_class], a.bbox.y_min, a.bbox.x_min))
    return annotations


def enrich_record(
    record: ImageRecord,
    seg: SegmentationImage,
    class_map: ClassMap,
    connectivity: Connectivity = Connectivity.EIGHT,
    min_area: int = 16,
    image_size: tuple[int, int] | None = None,
) -> ImageRecord:
    """Append mask-derived boxes to a record's annotations (originals untouched).

    image_size is (width, height) of the record's image when known; a mismatch
    against the mask is an error.
    """
    if image_size is not None and image_size != (seg.width, seg.height):
        raise ValueError(
            f"record {record.id}: image is {image_size[0]}x{image_size[1]} but "
            f"mask is {seg.width}x{seg.height}"
        )
    derived = boxes_from_mask(seg, class_map, connectivity, min_area)
    return ImageRecord(
        id=record.id,
        image_path=record.image_path,
        condition=record.condition,
        provenance=record.provenance,
        review_state=record.review_state,
        source_id=record.source_id,
        recipe_id=record.recipe_id,
        annotations=record.annotations + tuple(derived),
    )
