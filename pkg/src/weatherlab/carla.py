"""Simulator-export ingestion: turns rendered frames into manifest records.

Simulator bounding boxes include objects that are occluded in the rendered
frame ("ghost boxes"). Each box is scored by the fraction of pixels inside it
whose semantic-segmentation class id matches the box's class id; boxes below a
visibility threshold are dropped.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .schema import (
    Annotation,
    BBox,
    ImageRecord,
    LabelImportError,
    ObjectClass,
    Provenance,
    WeatherCondition,
)


@dataclass(frozen=True)
class SegmentationImage:
    """Per-pixel integer class labels, shape (height, width)."""

    class_ids: np.ndarray

    def __post_init__(self):
        if self.class_ids.ndim != 2:
            raise ValueError(f"segmentation must be 2-D, got shape {self.class_ids.shape}")
        if np.issubdtype(self.class_ids.dtype, np.signedinteger) and self.class_ids.min(initial=0) < 0:
            raise ValueError("segmentation class ids must be non-negative")

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    def class_id_at(self, x: int, y: int) -> int:
        return int(self.class_ids[y, x])


def load_segmentation(data: bytes, red_channel: bool = False) -> SegmentationImage:
    """Decode a segmentation PNG: single-channel class ids, or ids in the red channel."""
    image = Image.open(io.BytesIO(data))
    array = np.asarray(image)
    if red_channel:
        if array.ndim != 3:
            raise LabelImportError("red-channel segmentation requires an RGB image")
        array = array[:, :, 0]
    elif array.ndim == 3:
        raise LabelImportError("segmentation image has multiple channels; pass red_channel=True for RGB masks")
    return SegmentationImage(class_ids=array.astype(np.int64))


@dataclass(frozen=True)
class RawCarlaBox:
    bbox: BBox
    object_class: ObjectClass
    seg_class_id: int


@dataclass(frozen=True)
class CarlaFrame:
    frame_id: str
    boxes: tuple[RawCarlaBox, ...]


def parse_carla_frames(document: bytes) -> list[CarlaFrame]:
    """Parse the raw-boxes JSON Lines export, one frame per line.

    Coordinates below zero are clamped at parse time; simulator boxes routinely
    extend past the frame edge and the right/bottom overhang is clipped later
    against the segmentation extent.
    """
    frames: list[CarlaFrame] = []
    for lineno, line in enumerate(document.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            frame_id = obj["frame_id"]
            boxes = []
            for i, b in enumerate(obj["boxes"]):
                coords = [float(c) for c in b["bbox"]]
                clamped = [max(0.0, c) for c in coords]
                try:
                    bbox = BBox(*clamped)
                except ValueError as exc:
                    raise LabelImportError(
                        f"frame {frame_id}: box {i}: {exc}"
                    ) from exc
                boxes.append(RawCarlaBox(
                    bbox=bbox,
                    object_class=ObjectClass(b["class"]),
                    seg_class_id=int(b["seg_class_id"]),
                ))
        except LabelImportError:
            raise
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise LabelImportError(f"frames line {lineno}: {exc}") from exc
        frames.append(CarlaFrame(frame_id=frame_id, boxes=tuple(boxes)))
    return frames


def _pixel_extent(box: RawCarlaBox, seg: SegmentationImage) -> tuple[int, int, int, int]:
    """Clip to image bounds and snap to the integer pixel grid (half-open)."""
    x0 = max(0, math.floor(box.bbox.x_min))
    y0 = max(0, math.floor(box.bbox.y_min))
    x1 = min(seg.width, math.ceil(box.bbox.x_max))
    y1 = min(seg.height, math.ceil(box.bbox.y_max))
    if x1 <= x0 or y1 <= y0:
        raise ValueError(
            f"box {box.bbox.as_list()} (class {box.object_class.value}) lies outside "
            f"the {seg.width}x{seg.height} image"
        )
    return x0, y0, x1, y1


def visible_fraction(box: RawCarlaBox, seg: SegmentationImage) -> float:
    """Fraction of pixels inside the (clipped) box whose class id matches the box's."""
    x0, y0, x1, y1 = _pixel_extent(box, seg)
    window = seg.class_ids[y0:y1, x0:x1]
    matching = int(np.count_nonzero(window == box.seg_class_id))
    return matching / ((x1 - x0) * (y1 - y0))


def _clip_to_image(bbox: BBox, seg: SegmentationImage) -> BBox:
    return BBox(
        x_min=min(bbox.x_min, seg.width - 1.0),
        y_min=min(bbox.y_min, seg.height - 1.0),
        x_max=min(bbox.x_max, float(seg.width)),
        y_max=min(bbox.y_max, float(seg.height)),
    )


def filter_ghost_boxes(
    boxes: list[RawCarlaBox],
    seg: SegmentationImage,
    min_visible_fraction: float = 0.2,
) -> tuple[list[Annotation], list[RawCarlaBox]]:
    """Partition boxes into (kept annotations, removed ghosts), input order preserved."""
    if not (0.0 <= min_visible_fraction <= 1.0):
        raise ValueError(f"min_visible_fraction must be in [0, 1], got {min_visible_fraction}")
    kept: list[Annotation] = []
    removed: list[RawCarlaBox] = []
    for box in boxes:
        if visible_fraction(box, seg) >= min_visible_fraction:
            kept.append(Annotation(bbox=_clip_to_image(box.bbox, seg), object_class=box.object_class))
        else:
            removed.append(box)
    return kept, removed


def ingest_carla_frame(
    rgb: np.ndarray,
    seg: SegmentationImage,
    boxes: list[RawCarlaBox],
    condition: WeatherCondition,
    min_visible_fraction: float = 0.2,
    *,
    frame_id: str,
    image_path: str,
) -> ImageRecord:
    """Build a rendered-provenance record for one frame, ghost boxes removed."""
    if rgb.shape[0] != seg.height or rgb.shape[1] != seg.width:
        raise ValueError(
            f"frame {frame_id}: RGB is {rgb.shape[1]}x{rgb.shape[0]} but "
            f"segmentation is {seg.width}x{seg.height}"
        )
    kept, _ = filter_ghost_boxes(boxes, seg, min_visible_fraction)
    return ImageRecord(
        id=frame_id,
        image_path=image_path,
        condition=condition,
        provenance=Provenance.RENDERED,
        annotations=tuple(kept),
    )
