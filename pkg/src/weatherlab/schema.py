"""Shared domain types, the on-disk manifest document, and external-format importers.

Every other module trades in the types defined here. All types are immutable
values after construction and safe to share across workers; parsing and
serialization are pure functions of their inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import PurePosixPath


MANIFEST_SCHEMA_VERSION = "1"


class WeatherCondition(Enum):
    DEFAULT = "default"
    RAIN = "rain"
    FOG = "fog"
    NIGHT = "night"
    SNOW = "snow"


# Canonical ordering used wherever conditions index RNG streams or sort keys.
CONDITIONS: tuple[WeatherCondition, ...] = (
    WeatherCondition.DEFAULT,
    WeatherCondition.RAIN,
    WeatherCondition.FOG,
    WeatherCondition.NIGHT,
    WeatherCondition.SNOW,
)
CONDITION_INDEX: dict[WeatherCondition, int] = {c: i for i, c in enumerate(CONDITIONS)}


class ObjectClass(Enum):
    WALKER = "walker"
    VEHICLE = "vehicle"
    TRAFFIC_SIGN = "traffic_sign"
    TRAFFIC_LIGHT = "traffic_light"


CLASSES: tuple[ObjectClass, ...] = (
    ObjectClass.WALKER,
    ObjectClass.VEHICLE,
    ObjectClass.TRAFFIC_SIGN,
    ObjectClass.TRAFFIC_LIGHT,
)
CLASS_INDEX: dict[ObjectClass, int] = {c: i for i, c in enumerate(CLASSES)}


class Provenance(Enum):
    CAPTURED = "captured"
    RENDERED = "rendered"
    AUGMENTED = "augmented"


class ReviewState(Enum):
    NOT_APPLICABLE = "not_applicable"
    PENDING = "pending"
    KEPT = "kept"
    REJECTED_HALLUCINATION = "rejected_hallucination"
    REJECTED_UNREALISTIC = "rejected_unrealistic"


REJECTED_STATES = (ReviewState.REJECTED_HALLUCINATION, ReviewState.REJECTED_UNREALISTIC)


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class Framework(Enum):
    SIMULATED = "simulated"
    REAL_WORLD = "real_world"


class ManifestError(Exception):
    """Base class for manifest document problems."""


class ManifestSyntaxError(ManifestError):
    """The document is not well-formed (bad JSON, wrong top-level shape)."""


class ManifestSemanticError(ManifestError):
    """The document parses but violates manifest invariants."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


class LabelImportError(Exception):
    """A malformed entry in an external label file, reported with its index."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, origin top-left, half-open pixel arithmetic downstream."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"bbox coordinates must be finite, got {coords}")
        if min(coords) < 0:
            raise ValueError(f"bbox coordinates must be >= 0, got {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"bbox must have positive area, got {coords}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Annotation:
    bbox: BBox
    object_class: ObjectClass


@dataclass(frozen=True)
class Prediction:
    bbox: BBox
    object_class: ObjectClass
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class ImageRecord:
    """One image with its annotations, weather condition, and provenance.

    Cross-field consistency (augmented <=> source_id <=> review state) is a
    manifest-level invariant checked by validate_manifest, not at construction,
    so that broken documents can be diagnosed rather than merely refused.
    """

    id: str
    image_path: str
    condition: WeatherCondition
    provenance: Provenance
    review_state: ReviewState = ReviewState.NOT_APPLICABLE
    source_id: str | None = None
    recipe_id: str | None = None
    annotations: tuple[Annotation, ...] = ()

    def with_review_state(self, state: ReviewState) -> "ImageRecord":
        return replace(self, review_state=state)


@dataclass(frozen=True)
class DatasetManifest:
    """Record collection keyed by id: record order is canonicalized (sorted by
    id) at construction, so equal content compares equal and serialization is
    deterministic regardless of how the records were assembled."""

    framework: Framework
    records: tuple[ImageRecord, ...] = ()
    split_assignment: dict[str, Split] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(sorted(self.records, key=lambda r: r.id)))

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.id: r for r in self.records}

    def split_of(self, record_id: str) -> Split | None:
        return self.split_assignment.get(record_id)


# --------------------------------------------------------------------------
# Manifest validation
# --------------------------------------------------------------------------

def validate_manifest(manifest: DatasetManifest) -> list[str]:
    """Return one human-readable violation per broken invariant, or [] if valid."""
    violations: list[str] = []
    seen: dict[str, ImageRecord] = {}
    for record in manifest.records:
        if record.id in seen:
            violations.append(f"record {record.id}: duplicate id")
        else:
            seen[record.id] = record

    for record in manifest.records:
        rid = record.id
        augmented = record.provenance is Provenance.AUGMENTED
        if augmented and record.source_id is None:
            violations.append(f"record {rid}: augmented record missing source_id")
        if not augmented and record.source_id is not None:
            violations.append(f"record {rid}: source_id set on non-augmented record")
        if augmented and record.review_state is ReviewState.NOT_APPLICABLE:
            violations.append(f"record {rid}: augmented record with review_state not_applicable")
        if not augmented and record.review_state is not ReviewState.NOT_APPLICABLE:
            violations.append(f"record {rid}: review_state {record.review_state.value} on non-augmented record")
        if record.condition is WeatherCondition.SNOW and manifest.framework is Framework.SIMULATED:
            violations.append(f"record {rid}: snow condition is not valid in the simulated framework")
        if record.source_id is not None:
            source = seen.get(record.source_id)
            if source is None:
                violations.append(f"record {rid}: dangling source_id {record.source_id}")
            elif record.annotations != source.annotations:
                violations.append(f"record {rid}: annotations differ from source {record.source_id}")

    for rid in manifest.split_assignment:
        if rid not in seen:
            violations.append(f"splits: unknown record id {rid}")
    return violations


# --------------------------------------------------------------------------
# Manifest document (UTF-8 JSON, field names fixed by the wire format)
# --------------------------------------------------------------------------

def _annotation_from_json(obj: dict, rid: str, index: int) -> Annotation:
    try:
        cls = ObjectClass(obj["class"])
        coords = obj["bbox"]
        bbox = BBox(*(float(c) for c in coords))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestSemanticError([f"record {rid}: annotation {index}: {exc}"]) from exc
    return Annotation(bbox=bbox, object_class=cls)


def _record_from_json(obj: dict, index: int) -> ImageRecord:
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise ManifestSemanticError([f"record at index {index}: missing or empty id"])
    try:
        condition = WeatherCondition(obj["condition"])
        provenance = Provenance(obj["provenance"])
        review_state = ReviewState(obj["review_state"])
        image = obj["image"]
    except (KeyError, ValueError) as exc:
        raise ManifestSemanticError([f"record {rid}: {exc}"]) from exc
    annotations = tuple(
        _annotation_from_json(a, rid, i) for i, a in enumerate(obj.get("annotations", []))
    )
    return ImageRecord(
        id=rid,
        image_path=str(image),
        condition=condition,
        provenance=provenance,
        review_state=review_state,
        source_id=obj.get("source_id"),
        recipe_id=obj.get("recipe_id"),
        annotations=annotations,
    )


def parse_manifest(document: bytes) -> DatasetManifest:
    """Parse and fully validate a manifest document.

    Raises ManifestSyntaxError for malformed documents and ManifestSemanticError
    (carrying every violation, each naming the record and field) for documents
    that parse but break an invariant.
    """
    try:
        top = json.loads(document.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestSyntaxError(f"not a UTF-8 JSON document: {exc}") from exc
    if not isinstance(top, dict) or "framework" not in top or "records" not in top:
        raise ManifestSyntaxError('top level must be an object with "framework" and "records"')
    try:
        framework = Framework(top["framework"])
    except ValueError as exc:
        raise ManifestSemanticError([f"framework: {exc}"]) from exc
    if not isinstance(top["records"], list):
        raise ManifestSyntaxError('"records" must be a list')

    records = tuple(_record_from_json(obj, i) for i, obj in enumerate(top["records"]))

    splits: dict[str, Split] = {}
    raw_splits = top.get("splits", {})
    if not isinstance(raw_splits, dict):
        raise ManifestSyntaxError('"splits" must be an object mapping id to split')
    for rid, value in raw_splits.items():
        try:
            splits[rid] = Split(value)
        except ValueError as exc:
            raise ManifestSemanticError([f"splits: record {rid}: {exc}"]) from exc

    manifest = DatasetManifest(framework=framework, records=records, split_assignment=splits)
    violations = validate_manifest(manifest)
    if violations:
        raise ManifestSemanticError(violations)
    return manifest


def _record_to_json(record: ImageRecord) -> dict:
    obj: dict = {
        "id": record.id,
        "image": record.image_path,
        "condition": record.condition.value,
        "provenance": record.provenance.value,
    }
    if record.source_id is not None:
        obj["source_id"] = record.source_id
    if record.recipe_id is not None:
        obj["recipe_id"] = record.recipe_id
    obj["review_state"] = record.review_state.value
    obj["annotations"] = [
        {"class": a.object_class.value, "bbox": a.bbox.as_list()} for a in record.annotations
    ]
    return obj


def serialize_manifest(manifest: DatasetManifest) -> bytes:
    """Serialize deterministically: records and split keys sorted by id."""
    top = {
        "framework": manifest.framework.value,
        "records": [_record_to_json(r) for r in sorted(manifest.records, key=lambda r: r.id)],
        "splits": {
            rid: manifest.split_assignment[rid].value
            for rid in sorted(manifest.split_assignment)
        },
    }
    return (json.dumps(top, indent=2) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# Prediction file (JSON Lines, one object per line)
# --------------------------------------------------------------------------

def parse_predictions(document: bytes) -> dict[str, list[Prediction]]:
    """Parse a detector prediction file into image_id -> predictions (input order kept)."""
    out: dict[str, list[Prediction]] = {}
    for lineno, line in enumerate(document.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            image_id = obj["image_id"]
            pred = Prediction(
                bbox=BBox(*(float(c) for c in obj["bbox"])),
                object_class=ObjectClass(obj["class"]),
                confidence=float(obj["confidence"]),
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise LabelImportError(f"prediction line {lineno}: {exc}") from exc
        out.setdefault(image_id, []).append(pred)
    return out


def serialize_predictions(predictions: dict[str, list[Prediction]]) -> bytes:
    lines = []
    for image_id in sorted(predictions):
        for p in predictions[image_id]:
            lines.append(json.dumps({
                "image_id": image_id,
                "class": p.object_class.value,
                "bbox": p.bbox.as_list(),
                "confidence": p.confidence,
            }))
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


# --------------------------------------------------------------------------
# BDD100K detection-label import
# --------------------------------------------------------------------------

# All BDD100K vehicle subtypes collapse into the single vehicle class.
BDD_CATEGORY_MAP: dict[str, ObjectClass] = {
    "person": ObjectClass.WALKER,
    "car": ObjectClass.VEHICLE,
    "bus": ObjectClass.VEHICLE,
    "truck": ObjectClass.VEHICLE,
    "motorcycle": ObjectClass.VEHICLE,
    "bicycle": ObjectClass.VEHICLE,
    "train": ObjectClass.VEHICLE,
    "traffic sign": ObjectClass.TRAFFIC_SIGN,
    "traffic light": ObjectClass.TRAFFIC_LIGHT,
}

KNOWN_BDD_WEATHER = {
    "clear", "partly cloudy", "overcast", "rainy", "snowy", "foggy", "undefined",
}


@dataclass(frozen=True)
class ImportResult:
    manifest: DatasetManifest
    imported: int
    excluded: int
    unknown_weather_skipped: int


def import_bdd100k(
    labels: bytes,
    image_root: str = "",
    weather: str = "clear",
    timeofday: str = "daytime",
) -> ImportResult:
    """Import BDD100K detection labels as clear-weather daytime captured records.

    Only entries whose attributes match the (configurable) weather/timeofday
    filter are imported, as condition=default, provenance=captured. Categories
    outside the four-class universe are dropped; entries with nothing mappable
    are still imported with empty annotation lists. Entries whose weather
    attribute is not a known BDD100K value are skipped and counted.
    """
    try:
        entries = json.loads(labels.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LabelImportError(f"label file is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise LabelImportError("label file must be a JSON list of entries")

    records: list[ImageRecord] = []
    excluded = 0
    unknown_weather = 0
    for index, entry in enumerate(entries):
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
            raise LabelImportError(f"entry {index}: missing image name")
        attributes = entry.get("attributes", {})
        entry_weather = attributes.get("weather", "undefined")
        if entry_weather not in KNOWN_BDD_WEATHER:
            unknown_weather += 1
            continue
        if entry_weather != weather or attributes.get("timeofday") != timeofday:
            excluded += 1
            continue

        name = entry["name"]
        annotations: list[Annotation] = []
        for label in entry.get("labels", []) or []:
            category = label.get("category")
            mapped = BDD_CATEGORY_MAP.get(category)
            box2d = label.get("box2d")
            if mapped is None or box2d is None:
                continue
            try:
                bbox = BBox(
                    float(box2d["x1"]), float(box2d["y1"]),
                    float(box2d["x2"]), float(box2d["y2"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise LabelImportError(f"entry {index} ({name}): bad box2d: {exc}") from exc
            annotations.append(Annotation(bbox=bbox, object_class=mapped))

        image_path = str(PurePosixPath(image_root) / name) if image_root else name
        records.append(ImageRecord(
            id=PurePosixPath(name).stem,
            image_path=image_path,
            condition=WeatherCondition.DEFAULT,
            provenance=Provenance.CAPTURED,
            annotations=tuple(annotations),
        ))

    manifest = DatasetManifest(framework=Framework.REAL_WORLD, records=tuple(records))
    violations = validate_manifest(manifest)
    if violations:
        raise ManifestSemanticError(violations)
    return ImportResult(
        manifest=manifest,
        imported=len(records),
        excluded=excluded,
        unknown_weather_skipped=unknown_weather,
    )
