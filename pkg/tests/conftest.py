import io

import numpy as np
import pytest
from PIL import Image

from weatherlab.schema import (
    Annotation,
    BBox,
    DatasetManifest,
    Framework,
    ImageRecord,
    ObjectClass,
    Provenance,
    ReviewState,
    WeatherCondition,
)


def make_record(
    rid: str,
    condition: WeatherCondition = WeatherCondition.DEFAULT,
    provenance: Provenance = Provenance.CAPTURED,
    source_id: str | None = None,
    recipe_id: str | None = None,
    review_state: ReviewState = ReviewState.NOT_APPLICABLE,
    annotations: tuple[Annotation, ...] = (),
    image_path: str | None = None,
) -> ImageRecord:
    return ImageRecord(
        id=rid,
        image_path=image_path if image_path is not None else f"{rid}.png",
        condition=condition,
        provenance=provenance,
        review_state=review_state,
        source_id=source_id,
        recipe_id=recipe_id,
        annotations=annotations,
    )


def make_annotation(x0=0.0, y0=0.0, x1=10.0, y1=10.0, cls=ObjectClass.VEHICLE) -> Annotation:
    return Annotation(bbox=BBox(x0, y0, x1, y1), object_class=cls)


def gradient_png(width: int = 32, height: int = 24, seed: int = 0) -> bytes:
    """Deterministic small RGB PNG with varied pixel values."""
    rng = np.random.default_rng(seed)
    base = rng.integers(30, 200, size=(height, width, 3), dtype=np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(base, mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()


def png_pixels(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8)


@pytest.fixture
def five_record_manifest() -> DatasetManifest:
    ann = (make_annotation(1, 2, 5, 8, ObjectClass.WALKER),
           make_annotation(3, 3, 9, 9, ObjectClass.VEHICLE))
    records = (
        make_record("a", annotations=ann),
        make_record("b"),
        make_record("c", condition=WeatherCondition.FOG, provenance=Provenance.RENDERED),
        make_record(
            "a__fog",
            condition=WeatherCondition.FOG,
            provenance=Provenance.AUGMENTED,
            source_id="a",
            recipe_id="sim_fog",
            review_state=ReviewState.PENDING,
            annotations=ann,
        ),
        make_record(
            "b__rain",
            condition=WeatherCondition.RAIN,
            provenance=Provenance.AUGMENTED,
            source_id="b",
            recipe_id="sim_rain",
            review_state=ReviewState.KEPT,
        ),
    )
    from weatherlab.schema import Split
    return DatasetManifest(
        framework=Framework.SIMULATED,
        records=records,
        split_assignment={"a": Split.TRAIN, "b": Split.VAL, "c": Split.TEST},
    )
