"""End-to-end pipeline driver on a 6-image synthetic fixture, used by the CLI
tests and the acceptance suite.

Flow: source manifest -> augment (mock backend, including a hallucination
recipe) -> scripted review decisions (every hallucinated image rejected) ->
finalize -> test-set carve -> compose -> synthetic predictions -> evaluate ->
report (table + csv + figures).
"""

from __future__ import annotations

import json
from pathlib import Path

from weatherlab.cli import main
from weatherlab.review import ReviewDecision, ReviewSession
from weatherlab.schema import (
    Annotation,
    BBox,
    DatasetManifest,
    Framework,
    ImageRecord,
    ObjectClass,
    Prediction,
    Provenance,
    ReviewState,
    Split,
    WeatherCondition,
    parse_manifest,
    serialize_manifest,
    serialize_predictions,
)

from conftest import gradient_png


CUSTOM_RECIPES = [
    {
        "id": "sim_rain", "framework": "simulated", "condition": "rain",
        "steps": [
            {"prompt": "What would it look if it were raining a lot?",
             "guidance_scale": 1.45, "inference_steps": 100},
            {"prompt": "Add raindrops on the camera lens.",
             "guidance_scale": 1.65, "inference_steps": 100},
        ],
    },
    {
        "id": "sim_fog", "framework": "simulated", "condition": "fog",
        "steps": [
            {"prompt": "Add dense fog to the image.",
             "guidance_scale": 1.9, "inference_steps": 100},
        ],
    },
    {
        "id": "sim_night_glitch", "framework": "simulated", "condition": "night",
        "steps": [
            {"prompt": "hallucinate", "guidance_scale": 1.5, "inference_steps": 100},
        ],
    },
]


def build_sources(root: Path, n: int = 6) -> Path:
    """Six clear-weather rendered records with one vehicle box each."""
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n):
        rid = f"frame{i}"
        (root / f"{rid}.png").write_bytes(gradient_png(24, 18, seed=100 + i))
        records.append(ImageRecord(
            id=rid,
            image_path=f"{rid}.png",
            condition=WeatherCondition.DEFAULT,
            provenance=Provenance.RENDERED,
            annotations=(
                Annotation(bbox=BBox(2 + i, 3, 12 + i, 13), object_class=ObjectClass.VEHICLE),
            ),
        ))
    manifest = DatasetManifest(framework=Framework.SIMULATED, records=tuple(records))
    path = root / "manifest.json"
    path.write_bytes(serialize_manifest(manifest))
    return path


def script_decisions(manifest_path: Path, log_path: Path) -> tuple[int, int]:
    """Keep every pending image except the hallucination recipe's output."""
    manifest = parse_manifest(manifest_path.read_bytes())
    session = ReviewSession(manifest, log_path)
    kept = rejected = 0
    while (pair := session.next_pending()) is not None:
        _, augmented = pair
        if augmented.recipe_id == "sim_night_glitch":
            verdict = ReviewState.REJECTED_HALLUCINATION
            rejected += 1
        else:
            verdict = ReviewState.KEPT
            kept += 1
        session.record_decision(ReviewDecision(augmented.id, verdict, "scripted"))
    return kept, rejected


def perfect_predictions(manifest: DatasetManifest) -> dict[str, list[Prediction]]:
    """One exact detection per annotation for the test split, plus a weak FP."""
    predictions: dict[str, list[Prediction]] = {}
    for record in manifest.records:
        if manifest.split_assignment.get(record.id) is not Split.TEST:
            continue
        items = [
            Prediction(bbox=a.bbox, object_class=a.object_class, confidence=0.9)
            for a in record.annotations
        ]
        items.append(Prediction(
            bbox=BBox(0, 0, 2, 2), object_class=ObjectClass.WALKER, confidence=0.1,
        ))
        predictions[record.id] = items
    return predictions


def run_pipeline(tmp_path: Path, bootstrap: int = 50, seed: int = 7) -> dict:
    """Run the whole pipeline through the CLI; returns paths and exit codes."""
    src = tmp_path / "src"
    manifest_path = build_sources(src)
    recipes_path = tmp_path / "recipes.json"
    recipes_path.write_text(json.dumps(CUSTOM_RECIPES))

    aug_dir = tmp_path / "augmented"
    codes = {}
    codes["augment"] = main([
        "augment", "run", "--manifest", str(manifest_path),
        "--framework", "simulated", "--backend", "mock",
        "--seed", str(seed), "--max-in-flight", "4",
        "--recipes", str(recipes_path), "--out", str(aug_dir),
    ])
    aug_manifest = aug_dir / "manifest.json"

    log_path = tmp_path / "decisions.jsonl"
    kept, rejected = script_decisions(aug_manifest, log_path)

    final_path = tmp_path / "final.json"
    codes["finalize"] = main([
        "review", "finalize", "--manifest", str(aug_manifest),
        "--log", str(log_path), "--out", str(final_path),
    ])

    test_path = tmp_path / "with_test.json"
    codes["testset"] = main([
        "testset", "--manifest", str(final_path), "--per-condition", "1",
        "--conditions", "default,rain,fog", "--seed", str(seed),
        "--out", str(test_path),
    ])

    fractions_path = tmp_path / "fractions.json"
    fractions_path.write_text(json.dumps({"default": 0.4, "rain": 0.4, "fog": 0.2}))
    composed_path = tmp_path / "composed.json"
    codes["compose"] = main([
        "compose", "--manifest", str(test_path), "--mode", "augmented",
        "--fractions", str(fractions_path), "--split", "0.6,0.4",
        "--seed", str(seed), "--out", str(composed_path),
    ])

    composed = parse_manifest(composed_path.read_bytes())
    predictions_path = tmp_path / "predictions.jsonl"
    predictions_path.write_bytes(serialize_predictions(perfect_predictions(composed)))

    report_path = tmp_path / "report.json"
    codes["evaluate"] = main([
        "evaluate", "--manifest", str(composed_path),
        "--predictions", str(predictions_path),
        "--bootstrap", str(bootstrap), "--seed", str(seed),
        "--iou", "0.5", "--out", str(report_path),
    ])

    table_path = tmp_path / "report.txt"
    csv_path = tmp_path / "report.csv"
    figures_dir = tmp_path / "figures"
    codes["report_table"] = main([
        "report", "--in", str(report_path), "--format", "table",
        "--out", str(table_path), "--figures", str(figures_dir),
    ])
    codes["report_csv"] = main([
        "report", "--in", str(report_path), "--format", "csv", "--out", str(csv_path),
    ])

    return {
        "codes": codes,
        "kept": kept,
        "rejected": rejected,
        "manifest_path": manifest_path,
        "aug_manifest": aug_manifest,
        "final_path": final_path,
        "composed_path": composed_path,
        "report_path": report_path,
        "table_path": table_path,
        "csv_path": csv_path,
        "figures_dir": figures_dir,
        "log_path": log_path,
    }
