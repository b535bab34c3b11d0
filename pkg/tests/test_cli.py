import json
import re
from pathlib import Path

import pytest

from weatherlab.cli import main
from weatherlab.schema import parse_manifest, Split

from e2e import run_pipeline


def test_no_arguments_usage_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_unknown_subcommand_exit_2():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    out = capsys.readouterr().out
    assert "weatherlab" in out and "manifest schema" in out


def test_recipes_lists_three_simulated(capsys):
    assert main(["recipes", "--framework", "simulated"]) == 0
    out = capsys.readouterr().out
    assert out.count("guidance_scale") == 5  # 2 rain + 1 fog + 2 night steps
    for condition in ("rain", "fog", "night"):
        assert f"({condition})" in out
    assert "snow" not in out
    assert "What would it look if it were raining a lot?" in out


def test_recipes_json_output(capsys):
    assert main(["recipes", "--framework", "real_world", "--json"]) == 0
    recipes = json.loads(capsys.readouterr().out)
    assert len(recipes) == 4
    snow = next(r for r in recipes if r["condition"] == "snow")
    assert snow["steps"][0]["prompt"] == "What would it look like were snowing?"


def test_missing_required_flag_exits_nonzero():
    with pytest.raises(SystemExit) as err:
        main(["compose", "--mode", "basic"])
    assert "manifest" in str(err.value)


def test_error_is_structured(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code = main(["compose", "--manifest", str(missing), "--mode", "basic",
                 "--seed", "1", "--out", str(tmp_path / "out.json")])
    assert code == 1
    err = capsys.readouterr().err
    last_json = [json.loads(line) for line in err.splitlines() if line.startswith("{")]
    assert any(evt.get("event") == "error" for evt in last_json)


def test_diffusion_demo_prints_table(capsys):
    assert main(["diffusion-demo", "--betas", "0.1,0.2", "--trajectories", "2000",
                 "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "MC mean" in out
    assert len(out.strip().splitlines()) == 3  # header + 2 steps


def test_config_file_supplies_defaults_flags_win(tmp_path, capsys):
    src_manifest = tmp_path / "m.json"
    src_manifest.write_bytes(
        json.dumps({
            "framework": "simulated",
            "records": [
                {"id": f"r{i}", "image": f"r{i}.png", "condition": "default",
                 "provenance": "rendered", "review_state": "not_applicable",
                 "annotations": []}
                for i in range(10)
            ],
        }).encode()
    )
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "manifest": str(src_manifest),
        "mode": "basic",
        "seed": 5,
        "out": str(tmp_path / "from_config.json"),
    }))
    assert main(["--config", str(config), "compose"]) == 0
    composed = parse_manifest((tmp_path / "from_config.json").read_bytes())
    assert len(composed.split_assignment) == 10

    # An explicit flag must override the config value.
    assert main(["--config", str(config), "compose",
                 "--out", str(tmp_path / "flag_wins.json")]) == 0
    assert (tmp_path / "flag_wins.json").exists()


def test_seed_logged_for_sampling_commands(tmp_path, capsys):
    src_manifest = tmp_path / "m.json"
    src_manifest.write_bytes(
        json.dumps({
            "framework": "simulated",
            "records": [
                {"id": f"r{i}", "image": f"r{i}.png", "condition": "default",
                 "provenance": "rendered", "review_state": "not_applicable",
                 "annotations": []}
                for i in range(4)
            ],
        }).encode()
    )
    assert main(["compose", "--manifest", str(src_manifest), "--mode", "basic",
                 "--seed", "77", "--out", str(tmp_path / "o.json")]) == 0
    err = capsys.readouterr().err
    events = [json.loads(line) for line in err.splitlines() if line.startswith("{")]
    seed_events = [e for e in events if e["event"] == "seed"]
    assert seed_events and seed_events[0]["seed"] == 77


def test_import_bdd_subcommand(tmp_path, capsys):
    labels = [
        {"name": "x.jpg", "attributes": {"weather": "clear", "timeofday": "daytime"},
         "labels": [{"category": "car", "box2d": {"x1": 1, "y1": 1, "x2": 9, "y2": 9}}]},
        {"name": "y.jpg", "attributes": {"weather": "rainy", "timeofday": "daytime"},
         "labels": []},
    ]
    labels_path = tmp_path / "det.json"
    labels_path.write_text(json.dumps(labels))
    out = tmp_path / "bdd.json"
    assert main(["import-bdd", "--labels", str(labels_path),
                 "--image-root", "images", "--out", str(out)]) == 0
    manifest = parse_manifest(out.read_bytes())
    assert len(manifest.records) == 1
    assert manifest.records[0].image_path == "images/x.jpg"


def test_ingest_carla_subcommand(tmp_path):
    import numpy as np
    from PIL import Image

    seg_dir = tmp_path / "seg"
    rgb_dir = tmp_path / "rgb"
    seg_dir.mkdir()
    rgb_dir.mkdir()
    seg = np.zeros((10, 10), dtype=np.uint8)
    seg[0:5, 0:5] = 4
    Image.fromarray(seg, mode="L").save(seg_dir / "f0.png")
    Image.fromarray(np.zeros((10, 10, 3), dtype=np.uint8), mode="RGB").save(rgb_dir / "f0.png")
    frames = tmp_path / "frames.jsonl"
    frames.write_text(json.dumps({
        "frame_id": "f0",
        "boxes": [
            {"class": "vehicle", "seg_class_id": 4, "bbox": [0, 0, 5, 5]},
            {"class": "walker", "seg_class_id": 9, "bbox": [6, 6, 9, 9]},
        ],
    }) + "\n")
    out = tmp_path / "carla.json"
    assert main(["ingest-carla", "--frames", str(frames), "--seg-dir", str(seg_dir),
                 "--rgb-dir", str(rgb_dir), "--condition", "default",
                 "--out", str(out)]) == 0
    manifest = parse_manifest(out.read_bytes())
    assert len(manifest.records) == 1
    assert len(manifest.records[0].annotations) == 1  # the ghost walker box dropped


def test_mask_boxes_subcommand(tmp_path):
    import numpy as np
    from PIL import Image

    src_manifest = tmp_path / "m.json"
    src_manifest.write_bytes(json.dumps({
        "framework": "real_world",
        "records": [{"id": "r0", "image": "r0.png", "condition": "default",
                     "provenance": "captured", "review_state": "not_applicable",
                     "annotations": []}],
    }).encode())
    seg_dir = tmp_path / "masks"
    seg_dir.mkdir()
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[2:7, 3:9] = 7
    Image.fromarray(mask, mode="L").save(seg_dir / "r0.png")
    class_map = tmp_path / "classes.json"
    class_map.write_text('{"7": "traffic_sign"}')
    out = tmp_path / "enriched.json"
    assert main(["mask-boxes", "--manifest", str(src_manifest), "--seg-dir", str(seg_dir),
                 "--class-map", str(class_map), "--min-area", "4", "--out", str(out)]) == 0
    manifest = parse_manifest(out.read_bytes())
    annotation = manifest.records[0].annotations[0]
    assert annotation.bbox.as_list() == [3, 2, 9, 7]


# --------------------------------------------------------------------------
# Full pipeline smoke
# --------------------------------------------------------------------------

def test_pipeline_end_to_end(tmp_path):
    result = run_pipeline(tmp_path, bootstrap=50, seed=7)
    assert all(code == 0 for code in result["codes"].values()), result["codes"]

    # 6 sources x 3 recipes; the 6 hallucinated night images were rejected.
    assert result["kept"] == 12
    assert result["rejected"] == 6

    final = parse_manifest(result["final_path"].read_bytes())
    assert len(final.records) == 6 + 12

    composed = parse_manifest(result["composed_path"].read_bytes())
    splits = list(composed.split_assignment.values())
    assert splits.count(Split.TEST) == 3

    report = json.loads(result["report_path"].read_bytes())
    assert set(report["conditions"]) == {"default", "rain", "fog"}

    table = result["table_path"].read_text()
    # Paper-style cells: "m ± s" with at most 3 decimals.
    assert re.search(r"\d(\.\d{1,3})? ± \d(\.\d{1,3})?", table)

    csv_text = result["csv_path"].read_text()
    assert csv_text.splitlines()[0] == "condition,metric,mean,std,resamples_defined"

    figures = sorted(p.name for p in result["figures_dir"].glob("*.png"))
    assert figures == ["ap50_by_class.png", "map50_by_condition.png"]


def test_pipeline_rerun_is_deterministic_and_nonmutating(tmp_path):
    first = run_pipeline(tmp_path / "one", bootstrap=30, seed=11)
    second = run_pipeline(tmp_path / "two", bootstrap=30, seed=11)
    for key in ("aug_manifest", "final_path", "composed_path", "report_path",
                "csv_path", "table_path"):
        assert Path(first[key]).read_bytes() == Path(second[key]).read_bytes(), key
    # Input manifest untouched by the run.
    assert first["manifest_path"].read_bytes() == second["manifest_path"].read_bytes()
