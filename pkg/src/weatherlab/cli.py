"""Single executable exposing the pipeline as subcommands.

Structured JSON log lines go to stderr; the human-readable summary goes to
stdout. A JSON config file can pre-fill any flag (flags win). Every sampling
command logs its effective seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import __version__
from .augment import (
    AugmentationError,
    BackendError,
    builtin_recipes,
    make_backend,
    parse_recipes,
    recipes_to_json,
    run_augmentation,
)
from .carla import load_segmentation, parse_carla_frames, ingest_carla_frame
from .compose import (
    CompositionMode,
    CompositionSpec,
    ShortfallError,
    build_test_set,
    compose,
    parse_fractions,
)
from .diffusion import NoiseSchedule, marginal_statistics_demo
from .evaluate import bootstrap_evaluate, render_report, report_from_json, report_to_json
from .figures import render_figures
from .maskboxes import Connectivity, enrich_record, parse_class_map
from .review import (
    ReviewService,
    ReviewSession,
    apply_decisions,
    finalize_filtered,
    make_server,
    parse_decision_log,
)
from .schema import (
    MANIFEST_SCHEMA_VERSION,
    DatasetManifest,
    Framework,
    LabelImportError,
    ManifestError,
    WeatherCondition,
    import_bdd100k,
    parse_manifest,
    parse_predictions,
    serialize_manifest,
)


def _log(event: str, **fields) -> None:
    print(json.dumps({"event": event, **fields}), file=sys.stderr)


def _read_manifest(path: str) -> DatasetManifest:
    return parse_manifest(Path(path).read_bytes())


def _write_manifest(path: str, manifest: DatasetManifest) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize_manifest(manifest))


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise SystemExit(f"missing required option(s): {flags} (flag or config file)")


def _image_root(args: argparse.Namespace) -> Path:
    if getattr(args, "image_root", None):
        return Path(args.image_root)
    return Path(args.manifest).resolve().parent


def _parse_condition_list(text: str) -> list[WeatherCondition]:
    return [WeatherCondition(token.strip()) for token in text.split(",") if token.strip()]


# --------------------------------------------------------------------------
# Subcommand implementations
# --------------------------------------------------------------------------

def _cmd_import_bdd(args) -> int:
    _require(args, "labels", "out")
    result = import_bdd100k(
        Path(args.labels).read_bytes(),
        image_root=args.image_root or "",
        weather=args.weather,
        timeofday=args.timeofday,
    )
    _write_manifest(args.out, result.manifest)
    _log("import_bdd", imported=result.imported, excluded=result.excluded,
         unknown_weather_skipped=result.unknown_weather_skipped, out=args.out)
    print(f"imported {result.imported} records "
          f"({result.excluded} filtered out, {result.unknown_weather_skipped} unknown weather)")
    return 0


def _cmd_ingest_carla(args) -> int:
    _require(args, "frames", "seg_dir", "rgb_dir", "condition", "out")
    condition = WeatherCondition(args.condition)
    frames = parse_carla_frames(Path(args.frames).read_bytes())
    out_dir = Path(args.out).resolve().parent
    records = []
    import numpy as np
    from PIL import Image

    for frame in frames:
        seg_path = Path(args.seg_dir) / f"{frame.frame_id}.png"
        rgb_path = Path(args.rgb_dir) / f"{frame.frame_id}.png"
        seg = load_segmentation(seg_path.read_bytes(), red_channel=args.seg_red_channel)
        rgb = np.asarray(Image.open(rgb_path))
        records.append(ingest_carla_frame(
            rgb, seg, list(frame.boxes), condition, args.min_visible_fraction,
            frame_id=frame.frame_id,
            image_path=os.path.relpath(rgb_path.resolve(), out_dir),
        ))
    manifest = DatasetManifest(framework=Framework.SIMULATED, records=tuple(records))
    _write_manifest(args.out, manifest)
    n_boxes = sum(len(r.annotations) for r in records)
    _log("ingest_carla", frames=len(records), annotations=n_boxes,
         min_visible_fraction=args.min_visible_fraction, out=args.out)
    print(f"ingested {len(records)} frames, {n_boxes} annotations after ghost filtering")
    return 0


def _cmd_mask_boxes(args) -> int:
    _require(args, "manifest", "seg_dir", "class_map", "out")
    manifest = _read_manifest(args.manifest)
    class_map = parse_class_map(Path(args.class_map).read_bytes())
    connectivity = Connectivity(args.connectivity)
    enriched = []
    touched = 0
    for record in manifest.records:
        seg_path = Path(args.seg_dir) / f"{record.id}.png"
        if not seg_path.exists():
            enriched.append(record)
            continue
        seg = load_segmentation(seg_path.read_bytes(), red_channel=args.seg_red_channel)
        enriched.append(enrich_record(record, seg, class_map, connectivity, args.min_area))
        touched += 1
    out_manifest = DatasetManifest(
        framework=manifest.framework,
        records=tuple(enriched),
        split_assignment=dict(manifest.split_assignment),
    )
    _write_manifest(args.out, out_manifest)
    _log("mask_boxes", records=len(enriched), enriched=touched, out=args.out)
    print(f"enriched {touched} of {len(enriched)} records from masks")
    return 0


def _cmd_recipes(args) -> int:
    framework = Framework(args.framework)
    recipes = builtin_recipes(framework)
    if args.json:
        sys.stdout.write(recipes_to_json(recipes).decode("utf-8"))
        return 0
    for recipe in recipes:
        print(f"{recipe.id} ({recipe.condition.value}):")
        for i, step in enumerate(recipe.steps, start=1):
            print(f"  {i}. {step.prompt!r}  guidance_scale={step.guidance_scale}  "
                  f"inference_steps={step.inference_steps}")
    return 0


def _cmd_augment_run(args) -> int:
    _require(args, "manifest", "framework", "backend", "out")
    if args.seed is None:
        raise SystemExit("missing required option(s): --seed (flag or config file)")
    manifest = _read_manifest(args.manifest)
    framework = Framework(args.framework)
    if framework is not manifest.framework:
        raise SystemExit(
            f"--framework {framework.value} does not match manifest framework "
            f"{manifest.framework.value}"
        )
    recipes = (
        parse_recipes(Path(args.recipes).read_bytes()) if args.recipes
        else builtin_recipes(framework)
    )
    backend = make_backend(args.backend)
    image_root = _image_root(args)
    out_dir = Path(args.out)
    _log("seed", command="augment", seed=args.seed)

    # The output manifest lives in out_dir; re-root source image paths there.
    rebased = DatasetManifest(
        framework=manifest.framework,
        records=tuple(
            dataclasses.replace(
                r,
                image_path=os.path.relpath((image_root / r.image_path).resolve(),
                                           out_dir.resolve()),
            )
            for r in manifest.records
        ),
        split_assignment=dict(manifest.split_assignment),
    )
    try:
        result = run_augmentation(
            rebased, recipes, backend, args.seed, args.max_in_flight,
            image_root=out_dir, out_dir=out_dir,
        )
    except AugmentationError as exc:
        _write_manifest(str(out_dir / "manifest.json"), exc.manifest)
        for failure in exc.failures:
            _log("augment_failure", source_id=failure.source_id,
                 recipe_id=failure.recipe_id, error=failure.message)
        print(f"augmentation finished with {len(exc.failures)} failure(s); "
              f"partial manifest written to {out_dir / 'manifest.json'}")
        return 1
    _write_manifest(str(out_dir / "manifest.json"), result)
    added = len(result.records) - len(manifest.records)
    _log("augment_done", added=added, out=str(out_dir))
    print(f"augmented {added} images into {out_dir}")
    return 0


def _cmd_review_serve(args) -> int:
    _require(args, "manifest", "log")
    manifest = _read_manifest(args.manifest)
    session = ReviewSession(manifest, Path(args.log))
    recipes = builtin_recipes(manifest.framework)
    if args.recipes:
        recipes = recipes + parse_recipes(Path(args.recipes).read_bytes())
    service = ReviewService(
        session,
        image_root=_image_root(args),
        ui_dir=Path(args.ui_dir) if args.ui_dir else None,
        recipes=recipes,
    )
    server = make_server(service, host=args.host, port=args.port)
    _log("review_serve", host=args.host, port=server.server_address[1], log=args.log)
    print(f"review service on http://{args.host}:{server.server_address[1]}/ "
          f"(ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _cmd_review_finalize(args) -> int:
    _require(args, "manifest", "log", "out")
    manifest = _read_manifest(args.manifest)
    log_path = Path(args.log)
    if log_path.exists():
        manifest = apply_decisions(manifest, parse_decision_log(log_path.read_bytes()))
    result = finalize_filtered(manifest, allow_pending=args.allow_pending)
    _write_manifest(args.out, result.manifest)
    kept = {c.value: n for c, n in result.kept.items()}
    rejected = {c.value: n for c, n in result.rejected.items()}
    _log("review_finalize", kept=kept, rejected=rejected,
         dropped_pending=result.dropped_pending, out=args.out)
    print(f"finalized: kept {sum(result.kept.values())}, "
          f"rejected {sum(result.rejected.values())}, "
          f"dropped pending {result.dropped_pending}")
    return 0


def _cmd_compose(args) -> int:
    _require(args, "manifest", "mode", "out")
    if args.seed is None:
        raise SystemExit("missing required option(s): --seed (flag or config file)")
    manifest = _read_manifest(args.manifest)
    mode = CompositionMode(args.mode)
    if mode is CompositionMode.AUGMENTED:
        _require(args, "fractions")
        fractions = parse_fractions(Path(args.fractions).read_bytes())
    else:
        fractions = {WeatherCondition.DEFAULT: 1.0}
    train_fraction, val_fraction = (float(x) for x in args.split.split(","))
    spec = CompositionSpec(
        fractions=fractions,
        train_fraction=train_fraction,
        val_fraction=val_fraction,
        seed=args.seed,
    )
    _log("seed", command="compose", seed=args.seed)
    result = compose(manifest, spec, mode)
    _write_manifest(args.out, result)
    from .schema import Split
    n_train = sum(1 for s in result.split_assignment.values() if s is Split.TRAIN)
    n_val = sum(1 for s in result.split_assignment.values() if s is Split.VAL)
    _log("compose_done", mode=mode.value, train=n_train, val=n_val, out=args.out)
    print(f"composed {mode.value} dataset: {n_train} train / {n_val} val")
    return 0


def _cmd_testset(args) -> int:
    _require(args, "manifest", "conditions", "out")
    if args.seed is None:
        raise SystemExit("missing required option(s): --seed (flag or config file)")
    manifest = _read_manifest(args.manifest)
    conditions = _parse_condition_list(args.conditions)
    _log("seed", command="testset", seed=args.seed)
    result = build_test_set(manifest, args.per_condition, conditions, seed=args.seed)
    _write_manifest(args.out, result)
    from .schema import Split
    n_test = sum(1 for s in result.split_assignment.values() if s is Split.TEST)
    _log("testset_done", per_condition=args.per_condition, total=n_test, out=args.out)
    print(f"test set: {n_test} records ({args.per_condition} per condition)")
    return 0


def _cmd_evaluate(args) -> int:
    _require(args, "manifest", "predictions", "out")
    if args.seed is None:
        raise SystemExit("missing required option(s): --seed (flag or config file)")
    manifest = _read_manifest(args.manifest)
    predictions = parse_predictions(Path(args.predictions).read_bytes())
    _log("seed", command="evaluate", seed=args.seed)
    report = bootstrap_evaluate(
        predictions, manifest,
        n_resamples=args.bootstrap, seed=args.seed,
        iou_threshold=args.iou, max_workers=args.workers,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(report_to_json(report))
    _log("evaluate_done", bootstrap=args.bootstrap, conditions=len(report.conditions),
         out=args.out)
    print(f"evaluated {len(report.conditions)} condition(s) with "
          f"{args.bootstrap} resamples -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    _require(args, "input")
    report = report_from_json(Path(args.input).read_bytes())
    fmt = {"table": "text_table", "csv": "csv"}[args.format]
    rendered = render_report(report, fmt)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_bytes(rendered)
        print(f"wrote {args.format} report to {args.out}")
    else:
        sys.stdout.write(rendered.decode("utf-8"))
    if args.figures:
        paths = render_figures(report, Path(args.figures))
        _log("figures", files=[str(p) for p in paths])
        print(f"wrote {len(paths)} figure(s) to {args.figures}")
    return 0


def _cmd_diffusion_demo(args) -> int:
    betas = tuple(float(x) for x in args.betas.split(","))
    schedule = NoiseSchedule(betas=betas)
    rows = marginal_statistics_demo(
        schedule, x0_value=args.x0, dimension=args.dimension,
        trajectories=args.trajectories, seed=args.seed or 0,
    )
    print(f"{'t':>3}  {'beta':>6}  {'MC mean':>10}  {'exact mean':>10}  "
          f"{'MC std':>10}  {'exact std':>10}")
    for row in rows:
        print(f"{row['t']:>3}  {row['beta']:>6.3f}  {row['mc_mean']:>10.4f}  "
              f"{row['closed_form_mean']:>10.4f}  {row['mc_std']:>10.4f}  "
              f"{row['closed_form_std']:>10.4f}")
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weatherlab",
        description="Weather-augmentation dataset pipeline and per-condition "
                    "detection evaluation harness.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument(
        "--version", action="version",
        version=f"weatherlab {__version__} (manifest schema {MANIFEST_SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import-bdd", help="import BDD100K detection labels")
    p.add_argument("--labels")
    p.add_argument("--image-root", default="")
    p.add_argument("--weather", default="clear")
    p.add_argument("--timeofday", default="daytime")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_import_bdd)

    p = sub.add_parser("ingest-carla", help="ingest simulator frames, filtering ghost boxes")
    p.add_argument("--frames")
    p.add_argument("--seg-dir")
    p.add_argument("--rgb-dir")
    p.add_argument("--condition", default="default")
    p.add_argument("--min-visible-fraction", type=float, default=0.2)
    p.add_argument("--seg-red-channel", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_ingest_carla)

    p = sub.add_parser("mask-boxes", help="derive boxes from segmentation masks")
    p.add_argument("--manifest")
    p.add_argument("--seg-dir")
    p.add_argument("--class-map")
    p.add_argument("--connectivity", choices=["four", "eight"], default="eight")
    p.add_argument("--min-area", type=int, default=16)
    p.add_argument("--seg-red-channel", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_mask_boxes)

    p = sub.add_parser("recipes", help="print built-in prompt recipes")
    p.add_argument("--framework", choices=["simulated", "real_world"], required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_recipes)

    p = sub.add_parser("augment", help="augmentation commands")
    augment_sub = p.add_subparsers(dest="augment_command", required=True)
    pr = augment_sub.add_parser("run", help="apply recipes through a backend")
    pr.add_argument("--manifest")
    pr.add_argument("--framework", choices=["simulated", "real_world"])
    pr.add_argument("--backend", help='"mock" or backend base URL')
    pr.add_argument("--seed", type=int)
    pr.add_argument("--max-in-flight", type=int, default=4)
    pr.add_argument("--recipes", help="JSON recipe file overriding the built-ins")
    pr.add_argument("--image-root")
    pr.add_argument("--out", help="output directory for images + manifest.json")
    pr.set_defaults(fn=_cmd_augment_run)

    p = sub.add_parser("review", help="review service and finalize")
    review_sub = p.add_subparsers(dest="review_command", required=True)
    ps = review_sub.add_parser("serve", help="serve the review API and UI")
    ps.add_argument("--manifest")
    ps.add_argument("--log")
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8321)
    ps.add_argument("--ui-dir")
    ps.add_argument("--image-root")
    ps.add_argument("--recipes")
    ps.set_defaults(fn=_cmd_review_serve)
    pf = review_sub.add_parser("finalize", help="fold kept images into the dataset")
    pf.add_argument("--manifest")
    pf.add_argument("--log")
    pf.add_argument("--out")
    pf.add_argument("--allow-pending", action="store_true")
    pf.set_defaults(fn=_cmd_review_finalize)

    p = sub.add_parser("compose", help="compose Basic or Augmented train/val sets")
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=["basic", "augmented"])
    p.add_argument("--fractions", help="JSON file: condition -> fraction (sums to 1)")
    p.add_argument("--split", default="0.7,0.3", help="train,val fractions")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_compose)

    p = sub.add_parser("testset", help="carve a per-condition test set")
    p.add_argument("--manifest")
    p.add_argument("--per-condition", type=int, default=254)
    p.add_argument("--conditions", help="comma-separated condition list")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_testset)

    p = sub.add_parser("evaluate", help="bootstrap mAP50 per weather condition")
    p.add_argument("--manifest")
    p.add_argument("--predictions")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("report", help="render an evaluation report")
    p.add_argument("--in", dest="input")
    p.add_argument("--format", choices=["table", "csv"], default="table")
    p.add_argument("--out")
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("diffusion-demo", help="Monte Carlo vs closed-form noising stats")
    p.add_argument("--betas", default="0.1,0.1,0.1,0.1")
    p.add_argument("--x0", type=float, default=1.0)
    p.add_argument("--dimension", type=int, default=4)
    p.add_argument("--trajectories", type=int, default=20000)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_diffusion_demo)

    return parser


def _apply_config_defaults(parser: argparse.ArgumentParser, config: dict) -> None:
    """Install config values as defaults on this parser and every subparser.

    Subparsers parse into a fresh namespace, so defaults must be pushed down
    to each of them; set_defaults rewrites matching options' defaults, which
    explicit flags still override.
    """
    parser.set_defaults(**config)
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for subparser in action.choices.values():
                _apply_config_defaults(subparser, config)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    # Config file values become parser defaults; explicit flags still win.
    config_path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif token.startswith("--config="):
            config_path = token.split("=", 1)[1]
    if config_path:
        try:
            config = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            _log("error", error=f"bad config file: {exc}")
            return 1
        _apply_config_defaults(
            parser, {k.replace("-", "_"): v for k, v in config.items()},
        )

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (ManifestError, LabelImportError, ShortfallError, BackendError,
            ValueError, KeyError, OSError) as exc:
        _log("error", command=args.command, error=str(exc),
             error_type=type(exc).__name__)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
