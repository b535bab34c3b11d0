"""Detection scoring: IoU matching at a threshold, per-class AP, mAP, and the
per-condition bootstrap that reports mean ± std over resamples.

Determinism contract: with a fixed (seed, B) the report is identical across
worker counts and manifest record orderings. Resample b of condition c draws
from an RNG stream keyed by (seed, condition index, b), over the condition's
images sorted by id.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .schema import (
    CLASSES,
    CLASS_INDEX,
    CONDITION_INDEX,
    CONDITIONS,
    Annotation,
    BBox,
    DatasetManifest,
    ObjectClass,
    Prediction,
    Split,
    WeatherCondition,
)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    intersection = ix * iy
    union = a.area + b.area - intersection
    return intersection / union


@dataclass(frozen=True)
class ScoredPrediction:
    confidence: float
    is_true_positive: bool
    object_class: ObjectClass


@dataclass(frozen=True)
class MatchResult:
    """Per-image matching outcome: scored predictions plus ground-truth counts."""

    scored: tuple[ScoredPrediction, ...]
    gt_counts: dict[ObjectClass, int]


def match_detections(
    preds: list[Prediction],
    gts: list[Annotation],
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Greedy confidence-ordered matching within one image.

    Per class, predictions are taken in descending confidence (stable on ties);
    each matches the unmatched same-class ground truth of highest IoU when that
    IoU reaches the threshold, else counts as a false positive. Each ground
    truth is matched at most once.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    gt_counts = {c: 0 for c in CLASSES}
    gt_by_class: dict[ObjectClass, list[Annotation]] = {c: [] for c in CLASSES}
    for gt in gts:
        gt_counts[gt.object_class] += 1
        gt_by_class[gt.object_class].append(gt)

    scored: list[ScoredPrediction] = []
    for cls in CLASSES:
        class_preds = [p for p in preds if p.object_class is cls]
        class_preds.sort(key=lambda p: -p.confidence)  # stable: input order on ties
        matched = [False] * len(gt_by_class[cls])
        for pred in class_preds:
            best_iou = 0.0
            best_index = -1
            for gi, gt in enumerate(gt_by_class[cls]):
                if matched[gi]:
                    continue
                overlap = iou(pred.bbox, gt.bbox)
                if overlap > best_iou:
                    best_iou = overlap
                    best_index = gi
            is_tp = best_index >= 0 and best_iou >= iou_threshold
            if is_tp:
                matched[best_index] = True
            scored.append(ScoredPrediction(pred.confidence, is_tp, cls))
    return MatchResult(scored=tuple(scored), gt_counts=gt_counts)


def average_precision(scored: list[tuple[float, bool]], gt_count: int) -> float | None:
    """All-point interpolated AP for one class over the pooled image set.

    Returns None (undefined) when the class has no ground truth; 0.0 when it
    has ground truth but no predictions. Area under the precision envelope:
    precision at each recall level is the maximum precision at any recall at
    or beyond it.
    """
    if gt_count == 0:
        return None
    if not scored:
        return 0.0
    ordered = sorted(scored, key=lambda s: -s[0])  # stable: pooled order on ties
    tp_cum = 0
    precisions: list[float] = []
    recalls: list[float] = []
    for rank, (_, is_tp) in enumerate(ordered, start=1):
        if is_tp:
            tp_cum += 1
        precisions.append(tp_cum / rank)
        recalls.append(tp_cum / gt_count)

    # Envelope from the right, integrated where recall advances.
    envelope = precisions[:]
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    ap = 0.0
    previous_recall = 0.0
    for recall, precision in zip(recalls, envelope):
        if recall > previous_recall:
            ap += (recall - previous_recall) * precision
            previous_recall = recall
    return ap


@dataclass(frozen=True)
class Map50Result:
    map50: float
    per_class: dict[ObjectClass, float | None]


def _pooled_scores(
    matches: list[MatchResult],
) -> tuple[dict[ObjectClass, list[tuple[float, bool]]], dict[ObjectClass, int]]:
    pooled: dict[ObjectClass, list[tuple[float, bool]]] = {c: [] for c in CLASSES}
    gt_totals: dict[ObjectClass, int] = {c: 0 for c in CLASSES}
    for match in matches:
        for s in match.scored:
            pooled[s.object_class].append((s.confidence, s.is_true_positive))
        for cls, count in match.gt_counts.items():
            gt_totals[cls] += count
    return pooled, gt_totals


def _map_from_matches(matches: list[MatchResult]) -> tuple[float | None, dict[ObjectClass, float | None]]:
    pooled, gt_totals = _pooled_scores(matches)
    per_class = {cls: average_precision(pooled[cls], gt_totals[cls]) for cls in CLASSES}
    defined = [ap for ap in per_class.values() if ap is not None]
    mean_ap = sum(defined) / len(defined) if defined else None
    return mean_ap, per_class


def map50(
    image_set: list[tuple[list[Prediction], list[Annotation]]],
    iou_threshold: float = 0.5,
) -> Map50Result:
    """mAP at the given IoU threshold over a set of images.

    Classes with zero ground truth in the set are excluded from the mean and
    reported as None. A set with no ground truth at all has no defined mAP.
    """
    if not image_set:
        raise ValueError("image set must be non-empty")
    matches = [match_detections(preds, gts, iou_threshold) for preds, gts in image_set]
    mean_ap, per_class = _map_from_matches(matches)
    if mean_ap is None:
        raise ValueError("image set has no ground-truth instances; mAP is undefined")
    return Map50Result(map50=mean_ap, per_class=per_class)


# --------------------------------------------------------------------------
# Bootstrap evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSummary:
    """Mean and population std over the resamples where the metric was defined."""

    mean: float
    std: float
    resamples_defined: int


@dataclass(frozen=True)
class ConditionReport:
    map50: MetricSummary
    per_class_ap50: dict[ObjectClass, MetricSummary]


@dataclass(frozen=True)
class EvalReport:
    conditions: dict[WeatherCondition, ConditionReport]
    bootstrap_resamples: int
    seed: int
    iou_threshold: float
    sample_sizes: dict[WeatherCondition, int] = field(default_factory=dict)


def _summarize(values: list[float]) -> MetricSummary | None:
    if not values:
        return None
    arr = np.asarray(values, dtype=np.float64)
    return MetricSummary(mean=float(arr.mean()), std=float(arr.std()), resamples_defined=len(values))


def _bootstrap_condition(
    matches: list[MatchResult],
    condition_index: int,
    n_resamples: int,
    seed: int,
    max_workers: int,
) -> ConditionReport:
    n = len(matches)

    def one_resample(b: int) -> tuple[float | None, dict[ObjectClass, float | None]]:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(condition_index, b)))
        indices = rng.integers(0, n, size=n)
        return _map_from_matches([matches[i] for i in indices])

    results: list[tuple[float | None, dict[ObjectClass, float | None]]] = [None] * n_resamples  # type: ignore[list-item]
    if max_workers <= 1:
        for b in range(n_resamples):
            results[b] = one_resample(b)
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for b, outcome in enumerate(pool.map(one_resample, range(n_resamples))):
                results[b] = outcome

    map_values = [m for m, _ in results if m is not None]
    map_summary = _summarize(map_values)
    if map_summary is None:
        raise ValueError("no resample had any ground truth; condition mAP is undefined")
    per_class: dict[ObjectClass, MetricSummary] = {}
    for cls in CLASSES:
        summary = _summarize([pc[cls] for _, pc in results if pc[cls] is not None])
        if summary is not None:
            per_class[cls] = summary
    return ConditionReport(map50=map_summary, per_class_ap50=per_class)


def bootstrap_evaluate(
    predictions: dict[str, list[Prediction]],
    manifest: DatasetManifest,
    n_resamples: int = 1000,
    seed: int = 0,
    iou_threshold: float = 0.5,
    max_workers: int = 1,
) -> EvalReport:
    """Per-condition bootstrap of mAP50 and per-class AP50.

    For each condition with n images, draws n_resamples same-size samples with
    replacement and reports mean and population std of every metric over the
    resamples where it is defined. The manifest's test split is evaluated when
    one is assigned; otherwise every record is treated as test.
    """
    if n_resamples < 1:
        raise ValueError(f"need at least 1 resample, got {n_resamples}")
    has_test = any(s is Split.TEST for s in manifest.split_assignment.values())
    test_records = [
        r for r in manifest.records
        if not has_test or manifest.split_assignment.get(r.id) is Split.TEST
    ]
    test_ids = {r.id for r in test_records}
    if not test_records:
        raise ValueError("manifest has no test records")
    unknown = sorted(set(predictions) - test_ids)
    if unknown:
        raise ValueError(f"predictions reference unknown image ids: {', '.join(unknown[:5])}")

    by_condition: dict[WeatherCondition, list] = {}
    for record in sorted(test_records, key=lambda r: r.id):
        by_condition.setdefault(record.condition, []).append(record)

    conditions: dict[WeatherCondition, ConditionReport] = {}
    sample_sizes: dict[WeatherCondition, int] = {}
    for condition in CONDITIONS:
        records = by_condition.get(condition)
        if not records:
            continue
        matches = [
            match_detections(predictions.get(r.id, []), list(r.annotations), iou_threshold)
            for r in records
        ]
        conditions[condition] = _bootstrap_condition(
            matches, CONDITION_INDEX[condition], n_resamples, seed, max_workers,
        )
        sample_sizes[condition] = len(records)

    return EvalReport(
        conditions=conditions,
        bootstrap_resamples=n_resamples,
        seed=seed,
        iou_threshold=iou_threshold,
        sample_sizes=sample_sizes,
    )


# --------------------------------------------------------------------------
# Report document and rendering
# --------------------------------------------------------------------------

def report_to_json(report: EvalReport) -> bytes:
    def summary_obj(s: MetricSummary) -> dict:
        return {"mean": s.mean, "std": s.std, "resamples_defined": s.resamples_defined}

    top = {
        "metadata": {
            "bootstrap_resamples": report.bootstrap_resamples,
            "seed": report.seed,
            "iou_threshold": report.iou_threshold,
            "sample_sizes": {c.value: report.sample_sizes[c] for c in CONDITIONS if c in report.sample_sizes},
        },
        "conditions": {
            condition.value: {
                "map50": summary_obj(cr.map50),
                "per_class_ap50": {
                    cls.value: summary_obj(cr.per_class_ap50[cls])
                    for cls in CLASSES if cls in cr.per_class_ap50
                },
            }
            for condition, cr in sorted(report.conditions.items(), key=lambda kv: CONDITION_INDEX[kv[0]])
        },
    }
    return (json.dumps(top, indent=2) + "\n").encode("utf-8")


def report_from_json(document: bytes) -> EvalReport:
    top = json.loads(document.decode("utf-8"))
    meta = top["metadata"]

    def summary(obj: dict) -> MetricSummary:
        return MetricSummary(
            mean=float(obj["mean"]), std=float(obj["std"]),
            resamples_defined=int(obj["resamples_defined"]),
        )

    conditions = {
        WeatherCondition(name): ConditionReport(
            map50=summary(body["map50"]),
            per_class_ap50={
                ObjectClass(cls): summary(s) for cls, s in body["per_class_ap50"].items()
            },
        )
        for name, body in top["conditions"].items()
    }
    return EvalReport(
        conditions=conditions,
        bootstrap_resamples=int(meta["bootstrap_resamples"]),
        seed=int(meta["seed"]),
        iou_threshold=float(meta["iou_threshold"]),
        sample_sizes={WeatherCondition(c): int(n) for c, n in meta["sample_sizes"].items()},
    )


def format_mean_std(mean: float, std: float) -> str:
    """Render "m ± s" with values at 3 decimal places, trailing zeros trimmed."""

    def trim(x: float) -> str:
        text = f"{x:.3f}".rstrip("0").rstrip(".")
        return text if text else "0"

    return f"{trim(mean)} ± {trim(std)}"


def render_report(report: EvalReport, fmt: str = "text_table") -> bytes:
    """Render the report as a human table ("text_table") or full-precision "csv"."""
    ordered = sorted(report.conditions.items(), key=lambda kv: CONDITION_INDEX[kv[0]])
    if fmt == "csv":
        lines = ["condition,metric,mean,std,resamples_defined"]
        for condition, cr in ordered:
            lines.append(
                f"{condition.value},mAP50,{cr.map50.mean!r},{cr.map50.std!r},{cr.map50.resamples_defined}"
            )
            for cls in CLASSES:
                if cls not in cr.per_class_ap50:
                    continue
                s = cr.per_class_ap50[cls]
                lines.append(f"{condition.value},AP50_{cls.value},{s.mean!r},{s.std!r},{s.resamples_defined}")
        return ("\n".join(lines) + "\n").encode("utf-8")

    if fmt != "text_table":
        raise ValueError(f"unknown report format: {fmt}")

    headers = ["Weather Condition", "mAP50"] + [f"AP50 {cls.value}" for cls in CLASSES]
    rows = []
    for condition, cr in ordered:
        row = [condition.value, format_mean_std(cr.map50.mean, cr.map50.std)]
        for cls in CLASSES:
            if cls in cr.per_class_ap50:
                s = cr.per_class_ap50[cls]
                row.append(format_mean_std(s.mean, s.std))
            else:
                row.append("-")
        rows.append(row)
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return ("\n".join(lines) + "\n").encode("utf-8")
