"""Dataset composition: Basic/Augmented train+val assembly at per-condition
fractions, and per-condition test-set carving.

Rounding rule: each adverse condition receives floor(fraction * n) images and
the default condition absorbs the remainder, so bucket counts always sum to
the split size. Sampling is without replacement from id-sorted candidate
pools, with one RNG stream per (split, condition), making assignments
independent of record input order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .schema import (
    CONDITION_INDEX,
    CONDITIONS,
    DatasetManifest,
    ImageRecord,
    Provenance,
    ReviewState,
    Split,
    WeatherCondition,
)


class CompositionMode(Enum):
    BASIC = "basic"
    AUGMENTED = "augmented"


@dataclass(frozen=True)
class CompositionSpec:
    fractions: dict[WeatherCondition, float]
    train_fraction: float
    val_fraction: float
    seed: int

    def __post_init__(self):
        total = sum(self.fractions.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"condition fractions must sum to 1, got {total}")
        if WeatherCondition.DEFAULT not in self.fractions:
            raise ValueError("fractions must include the default condition")
        if any(f < 0 or f > 1 for f in self.fractions.values()):
            raise ValueError("fractions must lie in [0, 1]")
        if abs(self.train_fraction + self.val_fraction - 1.0) > 1e-9:
            raise ValueError("train and val fractions must sum to 1")


def parse_fractions(document: bytes) -> dict[WeatherCondition, float]:
    raw = json.loads(document.decode("utf-8"))
    return {WeatherCondition(k): float(v) for k, v in raw.items()}


def plan_counts(n_split: int, fractions: dict[WeatherCondition, float]) -> dict[WeatherCondition, int]:
    """Bucket counts for one split: floor for each adverse condition, remainder to default."""
    if n_split < 0:
        raise ValueError(f"split size must be >= 0, got {n_split}")
    counts: dict[WeatherCondition, int] = {}
    adverse_total = 0
    for condition in CONDITIONS:
        if condition not in fractions or condition is WeatherCondition.DEFAULT:
            continue
        count = math.floor(fractions[condition] * n_split)
        counts[condition] = count
        adverse_total += count
    counts[WeatherCondition.DEFAULT] = n_split - adverse_total
    return counts


class ShortfallError(ValueError):
    """A condition pool is smaller than the planned sample size."""

    def __init__(self, shortfalls: list[str]):
        self.shortfalls = shortfalls
        super().__init__("; ".join(shortfalls))


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _sample_ids(pool: list[str], k: int, rng: np.random.Generator) -> list[str]:
    ordered = sorted(pool)
    picked = rng.choice(len(ordered), size=k, replace=False)
    return [ordered[i] for i in picked]


def compose(
    manifest: DatasetManifest,
    spec: CompositionSpec,
    mode: CompositionMode = CompositionMode.AUGMENTED,
) -> DatasetManifest:
    """Assign train/val splits for a Basic or Augmented dataset.

    The default-condition pool sets the overall train/val sizes; in augmented
    mode each adverse condition's planned share is drawn from its kept
    augmented records. Records already assigned to test are never touched.
    """
    pending = [
        r.id for r in manifest.records
        if r.provenance is Provenance.AUGMENTED and r.review_state is ReviewState.PENDING
    ]
    if pending:
        raise ValueError(
            f"manifest is not finalized: {len(pending)} augmented records are still pending review"
        )

    test_ids = {rid for rid, s in manifest.split_assignment.items() if s is Split.TEST}
    default_pool = [
        r.id for r in manifest.records
        if r.condition is WeatherCondition.DEFAULT and r.id not in test_ids
    ]
    n_total = len(default_pool)
    n_train = math.floor(spec.train_fraction * n_total)
    n_val = n_total - n_train

    fractions = (
        {WeatherCondition.DEFAULT: 1.0} if mode is CompositionMode.BASIC else spec.fractions
    )

    kept_pools: dict[WeatherCondition, list[str]] = {}
    for record in manifest.records:
        if record.id in test_ids:
            continue
        if record.provenance is Provenance.AUGMENTED and record.review_state is ReviewState.KEPT:
            kept_pools.setdefault(record.condition, []).append(record.id)

    plans = {
        Split.TRAIN: plan_counts(n_train, fractions),
        Split.VAL: plan_counts(n_val, fractions),
    }

    shortfalls = []
    for condition, fraction in fractions.items():
        if condition is WeatherCondition.DEFAULT:
            continue
        needed = plans[Split.TRAIN].get(condition, 0) + plans[Split.VAL].get(condition, 0)
        available = len(kept_pools.get(condition, []))
        if needed > available:
            shortfalls.append(
                f"{condition.value}: need {needed} kept augmented records, have {available}"
            )
    if shortfalls:
        raise ShortfallError(shortfalls)

    assignment = {rid: s for rid, s in manifest.split_assignment.items() if s is Split.TEST}
    for split_index, split in enumerate((Split.TRAIN, Split.VAL)):
        for condition, count in plans[split].items():
            pool = default_pool if condition is WeatherCondition.DEFAULT else kept_pools.get(condition, [])
            remaining = [rid for rid in pool if rid not in assignment]
            if count > len(remaining):
                raise ShortfallError([
                    f"{condition.value}: need {count} for {split.value}, have {len(remaining)}"
                ])
            rng = _rng(spec.seed, split_index, CONDITION_INDEX[condition])
            for rid in _sample_ids(remaining, count, rng):
                assignment[rid] = split

    return DatasetManifest(
        framework=manifest.framework,
        records=manifest.records,
        split_assignment=assignment,
    )


def build_test_set(
    manifest: DatasetManifest,
    per_condition_count: int,
    conditions: list[WeatherCondition],
    seed: int = 0,
) -> DatasetManifest:
    """Mark a seeded sample of exactly per_condition_count records per condition as test."""
    taken = {
        rid for rid, s in manifest.split_assignment.items()
        if s in (Split.TRAIN, Split.VAL)
    }
    assignment = dict(manifest.split_assignment)
    for condition in conditions:
        pool = [
            r.id for r in manifest.records
            if r.condition is condition and r.id not in taken and assignment.get(r.id) is not Split.TEST
        ]
        if len(pool) < per_condition_count:
            raise ShortfallError([
                f"{condition.value}: need {per_condition_count} test candidates, have {len(pool)}"
            ])
        rng = _rng(seed, CONDITION_INDEX[condition])
        for rid in _sample_ids(pool, per_condition_count, rng):
            assignment[rid] = Split.TEST
    return DatasetManifest(
        framework=manifest.framework,
        records=manifest.records,
        split_assignment=assignment,
    )
