"""Figure rendering for evaluation reports: per-condition mAP50 bars with std
error bars, and a grouped per-class AP50 chart, written as PNG files next to
the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluate import EvalReport
from .schema import CLASSES, CONDITION_INDEX


def render_figures(report: EvalReport, out_dir: Path) -> list[Path]:
    """Write map50_by_condition.png and ap50_by_class.png; returns the paths."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(report.conditions.items(), key=lambda kv: CONDITION_INDEX[kv[0]])
    names = [condition.value for condition, _ in ordered]
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(6, 4))
    means = [cr.map50.mean for _, cr in ordered]
    stds = [cr.map50.std for _, cr in ordered]
    ax.bar(names, means, yerr=stds, capsize=4, color="#4878a8")
    ax.set_ylabel("mAP50 (mean ± std over resamples)")
    ax.set_xlabel("weather condition")
    ax.set_ylim(0, 1)
    ax.set_title(f"mAP50 by condition (B={report.bootstrap_resamples})")
    fig.tight_layout()
    path = out_dir / "map50_by_condition.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.8 / max(1, len(CLASSES))
    x = np.arange(len(names))
    for ci, cls in enumerate(CLASSES):
        means = [cr.per_class_ap50[cls].mean if cls in cr.per_class_ap50 else 0.0 for _, cr in ordered]
        stds = [cr.per_class_ap50[cls].std if cls in cr.per_class_ap50 else 0.0 for _, cr in ordered]
        ax.bar(x + ci * width, means, width=width, yerr=stds, capsize=2, label=cls.value)
    ax.set_xticks(x + width * (len(CLASSES) - 1) / 2)
    ax.set_xticklabels(names)
    ax.set_ylabel("AP50 (mean ± std over resamples)")
    ax.set_xlabel("weather condition")
    ax.set_ylim(0, 1)
    ax.set_title("Per-class AP50 by condition")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "ap50_by_class.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
