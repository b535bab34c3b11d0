import type { Progress, ProgressCounts } from "./api.js";

const SEGMENTS: Array<{ key: keyof ProgressCounts; css: string; label: string }> = [
  { key: "kept", css: "seg-kept", label: "kept" },
  { key: "rejected_hallucination", css: "seg-hallucination", label: "hallucination" },
  { key: "rejected_unrealistic", css: "seg-unrealistic", label: "unrealistic" },
  { key: "pending", css: "seg-pending", label: "pending" },
];

export function conditionTotal(counts: ProgressCounts): number {
  return counts.pending + counts.kept + counts.rejected_hallucination + counts.rejected_unrealistic;
}

/** Segment widths as fractions of the condition's total; they sum to 1. */
export function segmentFractions(counts: ProgressCounts): number[] {
  const total = conditionTotal(counts);
  if (total === 0) return SEGMENTS.map(() => 0);
  return SEGMENTS.map((segment) => counts[segment.key] / total);
}

export function decidedFraction(counts: ProgressCounts): number {
  const total = conditionTotal(counts);
  return total === 0 ? 0 : (total - counts.pending) / total;
}

export function renderProgress(container: HTMLElement, progress: Progress): void {
  const doc = container.ownerDocument;
  container.innerHTML = "";
  for (const [condition, counts] of Object.entries(progress)) {
    const row = doc.createElement("div");
    row.className = "progress-row";
    row.dataset.condition = condition;

    const label = doc.createElement("span");
    label.className = "progress-label";
    const decidedPct = Math.round(100 * decidedFraction(counts));
    label.textContent = `${condition}: ${decidedPct}% decided`;
    row.appendChild(label);

    const bar = doc.createElement("div");
    bar.className = "progress-bar";
    const fractions = segmentFractions(counts);
    SEGMENTS.forEach((segment, i) => {
      const part = doc.createElement("div");
      part.className = `progress-segment ${segment.css}`;
      part.style.width = `${100 * fractions[i]}%`;
      part.title = `${segment.label}: ${counts[segment.key]}`;
      bar.appendChild(part);
    });
    row.appendChild(bar);
    container.appendChild(row);
  }
}
