import { ApiClient, ApiError } from "./api.js";
import type { PairView, Progress, Verdict } from "./api.js";
import { isTypingTarget, verdictForKey } from "./keyboard.js";
import { overlayRects, renderOverlay } from "./overlay.js";
import { renderProgress } from "./progress.js";

export interface AppOptions {
  reviewer?: string;
  /** Progress poll interval; 0 disables the timer (refresh still happens per verdict). */
  pollMs?: number;
  /** Retry interval for verdicts that failed on network errors. */
  retryMs?: number;
}

interface QueuedVerdict {
  imageId: string;
  verdict: Verdict;
}

const VERDICT_LABELS: Array<{ verdict: Verdict; key: string; label: string }> = [
  { verdict: "kept", key: "K", label: "Keep" },
  { verdict: "rejected_hallucination", key: "H", label: "Hallucination" },
  { verdict: "rejected_unrealistic", key: "U", label: "Unrealistic" },
];

export class ReviewApp {
  private current: PairView | null = null;
  private conditionFilter = "";
  private overlayVisible = false;
  private submitting = false;
  private retryQueue: QueuedVerdict[] = [];
  private pollTimer: ReturnType<typeof setInterval> | null = null;
  private retryTimer: ReturnType<typeof setInterval> | null = null;
  private keyListener: (event: KeyboardEvent) => void;
  private progressPanel!: HTMLElement;
  private pairPanel!: HTMLElement;
  private filterSelect!: HTMLSelectElement;
  private retryBadge!: HTMLElement;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private options: AppOptions = {},
  ) {
    this.keyListener = (event) => this.onKeydown(event);
  }

  async start(): Promise<void> {
    this.buildSkeleton();
    this.root.ownerDocument.addEventListener("keydown", this.keyListener);
    const pollMs = this.options.pollMs ?? 3000;
    if (pollMs > 0) {
      this.pollTimer = setInterval(() => void this.refreshProgress(), pollMs);
    }
    const retryMs = this.options.retryMs ?? 2000;
    if (retryMs > 0) {
      this.retryTimer = setInterval(() => void this.flushRetryQueue(), retryMs);
    }
    await this.refreshProgress();
    await this.loadNext();
  }

  stop(): void {
    this.root.ownerDocument.removeEventListener("keydown", this.keyListener);
    if (this.pollTimer) clearInterval(this.pollTimer);
    if (this.retryTimer) clearInterval(this.retryTimer);
  }

  get currentPair(): PairView | null {
    return this.current;
  }

  get queuedRetries(): number {
    return this.retryQueue.length;
  }

  // ------------------------------------------------------------------ DOM

  private el<K extends keyof HTMLElementTagNameMap>(tag: K, className?: string) {
    const node = this.root.ownerDocument.createElement(tag);
    if (className) node.className = className;
    return node;
  }

  private buildSkeleton(): void {
    this.root.innerHTML = "";
    const header = this.el("header", "toolbar");

    const title = this.el("span", "app-title");
    title.textContent = "augmentation review";
    header.appendChild(title);

    const filter = this.el("select", "condition-filter");
    filter.id = "condition-filter";
    const all = this.el("option");
    all.value = "";
    all.textContent = "all conditions";
    filter.appendChild(all);
    filter.addEventListener("change", () => {
      this.conditionFilter = filter.value;
      void this.loadNext();
    });
    header.appendChild(filter);

    const overlayToggle = this.el("button", "overlay-toggle");
    overlayToggle.id = "overlay-toggle";
    overlayToggle.textContent = "boxes [B]";
    overlayToggle.addEventListener("click", () => this.toggleOverlay());
    header.appendChild(overlayToggle);

    const retryBadge = this.el("span", "retry-badge");
    retryBadge.id = "retry-badge";
    header.appendChild(retryBadge);

    this.root.appendChild(header);
    this.progressPanel = this.el("div", "progress-panel");
    this.pairPanel = this.el("main", "pair-panel");
    this.filterSelect = filter;
    this.retryBadge = retryBadge;
    this.root.appendChild(this.progressPanel);
    this.root.appendChild(this.pairPanel);
  }

  private pane(url: string, caption: string, pair: PairView): HTMLElement {
    const doc = this.root.ownerDocument;
    const figure = this.el("figure", "pane");
    const frame = this.el("div", "pane-frame");

    const image = doc.createElement("img");
    image.src = this.api.imageUrl(url);
    image.alt = caption;
    const overlay = this.el("div", "overlay-layer");
    const drawOverlay = () => {
      renderOverlay(
        overlay,
        overlayRects(pair.annotations, image.naturalWidth, image.naturalHeight),
        this.overlayVisible,
      );
    };
    image.addEventListener("load", drawOverlay);
    image.addEventListener("error", () => {
      const retry = this.el("button", "image-retry");
      retry.textContent = "image failed — retry";
      retry.addEventListener("click", () => {
        retry.remove();
        image.src = "";
        image.src = this.api.imageUrl(url);
      });
      frame.appendChild(retry);
    });
    drawOverlay();

    frame.appendChild(image);
    frame.appendChild(overlay);
    figure.appendChild(frame);
    const figcaption = this.el("figcaption");
    figcaption.textContent = caption;
    figure.appendChild(figcaption);
    return figure;
  }

  private renderPair(pair: PairView): void {
    const panel = this.pairPanel;
    panel.innerHTML = "";

    const caption = this.el("div", "pair-caption");
    caption.id = "pair-caption";
    caption.textContent = `${pair.condition} — ${pair.prompts.join(" → ") || "(custom recipe)"}`;
    panel.appendChild(caption);

    const panes = this.el("div", "panes");
    panes.appendChild(this.pane(pair.original_image_url, "original", pair));
    panes.appendChild(this.pane(pair.augmented_image_url, "augmented", pair));
    panel.appendChild(panes);

    const buttons = this.el("div", "verdict-buttons");
    for (const { verdict, key, label } of VERDICT_LABELS) {
      const button = this.el("button", `verdict-button verdict-${verdict}`);
      button.textContent = `${label} [${key}]`;
      button.addEventListener("click", () => void this.submit(verdict));
      buttons.appendChild(button);
    }
    panel.appendChild(buttons);
  }

  private renderComplete(progress: Progress): void {
    const panel = this.pairPanel;
    panel.innerHTML = "";
    const done = this.el("div", "completion");
    done.id = "completion";
    const heading = this.el("h2");
    heading.textContent = this.conditionFilter
      ? `no pending pairs for ${this.conditionFilter}`
      : "all pairs reviewed";
    done.appendChild(heading);

    const table = this.el("table", "totals");
    const head = this.el("tr");
    for (const text of ["condition", "kept", "hallucination", "unrealistic", "pending"]) {
      const cell = this.el("th");
      cell.textContent = text;
      head.appendChild(cell);
    }
    table.appendChild(head);
    for (const [condition, counts] of Object.entries(progress)) {
      const row = this.el("tr");
      for (const value of [condition, counts.kept, counts.rejected_hallucination,
                           counts.rejected_unrealistic, counts.pending]) {
        const cell = this.el("td");
        cell.textContent = String(value);
        row.appendChild(cell);
      }
      table.appendChild(row);
    }
    done.appendChild(table);
    panel.appendChild(done);
  }

  private updateFilterOptions(progress: Progress): void {
    const filter = this.filterSelect;
    const existing = new Set(Array.from(filter.options).map((o) => o.value));
    for (const condition of Object.keys(progress)) {
      if (!existing.has(condition)) {
        const option = this.el("option");
        option.value = condition;
        option.textContent = condition;
        filter.appendChild(option);
      }
    }
  }

  private updateRetryBadge(): void {
    const badge = this.retryBadge;
    badge.textContent = this.retryQueue.length
      ? `${this.retryQueue.length} verdict(s) queued for retry`
      : "";
  }

  // ------------------------------------------------------------ behavior

  private onKeydown(event: KeyboardEvent): void {
    if (isTypingTarget(event.target)) return;
    if (event.key.toLowerCase() === "b") {
      this.toggleOverlay();
      return;
    }
    const verdict = verdictForKey(event.key);
    if (verdict) void this.submit(verdict);
  }

  private toggleOverlay(): void {
    this.overlayVisible = !this.overlayVisible;
    if (this.current) this.renderPair(this.current);
  }

  async refreshProgress(): Promise<Progress> {
    const progress = await this.api.progress();
    renderProgress(this.progressPanel, progress);
    this.updateFilterOptions(progress);
    return progress;
  }

  async loadNext(): Promise<void> {
    const pair = await this.api.nextPair(this.conditionFilter || undefined);
    this.current = pair;
    if (pair === null) {
      this.renderComplete(await this.refreshProgress());
    } else {
      this.renderPair(pair);
    }
  }

  async submit(verdict: Verdict): Promise<void> {
    if (!this.current || this.submitting) return;
    const imageId = this.current.image_id;
    this.submitting = true;
    try {
      await this.api.submitDecision(imageId, verdict, this.options.reviewer ?? "reviewer");
    } catch (error) {
      if (error instanceof ApiError) {
        // Server refused the verdict: roll back to the server's view.
        this.submitting = false;
        await this.safeRefreshAndNext();
        return;
      }
      // Network failure: queue for retry (idempotent server-side) and move on.
      this.retryQueue.push({ imageId, verdict });
      this.updateRetryBadge();
    } finally {
      this.submitting = false;
    }
    await this.safeRefreshAndNext();
  }

  /** Refresh and advance, tolerating a dead network (stale data is fine). */
  private async safeRefreshAndNext(): Promise<void> {
    try {
      await this.refreshProgress();
    } catch {
      // stale progress tolerated; the poll timer re-tries
    }
    try {
      await this.loadNext();
    } catch {
      this.current = null;
      const panel = this.pairPanel;
      panel.innerHTML = "";
      const note = this.el("div", "offline-note");
      note.id = "offline-note";
      note.textContent = "connection lost — queued verdicts retry automatically";
      panel.appendChild(note);
    }
  }

  async flushRetryQueue(): Promise<void> {
    const queued = this.retryQueue;
    if (queued.length === 0) return;
    this.retryQueue = [];
    for (const item of queued) {
      try {
        await this.api.submitDecision(item.imageId, item.verdict, this.options.reviewer ?? "reviewer");
      } catch (error) {
        if (!(error instanceof ApiError)) {
          this.retryQueue.push(item);
        }
        // ApiError here means the server saw it (or rejected it for cause);
        // either way a retry will not change the outcome.
      }
    }
    this.updateRetryBadge();
    if (this.retryQueue.length === 0) {
      await this.safeRefreshAndNext();
    }
  }
}
