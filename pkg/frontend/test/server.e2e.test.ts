// @vitest-environment jsdom
//
// Drives the real review service over HTTP: a Python fixture with 20 pending
// augmented images, the compiled app in a headless DOM, keyboard verdicts all
// the way into the server's append-only log.
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import type { Verdict } from "../src/api.js";
import { ReviewApp } from "../src/app.js";

const FRONTEND_ROOT = dirname(dirname(fileURLToPath(import.meta.url)));

let workDir: string;
let server: ChildProcess;
let baseUrl: string;
let logPath: string;

function waitFor<T>(probe: () => T | null | undefined | false, timeoutMs = 15000): Promise<T> {
  const start = Date.now();
  return new Promise((resolve, reject) => {
    const tick = () => {
      let value: T | null | undefined | false;
      try {
        value = probe();
      } catch {
        value = null;
      }
      if (value) return resolve(value);
      if (Date.now() - start > timeoutMs) return reject(new Error("waitFor timed out"));
      setTimeout(tick, 25);
    };
    tick();
  });
}

async function waitForAsync(probe: () => Promise<boolean>, timeoutMs = 15000): Promise<void> {
  const start = Date.now();
  while (Date.now() - start <= timeoutMs) {
    if (await probe()) return;
    await new Promise((resolve) => setTimeout(resolve, 25));
  }
  throw new Error("waitForAsync timed out");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "review-ui-e2e-"));
  const fixture = spawnSync(
    "python3", [join(FRONTEND_ROOT, "test", "fixtures", "make_fixture.py"), workDir],
    { encoding: "utf-8" },
  );
  if (fixture.status !== 0) {
    throw new Error(`fixture generation failed: ${fixture.stderr}`);
  }
  const manifest = join(workDir, "augmented", "manifest.json");
  logPath = join(workDir, "decisions.jsonl");

  server = spawn("python3", [
    "-m", "weatherlab.cli", "review", "serve",
    "--manifest", manifest,
    "--log", logPath,
    "--port", "0",
    "--ui-dir", join(FRONTEND_ROOT, "dist"),
  ]);
  let stderrBuffer = "";
  server.stderr!.on("data", (chunk: Buffer) => {
    stderrBuffer += chunk.toString();
  });
  const port = await waitFor(() => {
    for (const line of stderrBuffer.split("\n")) {
      if (!line.startsWith("{")) continue;
      const event = JSON.parse(line);
      if (event.event === "review_serve") return event.port as number;
    }
    return null;
  });
  baseUrl = `http://127.0.0.1:${port}`;
}, 30000);

afterAll(() => {
  server?.kill();
  rmSync(workDir, { recursive: true, force: true });
});

function press(key: string): void {
  document.dispatchEvent(new KeyboardEvent("keydown", { key, bubbles: true }));
}

function readLog(): Array<{ image_id: string; verdict: Verdict; reviewer: string }> {
  try {
    return readFileSync(logPath, "utf-8")
      .split("\n")
      .filter((line) => line.trim())
      .map((line) => JSON.parse(line));
  } catch {
    return [];
  }
}

describe("review UI against the live service", () => {
  it("drives 20 pairs with keyboard verdicts into the server log", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new ReviewApp(root, new ApiClient(baseUrl), {
      pollMs: 0, retryMs: 0, reviewer: "e2e",
    });
    await app.start();
    expect(app.currentPair).not.toBeNull();

    const keys = ["k", "h", "u"];
    const expected = new Map<string, Verdict>();
    const verdictOf: Record<string, Verdict> = {
      k: "kept", h: "rejected_hallucination", u: "rejected_unrealistic",
    };
    for (let i = 0; i < 20; i++) {
      const pair = app.currentPair!;
      const key = keys[i % keys.length];
      expected.set(pair.image_id, verdictOf[key]);
      press(key);
      await waitForAsync(async () => app.currentPair?.image_id !== pair.image_id
        || (app.currentPair === null && i === 19));
    }

    await waitForAsync(async () => readLog().length === 20);
    const log = readLog();
    expect(log).toHaveLength(20);
    for (const entry of log) {
      expect(entry.verdict).toBe(expected.get(entry.image_id));
      expect(entry.reviewer).toBe("e2e");
    }
    expect(new Set(log.map((entry) => entry.image_id)).size).toBe(20);

    // Completion screen once nothing is pending.
    await waitForAsync(async () => root.querySelector(".completion") !== null);
    app.stop();
  }, 60000);

  it("progress endpoint totals match the submitted verdicts", async () => {
    const progress = await new ApiClient(baseUrl).progress();
    const totals = { pending: 0, kept: 0, rejected_hallucination: 0, rejected_unrealistic: 0 };
    for (const counts of Object.values(progress)) {
      totals.pending += counts.pending;
      totals.kept += counts.kept;
      totals.rejected_hallucination += counts.rejected_hallucination;
      totals.rejected_unrealistic += counts.rejected_unrealistic;
    }
    expect(totals.pending).toBe(0);
    expect(totals.kept + totals.rejected_hallucination + totals.rejected_unrealistic).toBe(20);

    const log = readLog();
    const fromLog = { kept: 0, rejected_hallucination: 0, rejected_unrealistic: 0 };
    for (const entry of log) fromLog[entry.verdict] += 1;
    expect(totals.kept).toBe(fromLog.kept);
    expect(totals.rejected_hallucination).toBe(fromLog.rejected_hallucination);
    expect(totals.rejected_unrealistic).toBe(fromLog.rejected_unrealistic);
  }, 30000);

  it("a reloaded client sees the server state (log is the source of truth)", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new ReviewApp(root, new ApiClient(baseUrl), { pollMs: 0, retryMs: 0 });
    await app.start();
    expect(app.currentPair).toBeNull();
    expect(root.querySelector(".completion")).not.toBeNull();
    const text = root.querySelector(".completion")!.textContent!;
    expect(text).toContain("all pairs reviewed");
    app.stop();
  }, 30000);

  it("serves the built UI shell", async () => {
    const response = await fetch(`${baseUrl}/`);
    expect(response.status).toBe(200);
    const html = await response.text();
    expect(html).toContain('<div id="app">');
    const js = await fetch(`${baseUrl}/main.js`);
    expect(js.status).toBe(200);
  });
});
