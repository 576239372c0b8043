/**
 * End-to-end against the real adjudication service: spawns
 * `plate-bench adjudicate serve` on fixtures, then drives the UI's own
 * client and view-models through an annotator session and a conflict
 * review.
 */

import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AdjudicationApi } from "../src/api.js";
import { LabelSession } from "../src/labelSession.js";
import { ReviewQueue, highlightSubmissions } from "../src/reviewQueue.js";

const PORT = 21000 + (process.pid % 3000);
const BASE = `http://127.0.0.1:${PORT}`;
const TASK_COUNT = 6;

// 1x1 black grayscale PNG
const PNG = Buffer.from(
  "89504e470d0a1a0a0000000d49484452000000010000000108000000003a7e9b55" +
    "0000000a49444154789c63600000000200015d7d5ba80000000049454e44ae426082",
  "hex",
);

let proc: ChildProcess | null = null;

async function waitForService(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/tasks`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("adjudication service did not come up in 30s");
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "plate-ui-"));
  const lines = [JSON.stringify({ name: "ui-fixture", seed: null })];
  for (let i = 0; i < TASK_COUNT; i++) {
    writeFileSync(join(dir, `t${i}.png`), PNG);
    lines.push(
      JSON.stringify({
        id: `t${i}`,
        path: `t${i}.png`,
        label: null,
        width_px: 1,
        height_px: 1,
        tags: [],
      }),
    );
  }
  const manifestPath = join(dir, "manifest.jsonl");
  writeFileSync(manifestPath, lines.join("\n") + "\n");

  proc = spawn(
    "plate-bench",
    ["adjudicate", "serve", "--manifest", manifestPath, "--port", String(PORT)],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  await waitForService();
}, 60_000);

afterAll(() => {
  proc?.kill();
});

describe("annotator session against the live service", () => {
  it("labels five tasks end-to-end with auto-advance", async () => {
    const session = new LabelSession(new AdjudicationApi(BASE), "ui-annotator");
    let snap = await session.start();
    const visited: string[] = [];
    for (let i = 0; i < 5; i++) {
      expect(snap.state).toBe("ready");
      visited.push(snap.task!.id);
      session.setInput(`abc100${i}`);
      snap = session.snapshot();
      expect(snap.input).toBe(`ABC100${i}`); // uppercased live
      snap = await session.submit();
    }
    expect(snap.labeled).toBe(5);
    expect(new Set(visited).size).toBe(5); // five distinct tasks
    expect(snap.task!.id).toBe("t5"); // advanced onto the last one
  });

  it("rejects a duplicate from the same annotator via the service", async () => {
    const api = new AdjudicationApi(BASE);
    await expect(api.submitLabel("t0", "ui-annotator", "XXX9999")).rejects.toMatchObject({
      status: 409,
    });
  });
});

describe("conflict review against the live service", () => {
  it("a seeded three-way conflict appears with positions and clears on resolve", async () => {
    const api = new AdjudicationApi(BASE);
    // two peers disagree on t5, then the UI annotator's third submission
    // (different again) trips the vote into needs_review
    await api.submitLabel("t5", "peer-1", "AXC1111");
    await api.submitLabel("t5", "peer-2", "AYC1111");

    const session = new LabelSession(new AdjudicationApi(BASE), "ui-annotator");
    await session.start();
    expect(session.snapshot().task!.id).toBe("t5");
    session.setInput("AZC1111");
    const after = await session.submit();
    expect(after.state).toBe("done"); // nothing left to label

    const queue = new ReviewQueue(api, "reviewer");
    const snap = await queue.load();
    expect(snap.tasks).toHaveLength(1);
    const review = snap.tasks[0]!;
    expect(review.id).toBe("t5");
    expect(review.conflict_positions).toEqual([1]);

    const rows = highlightSubmissions(review);
    expect(rows).toHaveLength(3);
    for (const row of rows) {
      expect(row.cells.filter((c) => c.conflict).length).toBe(1);
      expect(row.cells[1]!.conflict).toBe(true);
    }

    const resolved = await queue.resolve("t5", "AYC1111");
    expect(resolved).toBe(true);
    const reloaded = await queue.load();
    expect(reloaded.tasks).toHaveLength(0); // disappeared from the queue
  });

  it("exports a fully labeled manifest once everything is resolved", async () => {
    // t0..t4 hold one submission each; export is blocked until the other
    // two annotators agree and every task resolves
    const blocked = await fetch(`${BASE}/export`);
    expect(blocked.status).toBe(409);

    const api = new AdjudicationApi(BASE);
    for (let i = 0; i < 5; i++) {
      for (const peer of ["peer-1", "peer-2"]) {
        await api.submitLabel(`t${i}`, peer, `ABC100${i}`);
      }
    }
    const resp = await fetch(`${BASE}/export`);
    expect(resp.status).toBe(200);
    const lines = (await resp.text()).trim().split("\n");
    expect(lines).toHaveLength(1 + TASK_COUNT);
    expect(lines[1]).toContain("ABC1000");
  });
});
