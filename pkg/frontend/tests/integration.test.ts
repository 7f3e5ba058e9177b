/**
 * End-to-end review flow against a real service process.
 *
 * Boots `visknow serve` on a throwaway KB, then checks that approving a
 * region through the store shrinks the pending queue, that applying
 * decisions adds exactly one grounding to the target entity, and that an
 * out-of-bounds box edit is stopped client-side and, when forced through
 * the raw API, rejected by the server with InvalidEdit.
 */

import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, Client } from "../src/api.js";
import { ClientValidationError, QueueStore } from "../src/state.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const PORT = 38651;
const BASE = `http://127.0.0.1:${PORT}`;
const TOKEN = "itest";

let server: ChildProcess | undefined;
let workdir: string;
let itemIds: { approve_region: string; edit_region: string; triplet: string };

async function waitForServer(client: Client): Promise<void> {
  const deadline = Date.now() + 30000;
  let lastError: unknown;
  while (Date.now() < deadline) {
    try {
      await client.listReview({ pageSize: 1 });
      return;
    } catch (err) {
      lastError = err;
      await new Promise((resolve) => setTimeout(resolve, 200));
    }
  }
  throw new Error(`service did not come up: ${String(lastError)}`);
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "visknow-ui-"));
  const kbDir = join(workdir, "kb");
  const out = execFileSync(
    "python3", [join(HERE, "make_fixture_kb.py"), kbDir],
    { encoding: "utf-8" },
  );
  itemIds = JSON.parse(out.trim());
  server = spawn(
    "visknow",
    ["serve", "--kb", kbDir, "--token", TOKEN, "--addr", `127.0.0.1:${PORT}`],
    { stdio: "ignore" },
  );
  await waitForServer(new Client(BASE, TOKEN));
});

afterAll(() => {
  server?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe("review service round trip", () => {
  it("walks the approve, apply, and invalid edit paths", async () => {
    const client = new Client(BASE, TOKEN);
    const store = new QueueStore(client);
    await store.load();
    expect(store.total).toBe(3);

    // groundings on the target entity before any decision is applied
    const before = await client.subgraph("zebra");
    const stripesBefore = before.entities.find((e) => e.label === "stripes");
    expect(stripesBefore).toBeDefined();
    const countBefore = stripesBefore!.groundings;

    // approving through the store shrinks the pending queue
    await store.approve(itemIds.approve_region);
    expect(store.total).toBe(2);
    const { total } = await client.listReview({});
    expect(total).toBe(2);

    // applying decisions adds exactly one grounding to the entity
    const applied = await store.applyAll();
    expect(applied.checksum).toMatch(/^[0-9a-f]{64}$/);
    const after = await client.subgraph("zebra");
    const stripesAfter = after.entities.find((e) => e.label === "stripes");
    expect(stripesAfter!.groundings).toBe(countBefore + 1);

    // an out-of-bounds edit never leaves the client
    await store.load();
    const item = store.find(itemIds.edit_region)!;
    const oob = { ...item.payload, box: [90, 70, 30, 30] };
    const clientErr = await store.edit(itemIds.edit_region, oob).catch((e) => e);
    expect(clientErr).toBeInstanceOf(ClientValidationError);
    expect((await client.listReview({})).total).toBe(2);

    // forcing the same edit through the raw API trips the server guard
    const serverErr = await client
      .decide(itemIds.edit_region, "edit", { payload: oob })
      .catch((e) => e);
    expect(serverErr).toBeInstanceOf(ApiError);
    expect((serverErr as ApiError).status).toBe(422);
    expect((serverErr as ApiError).code).toBe("InvalidEdit");
    expect((await client.listReview({})).total).toBe(2);

    // a clamped version of the same edit goes through
    const good = { ...item.payload, box: [70, 50, 30, 30] };
    await store.edit(itemIds.edit_region, good);
    expect((await client.listReview({})).total).toBe(1);
  });

  it("serves image bytes with the version header", async () => {
    const client = new Client(BASE, TOKEN);
    const response = await fetch(client.imageUrl("img-1"));
    expect(response.status).toBe(200);
    expect(response.headers.get("x-format-version")).toBe("1");
    const bytes = new Uint8Array(await response.arrayBuffer());
    expect(Array.from(bytes.slice(0, 4))).toEqual([0x89, 0x50, 0x4e, 0x47]);
  });
});
