/** Shared test helpers: fixture loading and the toy-mode server fixture. */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { SchemaInfo, SessionEvent } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));
export const repoRoot = dirname(dirname(here));

/** The committed golden session logs double as recorded API transcripts. */
export function goldenEvents(name: string): SessionEvent[] {
  const raw = readFileSync(join(repoRoot, "tests", "golden", `${name}.jsonl`), "utf-8");
  return raw
    .split("\n")
    .filter((line) => line.length > 0)
    .map((line) => JSON.parse(line) as SessionEvent);
}

export function fixtureSchemas(): SchemaInfo[] {
  const raw = readFileSync(join(here, "fixtures", "schema_response.json"), "utf-8");
  return (JSON.parse(raw) as { schemas: SchemaInfo[] }).schemas;
}

export async function until(
  check: () => boolean,
  what: string,
  timeoutMs = 15_000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!check()) {
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${what}`);
    await new Promise((resolve) => setTimeout(resolve, 25));
  }
}

export interface ServerFixture {
  baseUrl: string;
  dataDir: string;
  stop: () => void;
}

/** Spawns the real service (`reflex serve`) in toy mode on a free-ish port
 * and waits until /schema answers. */
export async function startServer(extraArgs: string[] = []): Promise<ServerFixture> {
  const port = 8300 + Math.floor(Math.random() * 500);
  const baseUrl = `http://127.0.0.1:${port}`;
  const dataDir = mkdtempSync(join(tmpdir(), "reflex-ui-test-"));
  const child: ChildProcess = spawn(
    "reflex",
    ["serve", "--listen", `127.0.0.1:${port}`, "--data-dir", dataDir, ...extraArgs],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let log = "";
  child.stdout?.on("data", (chunk: Buffer) => (log += chunk.toString()));
  child.stderr?.on("data", (chunk: Buffer) => (log += chunk.toString()));

  const deadline = Date.now() + 20_000;
  for (;;) {
    if (child.exitCode !== null) {
      throw new Error(`server exited early (code ${child.exitCode}):\n${log}`);
    }
    try {
      const response = await fetch(`${baseUrl}/schema`);
      if (response.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      child.kill();
      throw new Error(`server did not come up:\n${log}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  return {
    baseUrl,
    dataDir,
    stop: () => {
      child.kill("SIGTERM");
      rmSync(dataDir, { recursive: true, force: true });
    },
  };
}
