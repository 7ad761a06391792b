/** Subprocess plumbing: every binding delegates to the core CLI. */

import { spawnSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/**
 * Command used to reach the core pipeline. Override with the VOXDET_CLI
 * environment variable (e.g. "voxdet" for an installed console script).
 */
export function cliCommand(): string[] {
  const env = process.env.VOXDET_CLI;
  if (env && env.trim().length > 0) {
    return env.trim().split(/\s+/);
  }
  return ["python3", "-m", "voxdet.cli"];
}

export function runCli(args: string[], stdin?: string): Buffer {
  const [cmd, ...base] = cliCommand();
  const proc = spawnSync(cmd, [...base, ...args], {
    input: stdin,
    maxBuffer: 1 << 28,
  });
  if (proc.error) {
    throw proc.error;
  }
  if (proc.status !== 0) {
    // surface the core's error message verbatim
    const detail = proc.stderr?.toString("utf-8").trim();
    throw new Error(detail || `core CLI failed with exit code ${proc.status}`);
  }
  return proc.stdout;
}

/** Run `fn` with a scratch directory that is removed afterwards. */
export function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "voxdet-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}
