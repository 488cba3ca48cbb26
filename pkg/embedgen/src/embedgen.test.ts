import assert from "node:assert/strict";
import { execFileSync, spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { test } from "node:test";
import { fileURLToPath } from "node:url";

import { HashEncoder, makeEncoder } from "./encoders.js";
import { columnText, meanPoolContent } from "./pool.js";
import { generate, readColumns } from "./main.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
const CLI = path.join(HERE, "main.js");

function tmpDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "embedgen-"));
}

/** Mirror of the consumer's context-file validation rules. */
function validateContextFile(raw: string): { model: string; dim: number } {
  const parsed = JSON.parse(raw);
  assert.equal(typeof parsed.model, "string");
  assert.ok(Number.isInteger(parsed.dim) && parsed.dim >= 1);
  const names = Object.keys(parsed.columns);
  assert.ok(names.length >= 1);
  for (const name of names) {
    const vec = parsed.columns[name];
    assert.ok(Array.isArray(vec), `column ${name} not an array`);
    assert.equal(vec.length, parsed.dim, `column ${name} has wrong length`);
    for (const v of vec) {
      assert.ok(typeof v === "number" && Number.isFinite(v));
    }
  }
  return { model: parsed.model, dim: parsed.dim };
}

test("column text template", () => {
  assert.equal(columnText("age", "years since birth"), "age: years since birth");
  assert.equal(columnText("age", ""), "age");
  assert.equal(columnText("age", "   "), "age");
});

test("mean pooling skips special tokens", async () => {
  const enc = new HashEncoder(8);
  const tokens = await enc.encode("alpha beta", 512);
  assert.equal(tokens.length, 4); // BOS alpha beta EOS
  const pooled = meanPoolContent(tokens);
  for (let i = 0; i < 8; i++) {
    const expected = (tokens[1].hidden[i] + tokens[2].hidden[i]) / 2;
    assert.ok(Math.abs(pooled[i] - expected) < 1e-15);
  }
});

test("single-token pooling identity", async () => {
  const enc = new HashEncoder(16);
  const tokens = await enc.encode("alone", 512);
  const pooled = meanPoolContent(tokens);
  assert.deepEqual(pooled, tokens[1].hidden);
});

test("identical text gives identical vectors", async () => {
  const out = await generate(
    new Map([
      ["a", "shared description"],
      ["b", "shared description"],
    ]),
    "test-hash-12",
    512
  );
  // different names embed differently even with equal descriptions...
  assert.notDeepEqual(out.columns.a, out.columns.b);
  // ...while truly identical inputs collide
  const again = await generate(new Map([["a", "shared description"]]),
    "test-hash-12", 512);
  assert.deepEqual(again.columns.a, out.columns.a);
});

test("declared model dim is honored", async () => {
  const out = await generate(new Map([["x", ""]]), "test-hash-32", 512);
  assert.equal(out.dim, 32);
  assert.equal(out.model, "test-hash-32");
  assert.equal(out.columns.x.length, 32);
});

test("max tokens truncates long descriptions", async () => {
  const longText = Array(2000).fill("word").join(" ");
  const enc = makeEncoder("test-hash-4");
  const tokens = await enc.encode(longText, 16);
  assert.ok(tokens.length <= 16);
});

test("cli end to end: write, validate, determinism", () => {
  const dir = tmpDir();
  const columnsPath = path.join(dir, "columns.json");
  fs.writeFileSync(
    columnsPath,
    JSON.stringify({ age: "years since birth", income: "", city: "home town" })
  );
  const outA = path.join(dir, "a.json");
  const outB = path.join(dir, "b.json");
  for (const out of [outA, outB]) {
    execFileSync(process.execPath, [
      CLI, columnsPath, "--out", out, "--model-name", "test-hash-24",
    ]);
  }
  const rawA = fs.readFileSync(outA, "utf-8");
  const rawB = fs.readFileSync(outB, "utf-8");
  assert.equal(rawA, rawB); // byte-identical across runs
  const { model, dim } = validateContextFile(rawA);
  assert.equal(model, "test-hash-24");
  assert.equal(dim, 24);
});

test("empty column set exits 2", () => {
  const dir = tmpDir();
  const columnsPath = path.join(dir, "columns.json");
  fs.writeFileSync(columnsPath, "{}");
  const result = spawnSync(process.execPath, [
    CLI, columnsPath, "--out", path.join(dir, "o.json"),
    "--model-name", "test-hash-8",
  ]);
  assert.equal(result.status, 2);
  assert.match(String(result.stderr), /no columns/);
});

test("missing required args exit 2", () => {
  const result = spawnSync(process.execPath, [CLI]);
  assert.equal(result.status, 2);
  assert.match(String(result.stderr), /usage/);
});

test("unknown model name is a clean error", () => {
  assert.throws(() => makeEncoder("no-such-model"), /unknown model/);
});

test("readColumns validates shape", () => {
  const dir = tmpDir();
  const bad = path.join(dir, "bad.json");
  fs.writeFileSync(bad, JSON.stringify(["not", "an", "object"]));
  assert.throws(() => readColumns(bad), /JSON object/);
  const badDesc = path.join(dir, "bad2.json");
  fs.writeFileSync(badDesc, JSON.stringify({ a: 5 }));
  assert.throws(() => readColumns(badDesc), /must be a string/);
});
