#!/usr/bin/env node
/**
 * embedgen: produce the per-column context-embedding JSON consumed by the
 * imputation pipeline.
 *
 *   embedgen <columns.json> --out emb.json [--model-name NAME]
 *            [--max-tokens 512]
 *
 * columns.json maps column name -> description (empty string when none).
 * Output schema: {"model": string, "dim": int, "columns": {name: [floats]}}.
 * Exit codes: 0 ok, 2 usage/validation error, 3 model unavailable.
 */

import * as fs from "fs";
import { DEFAULT_MODEL, makeEncoder, ModelUnavailableError } from "./encoders.js";
import { columnText, meanPoolContent } from "./pool.js";

interface CliArgs {
  columnsPath: string;
  out: string;
  modelName: string;
  maxTokens: number;
}

const USAGE =
  "usage: embedgen <columns.json> --out <emb.json> " +
  `[--model-name ${DEFAULT_MODEL}] [--max-tokens 512]`;

function parseArgs(argv: string[]): CliArgs {
  let columnsPath = "";
  let out = "";
  let modelName = DEFAULT_MODEL;
  let maxTokens = 512;
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--out") out = argv[++i] ?? "";
    else if (arg === "--model-name") modelName = argv[++i] ?? "";
    else if (arg === "--max-tokens") maxTokens = parseInt(argv[++i] ?? "", 10);
    else if (arg === "--help" || arg === "-h") {
      console.log(USAGE);
      process.exit(0);
    } else if (!arg.startsWith("--") && !columnsPath) columnsPath = arg;
    else throw new UsageError(`unexpected argument '${arg}'`);
  }
  if (!columnsPath || !out) throw new UsageError(USAGE);
  if (!Number.isInteger(maxTokens) || maxTokens < 3) {
    throw new UsageError("--max-tokens must be an integer >= 3");
  }
  return { columnsPath, out, modelName, maxTokens };
}

class UsageError extends Error {}

export function readColumns(path: string): Map<string, string> {
  let raw: string;
  try {
    raw = fs.readFileSync(path, "utf-8");
  } catch (err) {
    throw new UsageError(`cannot read ${path}: ${String(err)}`);
  }
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch (err) {
    throw new UsageError(`${path} is not valid JSON: ${String(err)}`);
  }
  if (parsed === null || typeof parsed !== "object" || Array.isArray(parsed)) {
    throw new UsageError(`${path} must be a JSON object of name -> description`);
  }
  const columns = new Map<string, string>();
  for (const [name, description] of Object.entries(parsed)) {
    if (typeof description !== "string") {
      throw new UsageError(`description of column '${name}' must be a string`);
    }
    if (!name) throw new UsageError("empty column name");
    columns.set(name, description);
  }
  if (columns.size === 0) {
    throw new UsageError(`${path} holds no columns`);
  }
  return columns;
}

export async function generate(
  columns: Map<string, string>,
  modelName: string,
  maxTokens: number
): Promise<{ model: string; dim: number; columns: Record<string, number[]> }> {
  const encoder = makeEncoder(modelName);
  const vectors: Record<string, number[]> = {};
  for (const [name, description] of columns) {
    const tokens = await encoder.encode(columnText(name, description), maxTokens);
    const pooled = meanPoolContent(tokens);
    if (pooled.length !== encoder.dim) {
      throw new Error(
        `column '${name}': pooled width ${pooled.length} != model dim ${encoder.dim}`
      );
    }
    if (!pooled.every(Number.isFinite)) {
      throw new Error(`column '${name}': non-finite embedding entry`);
    }
    vectors[name] = pooled;
  }
  return { model: encoder.modelName, dim: encoder.dim, columns: vectors };
}

async function main(): Promise<number> {
  try {
    const args = parseArgs(process.argv.slice(2));
    const columns = readColumns(args.columnsPath);
    const payload = await generate(columns, args.modelName, args.maxTokens);
    fs.writeFileSync(args.out, JSON.stringify(payload) + "\n", "utf-8");
    console.log(
      `wrote ${args.out}: ${Object.keys(payload.columns).length} columns, dim ${payload.dim}`
    );
    return 0;
  } catch (err) {
    if (err instanceof ModelUnavailableError) {
      console.error(`embedgen: model unavailable: ${err.message}`);
      return 3;
    }
    if (err instanceof UsageError) {
      console.error(`embedgen: ${err.message}`);
      return 2;
    }
    console.error(`embedgen: error: ${String(err)}`);
    return 2;
  }
}

const isDirectRun =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (isDirectRun) {
  main().then((code) => process.exit(code));
}
