/**
 * Text encoders producing per-token last-layer hidden states.
 *
 * Two families:
 *  - pretrained transformer encoders loaded through @xenova/transformers
 *    (ONNX runtime; downloads the model on first use);
 *  - a deterministic offline "test-hash-<dim>" encoder for hermetic tests
 *    and air-gapped runs, with a whitespace tokenizer and hash-seeded
 *    hidden states.
 *
 * Both mark special tokens so pooling can skip them.
 */

export interface TokenEmbedding {
  token: string;
  hidden: number[];
  special: boolean;
}

export interface Encoder {
  readonly modelName: string;
  /** Hidden-state width; known before encoding anything. */
  readonly dim: number;
  encode(text: string, maxTokens: number): Promise<TokenEmbedding[]>;
}

export const DEFAULT_MODEL = "gte-en-mlm-large";

/** Known model names -> hub id + declared hidden width. */
export const MODEL_REGISTRY: Record<string, { hubId: string; dim: number }> = {
  "gte-en-mlm-large": { hubId: "Alibaba-NLP/gte-en-mlm-large", dim: 1024 },
  "bert-base": { hubId: "Xenova/bert-base-uncased", dim: 768 },
  "bert-large": { hubId: "Xenova/bert-large-uncased", dim: 1024 },
};

// ---------------------------------------------------------------------------
// deterministic hash encoder

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;
const MASK64 = (1n << 64n) - 1n;

function fnv1a(text: string): bigint {
  let h = FNV_OFFSET;
  for (const byte of Buffer.from(text, "utf-8")) {
    h = ((h ^ BigInt(byte)) * FNV_PRIME) & MASK64;
  }
  return h;
}

function splitmix64(state: bigint): [bigint, bigint] {
  let z = (state + 0x9e3779b97f4a7c15n) & MASK64;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return [(z ^ (z >> 31n)) & MASK64, (state + 0x9e3779b97f4a7c15n) & MASK64];
}

/** Unit-range floats derived from the token text; stable across runs. */
function hashVector(token: string, dim: number): number[] {
  const out = new Array<number>(dim);
  let state = fnv1a(token);
  for (let i = 0; i < dim; i++) {
    const [value, next] = splitmix64(state);
    state = next;
    // top 53 bits -> [0, 1) -> [-1, 1)
    out[i] = Number(value >> 11n) / 2 ** 53 * 2 - 1;
  }
  return out;
}

export class HashEncoder implements Encoder {
  readonly modelName: string;
  readonly dim: number;

  constructor(dim: number) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new Error(`hash encoder dim must be a positive integer, got ${dim}`);
    }
    this.modelName = `test-hash-${dim}`;
    this.dim = dim;
  }

  async encode(text: string, maxTokens: number): Promise<TokenEmbedding[]> {
    const words = text.split(/\s+/).filter((w) => w.length > 0);
    const content = words.slice(0, Math.max(1, maxTokens - 2));
    return [
      { token: "[BOS]", hidden: hashVector("[BOS]", this.dim), special: true },
      ...content.map((w) => ({
        token: w,
        hidden: hashVector(w, this.dim),
        special: false,
      })),
      { token: "[EOS]", hidden: hashVector("[EOS]", this.dim), special: true },
    ];
  }
}

// ---------------------------------------------------------------------------
// pretrained encoder via @xenova/transformers

export class TransformersEncoder implements Encoder {
  readonly modelName: string;
  readonly dim: number;
  private readonly hubId: string;
  private tokenizer: any;
  private model: any;

  constructor(modelName: string, hubId: string, dim: number) {
    this.modelName = modelName;
    this.hubId = hubId;
    this.dim = dim;
  }

  private async load(): Promise<void> {
    if (this.model) return;
    let transformers: any;
    try {
      // optional dependency: resolved at runtime when installed
      // @ts-ignore
      transformers = await import("@xenova/transformers");
    } catch {
      throw new ModelUnavailableError(
        `the '@xenova/transformers' package is not installed; ` +
          `run 'npm install' inside embedgen/ and retry`
      );
    }
    try {
      this.tokenizer = await transformers.AutoTokenizer.from_pretrained(this.hubId);
      this.model = await transformers.AutoModel.from_pretrained(this.hubId);
    } catch (err) {
      throw new ModelUnavailableError(
        `could not load model '${this.hubId}': ${String(err)}\n` +
          `download it first on a machine with network access, e.g.\n` +
          `  node -e "import('@xenova/transformers').then(t => ` +
          `t.AutoModel.from_pretrained('${this.hubId}'))"\n` +
          `or point TRANSFORMERS_CACHE at a directory that already holds it`
      );
    }
  }

  async encode(text: string, maxTokens: number): Promise<TokenEmbedding[]> {
    await this.load();
    const inputs = await this.tokenizer(text, {
      truncation: true,
      max_length: maxTokens,
    });
    const withSpecial: bigint[] = Array.from(inputs.input_ids.data, BigInt);
    const bare = await this.tokenizer(text, {
      truncation: true,
      max_length: maxTokens,
      add_special_tokens: false,
    });
    const contentIds: bigint[] = Array.from(bare.input_ids.data, BigInt);
    // specials are the prefix/suffix around the contiguous content ids
    let start = 0;
    outer: for (; start + contentIds.length <= withSpecial.length; start++) {
      for (let j = 0; j < contentIds.length; j++) {
        if (withSpecial[start + j] !== contentIds[j]) continue outer;
      }
      break;
    }
    const contentRange = new Set<number>();
    for (let j = 0; j < contentIds.length; j++) contentRange.add(start + j);

    const output = await this.model(inputs);
    const hiddenState = output.last_hidden_state;
    const [, nTokens, width] = hiddenState.dims;
    if (width !== this.dim) {
      throw new Error(
        `model '${this.modelName}' declares dim ${this.dim} but produced ${width}`
      );
    }
    const flat = hiddenState.data as Float32Array;
    const tokens: TokenEmbedding[] = [];
    for (let t = 0; t < nTokens; t++) {
      tokens.push({
        token: String(withSpecial[t]),
        hidden: Array.from(flat.slice(t * width, (t + 1) * width)),
        special: !contentRange.has(t),
      });
    }
    return tokens;
  }
}

export class ModelUnavailableError extends Error {}

const HASH_NAME = /^test-hash-(\d+)$/;

export function makeEncoder(modelName: string): Encoder {
  const hashMatch = HASH_NAME.exec(modelName);
  if (hashMatch) {
    return new HashEncoder(parseInt(hashMatch[1], 10));
  }
  const known = MODEL_REGISTRY[modelName];
  if (known) {
    return new TransformersEncoder(modelName, known.hubId, known.dim);
  }
  throw new Error(
    `unknown model '${modelName}'; known: ` +
      `${Object.keys(MODEL_REGISTRY).join(", ")}, test-hash-<dim>`
  );
}
