import { TokenEmbedding } from "./encoders.js";

/**
 * Mean of the last-layer hidden states over content (non-special) tokens.
 * A single content token therefore pools to exactly its own hidden state.
 */
export function meanPoolContent(tokens: TokenEmbedding[]): number[] {
  const content = tokens.filter((t) => !t.special);
  if (content.length === 0) {
    throw new Error("nothing to pool: no content tokens");
  }
  const dim = content[0].hidden.length;
  const out = new Array<number>(dim).fill(0);
  for (const token of content) {
    for (let i = 0; i < dim; i++) out[i] += token.hidden[i];
  }
  for (let i = 0; i < dim; i++) out[i] /= content.length;
  return out;
}

/** "name: description", or the bare name when no description exists. */
export function columnText(name: string, description: string): string {
  const trimmed = description.trim();
  return trimmed ? `${name}: ${trimmed}` : name;
}
