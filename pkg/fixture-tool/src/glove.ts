/**
 * Extraction of a word-embedding subset for a pipeline vocabulary.
 *
 * Reads GloVe-style text ("word v1 .. vd" per line), emits one row per
 * vocabulary id in the pipeline checkpoint format. The <unk> row (id 0)
 * is the mean of all vectors found; words missing from the embedding file
 * get the <unk> row.
 */

import { readFileSync } from "node:fs";

import { Tensor } from "./tpck.js";

export class DimMismatch extends Error {
  constructor(message: string) {
    super(message);
    this.name = "DimMismatch";
  }
}

export interface GloveSubset {
  tensor: Tensor;
  found: number;
  missing: string[];
}

export function loadVocabWords(vocabJsonPath: string): Map<string, number> {
  const blob = JSON.parse(readFileSync(vocabJsonPath, "utf-8"));
  return new Map(Object.entries(blob.word as Record<string, number>));
}

export function extractGloveSubset(
  vocab: Map<string, number>,
  glovePath: string,
  expectedDim: number,
): GloveSubset {
  const wanted = new Map<string, number>();
  for (const [word, id] of vocab) {
    if (word !== "<unk>") {
      wanted.set(word, id);
    }
  }

  const size = vocab.size;
  const rows = new Float32Array(size * expectedDim);
  const hit = new Set<string>();
  const sum = new Float64Array(expectedDim);

  const text = readFileSync(glovePath, "utf-8");
  for (const line of text.split("\n")) {
    if (!line) continue;
    const firstSpace = line.indexOf(" ");
    const word = line.slice(0, firstSpace);
    if (!wanted.has(word) || hit.has(word)) continue;
    const parts = line.slice(firstSpace + 1).trim().split(/\s+/);
    if (parts.length !== expectedDim) {
      throw new DimMismatch(
        `embedding width ${parts.length} does not match configured d_w ${expectedDim}`,
      );
    }
    const id = wanted.get(word)!;
    for (let d = 0; d < expectedDim; d++) {
      const v = Number(parts[d]);
      rows[id * expectedDim + d] = v;
      sum[d] += v;
    }
    hit.add(word);
  }

  const missing = [...wanted.keys()].filter((w) => !hit.has(w)).sort();
  const unk = new Float32Array(expectedDim);
  if (hit.size > 0) {
    for (let d = 0; d < expectedDim; d++) {
      unk[d] = sum[d] / hit.size;
    }
  }
  rows.set(unk, 0);
  for (const word of missing) {
    rows.set(unk, wanted.get(word)! * expectedDim);
  }

  return {
    tensor: { name: "tables.word", shape: [size, expectedDim], values: rows },
    found: hit.size,
    missing,
  };
}
