/**
 * The fixture pipeline: sentences file in, validated CoNLL-U + manifest out.
 */

import { createHash } from "node:crypto";
import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { basename, join } from "node:path";

import {
  ParsedSentence,
  removePunctuation,
  toConlluDocument,
  validateTree,
} from "./conllu.js";
import { ParserBackend } from "./parser.js";

export class EmptyInput extends Error {
  constructor(message: string) {
    super(message);
    this.name = "EmptyInput";
  }
}

export interface FixtureManifest {
  source: string;
  sentence_count: number;
  parser: string;
  output: string;
  sha256: { conllu: string };
}

export function readSentences(path: string): string[] {
  const lines = readFileSync(path, "utf-8")
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new EmptyInput(`no sentences in ${path}`);
  }
  return lines;
}

export function buildFixtures(sentences: string[], backend: ParserBackend): {
  document: string;
  sentences: ParsedSentence[];
} {
  if (sentences.length === 0) {
    throw new EmptyInput("no sentences given");
  }
  const parsed = backend.parse(sentences).map((s) => {
    validateTree(s);
    const clean = removePunctuation(s);
    // the text comment reflects the tokens actually emitted
    return { ...clean, text: clean.tokens.map((t) => t.word.toLowerCase()).join(" ") };
  });
  return { document: toConlluDocument(parsed), sentences: parsed };
}

export function writeFixtures(
  sentencesPath: string,
  outDir: string,
  backend: ParserBackend,
): { conlluPath: string; manifestPath: string; manifest: FixtureManifest } {
  const sentences = readSentences(sentencesPath);
  const { document } = buildFixtures(sentences, backend);
  mkdirSync(outDir, { recursive: true });
  const stem = basename(sentencesPath).replace(/\.[^.]+$/, "");
  const conlluPath = join(outDir, `${stem}.conllu`);
  writeFileSync(conlluPath, document, "utf-8");
  const manifest: FixtureManifest = {
    source: basename(sentencesPath),
    sentence_count: sentences.length,
    parser: backend.name,
    output: basename(conlluPath),
    sha256: {
      conllu: createHash("sha256").update(document).digest("hex"),
    },
  };
  const manifestPath = join(outDir, `${stem}.manifest.json`);
  writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n", "utf-8");
  return { conlluPath, manifestPath, manifest };
}
