#!/usr/bin/env node
/**
 * fixtures make  --in sents.txt --out fixtures/ [--parser spacy|preparsed]
 *                [--annotations file.json] [--model en_core_web_sm]
 *                [--validate-cmd "treeprompt"]
 * fixtures glove --vocab vocab.json --glove vectors.txt --out table.tpck
 *                --d-w 32
 *
 * Exit codes: 0 success, 1 bad input/arguments, 2 environment failures
 * (parser unavailable, subprocess errors).
 */

import { spawnSync } from "node:child_process";

import { DimMismatch, extractGloveSubset, loadVocabWords } from "./glove.js";
import { EmptyInput, writeFixtures } from "./make.js";
import { AnnotationMismatch, ParserUnavailable, makeBackend } from "./parser.js";
import { writeTpck } from "./tpck.js";

function parseArgs(argv: string[]): { flags: Map<string, string>; positional: string[] } {
  const flags = new Map<string, string>();
  const positional: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith("--")) {
      const value = argv[i + 1];
      if (value === undefined || value.startsWith("--")) {
        flags.set(arg.slice(2), "true");
      } else {
        flags.set(arg.slice(2), value);
        i++;
      }
    } else {
      positional.push(arg);
    }
  }
  return { flags, positional };
}

function need(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (!value) {
    throw new UsageError(`missing required flag --${name}`);
  }
  return value;
}

class UsageError extends Error {}

function cmdMake(flags: Map<string, string>): void {
  const input = need(flags, "in");
  const outDir = need(flags, "out");
  const backendKind = flags.get("parser") ?? "spacy";
  const backend = makeBackend(backendKind, {
    annotations: flags.get("annotations"),
    python: flags.get("python"),
    model: flags.get("model"),
  });
  const { conlluPath, manifest } = writeFixtures(input, outDir, backend);
  console.log(
    `wrote ${manifest.sentence_count} sentences to ${conlluPath} (parser ${manifest.parser})`,
  );

  const validateCmd = flags.get("validate-cmd");
  if (validateCmd) {
    const result = spawnSync(validateCmd, ["parse", conlluPath, "--quiet"], {
      encoding: "utf-8",
    });
    if (result.error || result.status !== 0) {
      throw new Error(
        `primary validation failed: ${result.error?.message ?? result.stderr}`,
      );
    }
    console.log(`primary validation: ${result.stdout.trim()}`);
  }
}

function cmdGlove(flags: Map<string, string>): void {
  const vocabPath = need(flags, "vocab");
  const glovePath = need(flags, "glove");
  const outPath = need(flags, "out");
  const dW = Number(need(flags, "d-w"));
  if (!Number.isInteger(dW) || dW <= 0) {
    throw new UsageError(`--d-w must be a positive integer, got ${flags.get("d-w")}`);
  }
  const vocab = loadVocabWords(vocabPath);
  const subset = extractGloveSubset(vocab, glovePath, dW);
  writeTpck(outPath, [subset.tensor]);
  console.log(
    `wrote ${subset.tensor.shape[0]} x ${dW} word table to ${outPath} ` +
      `(${subset.found} found, ${subset.missing.length} mapped to <unk>)`,
  );
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  const { flags } = parseArgs(rest);
  try {
    if (command === "make") {
      cmdMake(flags);
    } else if (command === "glove") {
      cmdGlove(flags);
    } else {
      throw new UsageError(
        `unknown command ${command ?? "(none)"}; expected "make" or "glove"`,
      );
    }
    return 0;
  } catch (err) {
    if (err instanceof ParserUnavailable) {
      console.error(`parser unavailable: ${err.message}`);
      return 2;
    }
    if (
      err instanceof UsageError ||
      err instanceof EmptyInput ||
      err instanceof DimMismatch ||
      err instanceof AnnotationMismatch ||
      (err as NodeJS.ErrnoException).code === "ENOENT"
    ) {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    console.error(`failure: ${(err as Error).message}`);
    return 2;
  }
}

const invokedDirectly =
  process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
