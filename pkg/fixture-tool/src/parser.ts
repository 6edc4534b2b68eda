/**
 * Dependency parser backends.
 *
 * The spaCy backend shells out to a bundled Python bridge and raises
 * ParserUnavailable when no usable spaCy install exists. The preparsed
 * backend reads token annotations from a JSON side file, for corpora that
 * already carry parses (and for deterministic testing without a
 * statistical parser on the machine).
 */

import { spawnSync } from "node:child_process";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { ParsedSentence, ParsedToken } from "./conllu.js";

export class ParserUnavailable extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ParserUnavailable";
  }
}

export class AnnotationMismatch extends Error {
  constructor(message: string) {
    super(message);
    this.name = "AnnotationMismatch";
  }
}

export interface ParserBackend {
  /** e.g. "spacy@3.7.4/en_core_web_sm" or "preparsed@1" */
  readonly name: string;
  parse(sentences: string[]): ParsedSentence[];
}

const HERE = dirname(fileURLToPath(import.meta.url));

/** The bridge script lives next to the compiled sources and in src/. */
export function bridgeScriptPath(): string {
  return join(HERE, "spacy_bridge.py");
}

export class SpacyBackend implements ParserBackend {
  readonly name: string;
  private readonly python: string;
  private readonly model: string;

  constructor(python = "python3", model = "en_core_web_sm") {
    this.python = python;
    this.model = model;
    this.name = `spacy/${model}`;
  }

  private run(payload: object): any {
    const result = spawnSync(this.python, [bridgeScriptPath()], {
      input: JSON.stringify(payload),
      encoding: "utf-8",
      maxBuffer: 64 * 1024 * 1024,
    });
    if (result.error) {
      throw new ParserUnavailable(`cannot run ${this.python}: ${result.error.message}`);
    }
    if (result.status === 3) {
      throw new ParserUnavailable(result.stderr.trim() || "spaCy reported itself unavailable");
    }
    if (result.status !== 0) {
      throw new Error(`spaCy bridge failed (${result.status}): ${result.stderr}`);
    }
    return JSON.parse(result.stdout);
  }

  /** Parser identity (exact version) as reported by the bridge. */
  probe(): string {
    const info = this.run({ action: "probe", model: this.model });
    return `spacy@${info.version}/${info.model}`;
  }

  parse(sentences: string[]): ParsedSentence[] {
    const blob = this.run({ action: "parse", model: this.model, sentences });
    return blob.sentences.map((s: any, i: number) => ({
      id: s.id ?? `s${i + 1}`,
      text: sentences[i],
      tokens: s.tokens as ParsedToken[],
    }));
  }
}

interface AnnotationFile {
  parser?: string;
  sentences: {
    id?: string;
    text: string;
    tokens: ParsedToken[];
  }[];
}

export class PreparsedBackend implements ParserBackend {
  readonly name: string;
  private readonly byText: Map<string, AnnotationFile["sentences"][number]>;

  constructor(annotationsPath: string) {
    const blob = JSON.parse(readFileSync(annotationsPath, "utf-8")) as AnnotationFile;
    this.name = blob.parser ?? "preparsed@1";
    this.byText = new Map(blob.sentences.map((s) => [normalize(s.text), s]));
  }

  parse(sentences: string[]): ParsedSentence[] {
    return sentences.map((text, i) => {
      const found = this.byText.get(normalize(text));
      if (!found) {
        throw new AnnotationMismatch(`no annotation for sentence: ${text!}`);
      }
      const words = found.tokens.map((t) => t.word.toLowerCase()).join(" ");
      if (words !== normalize(text)) {
        throw new AnnotationMismatch(
          `annotation tokens do not recompose the sentence: ${text}`,
        );
      }
      return { id: found.id ?? `s${i + 1}`, text, tokens: found.tokens };
    });
  }
}

function normalize(text: string): string {
  return text.trim().toLowerCase().replace(/\s+/g, " ");
}

export function makeBackend(kind: string, options: { annotations?: string; python?: string; model?: string }): ParserBackend {
  if (kind === "spacy") {
    return new SpacyBackend(options.python, options.model);
  }
  if (kind === "preparsed") {
    if (!options.annotations) {
      throw new Error("the preparsed backend needs --annotations");
    }
    return new PreparsedBackend(options.annotations);
  }
  throw new Error(`unknown parser backend ${kind}`);
}
