/**
 * CoNLL-U assembly and validation for parsed sentences.
 *
 * Punctuation tokens (dep label "punct") are removed after parsing, with
 * any dependents re-attached to the punctuation token's head, and the
 * sentence is re-indexed so the emitted blocks are dense 1..n trees.
 */

export interface ParsedToken {
  /** surface form; emitted lowercased */
  word: string;
  /** universal POS tag */
  pos: string;
  /** dependency relation label, subtypes kept verbatim (e.g. acl:relcl) */
  dep: string;
  /** 1-based head index, 0 for the root */
  head: number;
}

export interface ParsedSentence {
  id: string;
  text: string;
  tokens: ParsedToken[];
}

export class TreeValidationError extends Error {
  constructor(sentenceId: string, message: string) {
    super(`sentence ${sentenceId}: ${message}`);
    this.name = "TreeValidationError";
  }
}

function labelPrefix(dep: string): string {
  const colon = dep.indexOf(":");
  return colon === -1 ? dep : dep.slice(0, colon);
}

/** Throws unless the tokens form a single-rooted acyclic head graph. */
export function validateTree(sentence: ParsedSentence): void {
  const n = sentence.tokens.length;
  if (n === 0) {
    throw new TreeValidationError(sentence.id, "no tokens");
  }
  const roots = sentence.tokens.filter((t) => t.head === 0).length;
  if (roots !== 1) {
    throw new TreeValidationError(sentence.id, `${roots} root tokens, expected 1`);
  }
  sentence.tokens.forEach((t, i) => {
    if (t.head < 0 || t.head > n) {
      throw new TreeValidationError(
        sentence.id,
        `token ${i + 1} head ${t.head} outside 0..${n}`,
      );
    }
  });
  // chase head chains; every token must reach the root without repeating
  for (let start = 1; start <= n; start++) {
    const seen = new Set<number>();
    let i = start;
    while (i !== 0) {
      if (seen.has(i)) {
        throw new TreeValidationError(sentence.id, `head cycle through token ${i}`);
      }
      seen.add(i);
      i = sentence.tokens[i - 1].head;
    }
  }
}

/** Drops punct tokens, re-attaching their dependents to the punct's head. */
export function removePunctuation(sentence: ParsedSentence): ParsedSentence {
  const punct = new Set<number>();
  sentence.tokens.forEach((t, i) => {
    if (labelPrefix(t.dep) === "punct") {
      punct.add(i + 1);
    }
  });
  if (punct.size === 0) {
    return sentence;
  }
  if (punct.size === sentence.tokens.length) {
    throw new TreeValidationError(sentence.id, "sentence is punctuation only");
  }
  const resolve = (head: number): number => {
    while (punct.has(head)) {
      head = sentence.tokens[head - 1].head;
    }
    return head;
  };
  const remap = new Map<number, number>();
  let next = 1;
  sentence.tokens.forEach((_, i) => {
    if (!punct.has(i + 1)) {
      remap.set(i + 1, next++);
    }
  });
  const tokens = sentence.tokens
    .map((token, i) => ({ token, index: i + 1 }))
    .filter(({ index }) => !punct.has(index))
    .map(({ token }) => {
      const resolved = token.head === 0 ? 0 : resolve(token.head);
      return { ...token, head: resolved === 0 ? 0 : remap.get(resolved)! };
    });
  const out = { ...sentence, tokens };
  validateTree(out);
  return out;
}

/** One CoNLL-U sentence block with sent_id and text comments. */
export function toConlluBlock(sentence: ParsedSentence): string {
  const lines = [`# sent_id = ${sentence.id}`, `# text = ${sentence.text}`];
  sentence.tokens.forEach((t, i) => {
    lines.push(
      [
        String(i + 1),
        t.word.toLowerCase(),
        "_",
        t.pos,
        "_",
        "_",
        String(t.head),
        t.dep,
        "_",
        "_",
      ].join("\t"),
    );
  });
  return lines.join("\n") + "\n";
}

export function toConlluDocument(sentences: ParsedSentence[]): string {
  return sentences.map(toConlluBlock).join("\n");
}
