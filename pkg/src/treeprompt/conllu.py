"""Reading, validating, and writing dependency parses in CoNLL-U form.

Trees arrive as blank-line-separated sentence blocks of 10-column rows.
Multiword-token ranges and empty nodes are skipped, punctuation is removed
at ingest, and every tree is checked for single-rootedness and acyclicity
before anything downstream sees it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

__all__ = [
    "ConlluError",
    "MalformedRow",
    "CycleDetected",
    "MultipleRoots",
    "DanglingHead",
    "ModuleKind",
    "DepNode",
    "DepTree",
    "parse_conllu",
    "parse_conllu_file",
    "serialize_conllu",
    "route_module",
]


class ConlluError(ValueError):
    """Base class for parse failures; carries sentence id and line number."""

    def __init__(self, message: str, sentence_id: str = "?", line: int = 0):
        super().__init__(f"{message} (sentence {sentence_id}, line {line})")
        self.sentence_id = sentence_id
        self.line = line


class MalformedRow(ConlluError):
    pass


class CycleDetected(ConlluError):
    pass


class MultipleRoots(ConlluError):
    pass


class DanglingHead(ConlluError):
    pass


class ModuleKind(Enum):
    """Which modular network handles a node."""

    LEAF = "leaf"
    REL = "rel"
    ENTI = "enti"


@dataclass(frozen=True)
class DepNode:
    """One token of a validated dependency tree.

    ``index`` is the 1-based token position, ``head`` is the index of the
    head token (0 for the root), and ``children`` holds child indices in
    sentence order.
    """

    index: int
    word: str
    pos: str
    dep: str
    head: int
    children: tuple[int, ...] = ()


@dataclass(frozen=True)
class DepTree:
    """A validated single-root, acyclic dependency parse."""

    nodes: tuple[DepNode, ...]
    root: int
    sentence_id: str
    comments: tuple[str, ...] = ()

    def node(self, index: int) -> DepNode:
        return self.nodes[index - 1]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(n.word for n in self.nodes)

    def subtree_indices(self, index: int) -> frozenset[int]:
        """All node indices in the subtree rooted at ``index`` (inclusive)."""
        out = set()
        stack = [index]
        while stack:
            i = stack.pop()
            out.add(i)
            stack.extend(self.node(i).children)
        return frozenset(out)


def parse_conllu(text: str) -> list[DepTree]:
    """Parse a CoNLL-U document into validated trees.

    Comment lines are preserved on the tree (minus the sent_id line, which
    becomes ``sentence_id``); rows whose dependency label is ``punct`` are
    dropped and the tree revalidated.
    """
    trees = []
    block: list[tuple[int, str]] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.strip() == "":
            if block:
                trees.append(_parse_block(block, len(trees) + 1))
                block = []
        else:
            block.append((lineno, line))
    if block:
        trees.append(_parse_block(block, len(trees) + 1))
    return trees


def parse_conllu_file(path) -> list[DepTree]:
    with open(path, encoding="utf-8") as f:
        return parse_conllu(f.read())


def _parse_block(block: list[tuple[int, str]], ordinal: int) -> DepTree:
    comments: list[str] = []
    sentence_id = f"s{ordinal}"
    rows: list[tuple[int, int, str, str, str, int]] = []
    for lineno, line in block:
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("sent_id"):
                parts = body.split("=", 1)
                if len(parts) == 2:
                    sentence_id = parts[1].strip()
                    continue
            comments.append(line)
            continue
        fields = line.split("\t")
        if len(fields) != 10:
            raise MalformedRow(
                f"expected 10 tab-separated columns, got {len(fields)}",
                sentence_id,
                lineno,
            )
        tok_id = fields[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multiword-token range / empty node
        try:
            index = int(tok_id)
            head = int(fields[6])
        except ValueError as e:
            raise MalformedRow(f"non-integer ID or HEAD: {e}", sentence_id, lineno)
        rows.append((lineno, index, fields[1].lower(), fields[3], fields[7], head))

    if not rows:
        raise MalformedRow("sentence block has no token rows", sentence_id, block[0][0])

    expected = 1
    for lineno, index, *_ in rows:
        if index != expected:
            raise MalformedRow(
                f"token indices not consecutive (saw {index}, expected {expected})",
                sentence_id,
                lineno,
            )
        expected += 1

    tree = _build_tree(rows, sentence_id, tuple(comments))
    return _drop_punct(tree, rows)


def _build_tree(
    rows: list[tuple[int, int, str, str, str, int]],
    sentence_id: str,
    comments: tuple[str, ...],
) -> DepTree:
    n = len(rows)
    line_of = {index: lineno for lineno, index, *_ in rows}

    roots = [index for _, index, _, _, _, head in rows if head == 0]
    for lineno, index, _, _, _, head in rows:
        if head < 0 or head > n:
            raise DanglingHead(
                f"head {head} of token {index} out of range 1..{n}", sentence_id, lineno
            )
    if len(roots) > 1:
        raise MultipleRoots(
            f"tokens {roots} all claim head 0", sentence_id, line_of[roots[1]]
        )
    if not roots:
        raise CycleDetected("no root token, head graph must cycle", sentence_id, rows[0][0])

    head_of = {index: head for _, index, _, _, _, head in rows}
    state = {}  # 0 in progress, 1 done
    for _, start, *_ in rows:
        path = []
        i = start
        while i != 0 and state.get(i) != 1:
            if state.get(i) == 0:
                raise CycleDetected(
                    f"head chain of token {start} revisits token {i}",
                    sentence_id,
                    line_of[i],
                )
            state[i] = 0
            path.append(i)
            i = head_of[i]
        for j in path:
            state[j] = 1

    children: dict[int, list[int]] = {index: [] for _, index, *_ in rows}
    for _, index, _, _, _, head in rows:
        if head != 0:
            children[head].append(index)
    nodes = tuple(
        DepNode(index, word, pos, dep, head, tuple(sorted(children[index])))
        for _, index, word, pos, dep, head in rows
    )
    return DepTree(nodes, roots[0], sentence_id, comments)


def _drop_punct(tree: DepTree, rows) -> DepTree:
    """Remove punct tokens, re-attaching any children to the punct's head."""
    punct = {n.index for n in tree.nodes if _label_prefix(n.dep) == "punct"}
    if not punct:
        return tree
    if punct == set(n.index for n in tree.nodes):
        raise MalformedRow(
            "sentence consists only of punctuation", tree.sentence_id, rows[0][0]
        )

    def resolve(head: int) -> int:
        while head in punct:
            head = tree.node(head).head
        return head

    kept = [n for n in tree.nodes if n.index not in punct]
    remap = {n.index: new for new, n in enumerate(kept, start=1)}
    lines = []  # synthetic rows for revalidation, preserving original line numbers
    line_of = {index: lineno for lineno, index, *_ in rows}
    for n in kept:
        head = resolve(n.head)
        lines.append(
            (line_of[n.index], remap[n.index], n.word, n.pos, n.dep, remap.get(head, 0))
        )
    return _build_tree(lines, tree.sentence_id, tree.comments)


def serialize_conllu(tree: DepTree) -> str:
    """Write a tree back out as a CoNLL-U sentence block.

    Rows are emitted in token-index order regardless of internal node
    ordering, so ``parse_conllu(serialize_conllu(t))`` returns ``t``.
    """
    out = [f"# sent_id = {tree.sentence_id}"]
    out.extend(tree.comments)
    for node in sorted(tree.nodes, key=lambda n: n.index):
        out.append(
            "\t".join(
                [
                    str(node.index),
                    node.word,
                    "_",
                    node.pos,
                    "_",
                    "_",
                    str(node.head),
                    node.dep,
                    "_",
                    "_",
                ]
            )
        )
    return "\n".join(out) + "\n"


def route_module(node: DepNode) -> ModuleKind:
    """Assign a node to Leaf, Rel, or Enti.

    Structural position wins: any childless node is a Leaf even when its
    label would otherwise route to Rel, because the child-mean term is
    undefined for leaves. Labels match by prefix before ":" so subtypes
    like ``acl:relcl`` route with their base label.
    """
    if not node.children:
        return ModuleKind.LEAF
    if _label_prefix(node.dep) in ("acl", "prep"):
        return ModuleKind.REL
    return ModuleKind.ENTI


def _label_prefix(dep: str) -> str:
    return dep.split(":", 1)[0]
