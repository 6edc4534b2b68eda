import pathlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeprompt.conllu import (
    CycleDetected,
    DanglingHead,
    DepNode,
    DepTree,
    MalformedRow,
    ModuleKind,
    MultipleRoots,
    parse_conllu,
    parse_conllu_file,
    route_module,
    serialize_conllu,
)

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "fixtures"


def row(index, word, pos, dep, head):
    return "\t".join([str(index), word, "_", pos, "_", "_", str(head), dep, "_", "_"])


def doc(*rows, comments=()):
    return "\n".join(list(comments) + [row(*r) for r in rows]) + "\n"


class TestParse:
    def test_three_row_block(self):
        text = doc(
            (1, "a", "DET", "det", 2),
            (2, "woman", "NOUN", "root", 0),
            (3, "smiling", "VERB", "acl", 2),
        )
        (tree,) = parse_conllu(text)
        assert tree.root == 2
        assert tree.node(2).word == "woman"
        assert tree.node(2).children == (1, 3)
        assert tree.node(1).children == ()

    def test_self_loop_is_cycle(self):
        text = doc((1, "x", "NOUN", "root", 0), (2, "y", "NOUN", "dep", 2))
        with pytest.raises(CycleDetected):
            parse_conllu(text)

    def test_two_node_cycle(self):
        text = doc(
            (1, "x", "NOUN", "dep", 2),
            (2, "y", "NOUN", "dep", 1),
            (3, "z", "NOUN", "root", 0),
        )
        with pytest.raises(CycleDetected):
            parse_conllu(text)

    def test_no_root_raises(self):
        text = doc((1, "x", "NOUN", "dep", 2), (2, "y", "NOUN", "dep", 1))
        with pytest.raises(CycleDetected):
            parse_conllu(text)

    def test_multiple_roots(self):
        text = doc((1, "x", "NOUN", "root", 0), (2, "y", "NOUN", "root", 0))
        with pytest.raises(MultipleRoots) as e:
            parse_conllu(text)
        assert e.value.line == 2

    def test_dangling_head(self):
        text = doc((1, "x", "NOUN", "root", 0), (2, "y", "NOUN", "dep", 9))
        with pytest.raises(DanglingHead):
            parse_conllu(text)

    def test_malformed_row_names_line(self):
        text = "# sent_id = bad\n1\tonly\tthree\n"
        with pytest.raises(MalformedRow) as e:
            parse_conllu(text)
        assert e.value.sentence_id == "bad"
        assert e.value.line == 2

    def test_multiword_and_empty_nodes_skipped(self):
        lines = [
            "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_",
            row(1, "do", "AUX", "aux", 3),
            row(2, "not", "PART", "neg", 3),
            "2.1\tghost\t_\t_\t_\t_\t_\t_\t_\t_",
            row(3, "run", "VERB", "root", 0),
        ]
        (tree,) = parse_conllu("\n".join(lines) + "\n")
        assert len(tree) == 3
        assert tree.node(3).children == (1, 2)

    def test_words_lowercased(self):
        (tree,) = parse_conllu(doc((1, "Woman", "NOUN", "root", 0)))
        assert tree.node(1).word == "woman"

    def test_punct_dropped_and_reindexed(self):
        text = doc(
            (1, "the", "DET", "det", 3),
            (2, "red", "ADJ", "amod", 3),
            (3, "ball", "NOUN", "root", 0),
            (4, ".", "PUNCT", "punct", 3),
        )
        (tree,) = parse_conllu(text)
        assert len(tree) == 3
        assert tree.words == ("the", "red", "ball")
        assert tree.node(3).children == (1, 2)

    def test_internal_punct_children_reattached(self):
        # punct with a dependent: child re-attaches to the punct's head
        text = doc(
            (1, "ball", "NOUN", "root", 0),
            (2, "-", "PUNCT", "punct", 1),
            (3, "red", "ADJ", "amod", 2),
        )
        (tree,) = parse_conllu(text)
        assert tree.words == ("ball", "red")
        assert tree.node(1).children == (2,)
        assert tree.node(2).head == 1

    def test_comments_preserved(self):
        text = "# sent_id = c1\n# text = hi there\n" + doc(
            (1, "hi", "INTJ", "root", 0), (2, "there", "ADV", "advmod", 1)
        )
        (tree,) = parse_conllu(text)
        assert tree.sentence_id == "c1"
        assert tree.comments == ("# text = hi there",)
        assert "# text = hi there" in serialize_conllu(tree)


class TestSerialize:
    def test_single_node(self):
        tree = DepTree((DepNode(1, "dog", "NOUN", "root", 0),), 1, "one")
        out = serialize_conllu(tree)
        assert out.splitlines()[1] == row(1, "dog", "NOUN", "root", 0)
        (back,) = parse_conllu(out)
        assert back == tree

    def test_rows_in_token_index_order(self):
        nodes = (
            DepNode(2, "woman", "NOUN", "root", 0, (1,)),
            DepNode(1, "a", "DET", "det", 2),
        )
        tree = DepTree(nodes, 2, "perm")
        lines = serialize_conllu(tree).splitlines()
        assert lines[1].startswith("1\ta")
        assert lines[2].startswith("2\twoman")

    def test_roundtrip_on_fixture_trees(self):
        trees = parse_conllu_file(FIXTURES / "refg_sample.conllu")
        assert len(trees) == 20
        for tree in trees:
            assert parse_conllu(serialize_conllu(tree)) == [tree]


class TestFixtureRoundtrip:
    def test_byte_identity_modulo_nothing(self):
        raw = (FIXTURES / "refg_sample.conllu").read_text(encoding="utf-8")
        trees = parse_conllu(raw)
        rebuilt = "\n".join(serialize_conllu(t) for t in trees)
        assert rebuilt == raw

    def test_independent_line_level_reparse(self):
        # oracle: a plain line-level reader, no tree building
        raw = (FIXTURES / "refg_sample.conllu").read_text(encoding="utf-8")
        expected = []
        sent = []
        for line in raw.splitlines():
            if not line.strip():
                if sent:
                    expected.append(sent)
                    sent = []
            elif not line.startswith("#"):
                f = line.split("\t")
                sent.append((int(f[0]), f[1], f[3], f[7], int(f[6])))
        if sent:
            expected.append(sent)

        trees = parse_conllu(raw)
        got = [
            [(n.index, n.word, n.pos, n.dep, n.head) for n in t.nodes] for t in trees
        ]
        assert got == expected

    def test_punct_fixture_drops_trailing_period(self):
        trees = parse_conllu_file(FIXTURES / "punct_sample.conllu")
        assert trees[0].words == ("the", "red", "ball")


class TestRouting:
    def test_leaf_dobj(self):
        assert route_module(DepNode(5, "remote", "NOUN", "dobj", 3)) is ModuleKind.LEAF

    def test_internal_prep(self):
        node = DepNode(3, "with", "ADP", "prep", 2, children=(4,))
        assert route_module(node) is ModuleKind.REL

    def test_internal_nsubj(self):
        node = DepNode(2, "woman", "NOUN", "nsubj", 5, children=(1,))
        assert route_module(node) is ModuleKind.ENTI

    def test_leaf_beats_rel_label(self):
        assert route_module(DepNode(3, "of", "ADP", "prep", 2)) is ModuleKind.LEAF

    def test_subtype_prefix_match(self):
        node = DepNode(8, "open", "ADJ", "acl:relcl", 2, children=(6, 7))
        assert route_module(node) is ModuleKind.REL

    def test_every_fixture_node_routed(self):
        trees = parse_conllu_file(FIXTURES / "refg_sample.conllu")
        for tree in trees:
            kinds = [route_module(n) for n in tree.nodes]
            assert len(kinds) == len(tree)
            assert all(isinstance(k, ModuleKind) for k in kinds)


@st.composite
def random_trees(draw):
    n = draw(st.integers(min_value=1, max_value=12))
    # random parent pointers guaranteed acyclic: parent index < child index
    heads = [0] + [draw(st.integers(min_value=1, max_value=i)) for i in range(1, n)]
    words = [draw(st.sampled_from(["a", "red", "dog", "on", "mat", "big"])) for _ in range(n)]
    deps = ["root"] + [
        draw(st.sampled_from(["det", "amod", "prep", "pobj", "acl", "dobj", "nsubj"]))
        for _ in range(n - 1)
    ]
    children = {i: [] for i in range(1, n + 1)}
    for child, head in enumerate(heads, start=1):
        if head:
            children[head].append(child)
    nodes = tuple(
        DepNode(i, words[i - 1], "NOUN", deps[i - 1], heads[i - 1], tuple(children[i]))
        for i in range(1, n + 1)
    )
    return DepTree(nodes, 1, draw(st.sampled_from(["t1", "t2", "t3"])))


@settings(max_examples=60, deadline=None)
@given(random_trees())
def test_parse_serialize_identity(tree):
    assert parse_conllu(serialize_conllu(tree)) == [tree]


@settings(max_examples=60, deadline=None)
@given(random_trees())
def test_routing_total_and_leaf_consistent(tree):
    for node in tree.nodes:
        kind = route_module(node)
        if not node.children:
            assert kind is ModuleKind.LEAF
        else:
            assert kind in (ModuleKind.REL, ModuleKind.ENTI)
