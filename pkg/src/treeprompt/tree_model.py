"""Bottom-up prompt composition along dependency trees.

Each node embeds as word/POS/dep-label rows concatenated, is routed to one
of three identically shaped modular networks, and receives an intermediate
prompt computed from its own representation plus the mean of its
children's prompts. Node prompts are arranged root-first (pre-order, with
children visited in sentence order), given a learnable position embedding,
and fused with a learnable global prompt through attention.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor
from .conllu import DepNode, DepTree, ModuleKind, route_module

UNK = "<unk>"


class SentenceTooLong(ValueError):
    pass


class LeafWithChildren(ValueError):
    pass


class NonLeafWithoutChildren(ValueError):
    pass


@dataclass
class Vocab:
    """Dense id maps for words, POS tags, and dependency labels.

    Id 0 is always ``<unk>``; entries below the frequency threshold in the
    training data fall back to it.
    """

    word2id: dict[str, int] = field(default_factory=lambda: {UNK: 0})
    pos2id: dict[str, int] = field(default_factory=lambda: {UNK: 0})
    dep2id: dict[str, int] = field(default_factory=lambda: {UNK: 0})

    @classmethod
    def build(cls, trees: list[DepTree], min_freq: int = 2) -> "Vocab":
        words, poses, deps = Counter(), Counter(), Counter()
        for tree in trees:
            for node in tree.nodes:
                words[node.word] += 1
                poses[node.pos] += 1
                deps[node.dep] += 1
        vocab = cls()
        for counter, table in ((words, vocab.word2id), (poses, vocab.pos2id), (deps, vocab.dep2id)):
            for token in sorted(counter):
                if counter[token] >= min_freq:
                    table[token] = len(table)
        return vocab

    def word_id(self, w: str) -> int:
        return self.word2id.get(w, 0)

    def pos_id(self, p: str) -> int:
        return self.pos2id.get(p, 0)

    def dep_id(self, d: str) -> int:
        return self.dep2id.get(d, 0)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(
                {"word": self.word2id, "pos": self.pos2id, "dep": self.dep2id},
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path) -> "Vocab":
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(blob["word"], blob["pos"], blob["dep"])


class EmbeddingTables:
    """Word/POS/dep embedding tables; rows are Gaussian(0, 0.02) unless a
    pretrained word table is loaded over them."""

    def __init__(self, vocab: Vocab, d_w: int, d_l: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.vocab = vocab
        self.d_w = d_w
        self.d_l = d_l

        def table(n, d, name):
            return Tensor(
                rng.normal(0.0, 0.02, size=(n, d)).astype(dtype),
                requires_grad=True,
                name=name,
            )

        self.word = table(len(vocab.word2id), d_w, "tables.word")
        self.pos = table(len(vocab.pos2id), d_l, "tables.pos")
        self.dep = table(len(vocab.dep2id), d_l, "tables.dep")

    @property
    def d_n(self) -> int:
        return self.d_w + 2 * self.d_l

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.word, self.pos, self.dep)}

    def load_word_table(self, rows: np.ndarray) -> None:
        """Overwrite word rows with a pretrained table (e.g. a GloVe subset)."""
        if rows.shape != self.word.shape:
            raise ShapeMismatch(
                f"word table {rows.shape} does not match vocab/d_w {self.word.shape}"
            )
        self.word.data = rows.astype(self.word.dtype, copy=True)


def _glorot(rng, fan_out, fan_in, dtype):
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_out, fan_in)).astype(dtype)


class ModuleParams:
    """Parameter sets for the Leaf/Rel/Enti networks.

    All three share one architecture (FC d_n -> d_p, then a 2-layer MLP
    2*d_p -> d_p -> d_p); with ``shared=True`` a single parameter set
    serves every node, which is the modules-off ablation.
    """

    def __init__(self, d_n: int, d_p: int, rng: np.random.Generator,
                 shared: bool = False, dtype=np.float32):
        self.d_n = d_n
        self.d_p = d_p
        self.shared = shared
        kinds = ["shared"] if shared else [k.value for k in ModuleKind]
        self._sets: dict[str, dict[str, Tensor]] = {}
        for kind in kinds:
            prefix = f"modules.{kind}"
            self._sets[kind] = {
                "fc_w": Tensor(_glorot(rng, d_p, d_n, dtype), True, name=f"{prefix}.fc_w"),
                "fc_b": Tensor(np.zeros(d_p, dtype), True, name=f"{prefix}.fc_b"),
                "mlp_w1": Tensor(_glorot(rng, d_p, 2 * d_p, dtype), True, name=f"{prefix}.mlp_w1"),
                "mlp_b1": Tensor(np.zeros(d_p, dtype), True, name=f"{prefix}.mlp_b1"),
                "mlp_w2": Tensor(_glorot(rng, d_p, d_p, dtype), True, name=f"{prefix}.mlp_w2"),
                "mlp_b2": Tensor(np.zeros(d_p, dtype), True, name=f"{prefix}.mlp_b2"),
            }

    def set_for(self, kind: ModuleKind) -> dict[str, Tensor]:
        return self._sets["shared" if self.shared else kind.value]

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for s in self._sets.values() for t in s.values()}


@dataclass
class NodePrompt:
    """Intermediate prompt of one tree node plus its provenance."""

    index: int
    kind: ModuleKind
    r: Tensor
    h: Tensor
    children: tuple[int, ...]


class FusionAttention:
    """Learnable attention that merges tree prompts into the global prompt.

    The default reading runs self-attention over the concatenated
    [tree; global] rows and keeps the outputs at global-prompt positions;
    ``mode="query_global"`` instead queries with the global rows only.
    """

    def __init__(self, d_p: int, rng: np.random.Generator, heads: int = 1,
                 mode: str = "self", dtype=np.float32):
        if d_p % heads:
            raise ShapeMismatch(f"d_p {d_p} not divisible by heads {heads}")
        if mode not in ("self", "query_global"):
            raise ValueError(f"unknown fusion mode {mode!r}")
        self.heads = heads
        self.mode = mode
        self.wq = Tensor(_glorot(rng, d_p, d_p, dtype), True, name="fusion.wq")
        self.wk = Tensor(_glorot(rng, d_p, d_p, dtype), True, name="fusion.wk")
        self.wv = Tensor(_glorot(rng, d_p, d_p, dtype), True, name="fusion.wv")

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.wq, self.wk, self.wv)}


def embed_node(node: DepNode, tables: EmbeddingTables) -> Tensor:
    """Concatenate the node's word, POS, and dep-label embedding rows."""
    v = tables.vocab
    return ad.concat(
        [
            ad.row(tables.word, v.word_id(node.word)),
            ad.row(tables.pos, v.pos_id(node.pos)),
            ad.row(tables.dep, v.dep_id(node.dep)),
        ]
    )


def node_representation(n_i: Tensor, kind: ModuleKind, modules: ModuleParams) -> Tensor:
    """L2-normalize the node embedding and project it with the routed
    module's FC layer."""
    s = modules.set_for(kind)
    return ad.linear(ad.l2norm(n_i), s["fc_w"], s["fc_b"])


def compose_node_prompt(r_i: Tensor, child_prompts: list[Tensor], kind: ModuleKind,
                        modules: ModuleParams) -> Tensor:
    """Mean the child prompts (zero vector for leaves), concatenate with
    the node representation, and map through the module's 2-layer MLP."""
    if kind is ModuleKind.LEAF and child_prompts:
        raise LeafWithChildren(f"Leaf module got {len(child_prompts)} child prompts")
    if kind is not ModuleKind.LEAF and not child_prompts:
        raise NonLeafWithoutChildren(f"{kind.value} module requires child prompts")
    if child_prompts:
        stacked = ad.stack_rows(child_prompts)
        child_mean = ad.mean(stacked, axis=0)
    else:
        child_mean = Tensor(np.zeros(modules.d_p, dtype=r_i.dtype))
    s = modules.set_for(kind)
    f_i = ad.concat([child_mean, r_i])
    return ad.mlp2(f_i, s["mlp_w1"], s["mlp_b1"], s["mlp_w2"], s["mlp_b2"])


def compose_tree(tree: DepTree, tables: EmbeddingTables,
                 modules: ModuleParams) -> list[NodePrompt]:
    """Post-order evaluation of every node prompt, children before heads."""
    done: dict[int, NodePrompt] = {}
    stack: list[tuple[int, bool]] = [(tree.root, False)]
    while stack:
        idx, ready = stack.pop()
        if not ready:
            stack.append((idx, True))
            for child in reversed(tree.node(idx).children):
                stack.append((child, False))
            continue
        node = tree.node(idx)
        kind = route_module(node)
        r_i = node_representation(embed_node(node, tables), kind, modules)
        h_i = compose_node_prompt(
            r_i, [done[c].h for c in node.children], kind, modules
        )
        done[idx] = NodePrompt(idx, kind, r_i, h_i, node.children)
    return [done[n.index] for n in tree.nodes]


def per_token_prompts(tree: DepTree, tables: EmbeddingTables,
                      modules: ModuleParams) -> list[NodePrompt]:
    """Tree-off ablation: module prompts per token with no child
    aggregation (the child-mean term is always zero)."""
    out = []
    for node in tree.nodes:
        kind = route_module(node)
        r_i = node_representation(embed_node(node, tables), kind, modules)
        s = modules.set_for(kind)
        f_i = ad.concat([Tensor(np.zeros(modules.d_p, dtype=r_i.dtype)), r_i])
        h_i = ad.mlp2(f_i, s["mlp_w1"], s["mlp_b1"], s["mlp_w2"], s["mlp_b2"])
        out.append(NodePrompt(node.index, kind, r_i, h_i, node.children))
    return out


def pre_order_indices(tree: DepTree) -> list[int]:
    """Root first, then each subtree with children in sentence order."""
    order = []
    stack = [tree.root]
    while stack:
        idx = stack.pop()
        order.append(idx)
        stack.extend(reversed(tree.node(idx).children))
    return order


def order_prompts(prompts: list[NodePrompt], tree: DepTree,
                  pos_embedding: Tensor, sentence_order: bool = False) -> Tensor:
    """Stack node prompts into H (M x d_p) and add the position rows.

    Rows follow pre-order by default, so H[0] is always the root's prompt;
    ``sentence_order`` is the tree-off arrangement.
    """
    m = len(prompts)
    if m > pos_embedding.shape[0]:
        raise SentenceTooLong(
            f"{m} nodes exceeds the position table ({pos_embedding.shape[0]} rows)"
        )
    by_index = {p.index: p for p in prompts}
    order = [n.index for n in tree.nodes] if sentence_order else pre_order_indices(tree)
    rows = [by_index[i].h for i in order]
    return ad.add(ad.stack_rows(rows), ad.slice_rows(pos_embedding, 0, m))


def fuse_with_global(h_mat: Tensor, g: Tensor, fusion: FusionAttention) -> Tensor:
    """Attend over [H; G] and keep the rows at global-prompt positions."""
    if h_mat.shape[0] == 0:
        raise ShapeMismatch("fusion requires at least one tree-prompt row")
    if h_mat.shape[1] != g.shape[1]:
        raise ShapeMismatch(f"H {h_mat.shape} and G {g.shape} widths differ")
    x = ad.concat([h_mat, g], axis=0)
    queries = g if fusion.mode == "query_global" else x
    q = ad.matmul(queries, ad.transpose(fusion.wq))
    k = ad.matmul(x, ad.transpose(fusion.wk))
    v = ad.matmul(x, ad.transpose(fusion.wv))
    if fusion.heads == 1:
        fused = ad.attention(q, k, v)
    else:
        dh = q.shape[1] // fusion.heads
        parts = [
            ad.attention(
                ad.slice_cols(q, i * dh, (i + 1) * dh),
                ad.slice_cols(k, i * dh, (i + 1) * dh),
                ad.slice_cols(v, i * dh, (i + 1) * dh),
            )
            for i in range(fusion.heads)
        ]
        fused = ad.concat(parts, axis=1)
    if fusion.mode == "query_global":
        return fused
    m = h_mat.shape[0]
    return ad.slice_rows(fused, m, m + g.shape[0])


@dataclass
class TreePromptConfig:
    d_w: int = 32
    d_l: int = 8
    d_p: int = 64
    prompt_len: int = 64
    m_max: int = 32
    fusion_heads: int = 1
    fusion_mode: str = "self"
    tree_enabled: bool = True
    modules_enabled: bool = True


class TreePromptModel:
    """Everything on the prompt side of the pipeline, ablations included.

    With both mechanisms disabled the model degenerates to the plain
    continuous prompt: forward returns the global prompt itself and the
    only parameter is G.
    """

    def __init__(self, vocab: Vocab, config: TreePromptConfig,
                 rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.vocab = vocab
        c = config
        self.g = Tensor(
            rng.normal(0.0, 0.02, size=(c.prompt_len, c.d_p)).astype(dtype),
            requires_grad=True,
            name="global_prompt",
        )
        self.tables = EmbeddingTables(vocab, c.d_w, c.d_l, rng, dtype)
        self.modules = ModuleParams(
            self.tables.d_n, c.d_p, rng, shared=not c.modules_enabled, dtype=dtype
        )
        self.pos_embedding = Tensor(
            rng.normal(0.0, 0.02, size=(c.m_max, c.d_p)).astype(dtype),
            requires_grad=True,
            name="tree_pos",
        )
        self.fusion = FusionAttention(c.d_p, rng, c.fusion_heads, c.fusion_mode, dtype)

    @property
    def continuous_only(self) -> bool:
        return not self.config.tree_enabled and not self.config.modules_enabled

    def node_prompts(self, tree: DepTree) -> list[NodePrompt]:
        if self.config.tree_enabled:
            return compose_tree(tree, self.tables, self.modules)
        return per_token_prompts(tree, self.tables, self.modules)

    def forward(self, tree: DepTree | None) -> Tensor:
        """Produce the fused prompt P (prompt_len x d_p) for one sentence."""
        if self.continuous_only:
            return self.g
        if tree is None:
            raise ValueError("tree-based configurations need a parse tree")
        prompts = self.node_prompts(tree)
        h_mat = order_prompts(
            prompts, tree, self.pos_embedding,
            sentence_order=not self.config.tree_enabled,
        )
        return fuse_with_global(h_mat, self.g, self.fusion)

    def parameters(self) -> dict[str, Tensor]:
        if self.continuous_only:
            return {self.g.name: self.g}
        out = {self.g.name: self.g, self.pos_embedding.name: self.pos_embedding}
        out.update(self.tables.parameters())
        out.update(self.modules.parameters())
        out.update(self.fusion.parameters())
        return out
