"""Small transformer encoder standing in for a pretrained grounding model.

The backbone embeds query tokens through a shared word table plus a text
projection, embeds each region from symbolic one-hot features, runs a few
post-norm encoder layers, and scores every region by dot product with the
mean-pooled query representation. It is pretrained on attribute-only
queries, then frozen; prompts reach it only as extra input rows.

The shared word table is deliberately not a backbone parameter: it is
prompt-side state (the tree model reads and tunes the same tensor), so
the frozen checkpoint excludes it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward, cross_entropy_logits
from .checkpoint import load_checkpoint, save_checkpoint
from .injection import PromptBundle, PromptMode, inject_input_layer, layer_inject
from .optim import AdamW
from .tree_model import Vocab, _glorot
from .world import COLORS, GRID, SHAPES, SIZES, GroundingExample, SyntheticScene

FEATURE_DIM = len(SHAPES) + len(COLORS) + len(SIZES) + 2 * GRID


class ConvergenceFailure(RuntimeError):
    pass


@dataclass
class BackboneConfig:
    layers: int = 4
    d_model: int = 64
    heads: int = 4
    ffn: int = 256
    d_w: int = 32
    max_text_len: int = 24


def region_features(scene: SyntheticScene) -> np.ndarray:
    """Symbolic one-hot features per region: shape, color, size, row, col."""
    feats = np.zeros((len(scene.objects), FEATURE_DIM), dtype=np.float32)
    for i, o in enumerate(scene.objects):
        offset = 0
        feats[i, offset + SHAPES.index(o.shape)] = 1.0
        offset += len(SHAPES)
        feats[i, offset + COLORS.index(o.color)] = 1.0
        offset += len(COLORS)
        feats[i, offset + SIZES.index(o.size)] = 1.0
        offset += len(SIZES)
        feats[i, offset + o.cell[0]] = 1.0
        offset += GRID
        feats[i, offset + o.cell[1]] = 1.0
    return feats


class ToyBackbone:
    def __init__(self, config: BackboneConfig, vocab: Vocab,
                 rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.vocab = vocab
        c = config
        p: dict[str, Tensor] = {}

        def weight(name, fan_out, fan_in):
            p[name] = Tensor(_glorot(rng, fan_out, fan_in, dtype), True, name=name)

        def bias(name, n, value=0.0):
            p[name] = Tensor(np.full(n, value, dtype), True, name=name)

        weight("backbone.text_proj.w", c.d_model, c.d_w)
        bias("backbone.text_proj.b", c.d_model)
        p["backbone.text_pos"] = Tensor(
            rng.normal(0.0, 0.02, size=(c.max_text_len, c.d_model)).astype(dtype),
            True,
            name="backbone.text_pos",
        )
        weight("backbone.region_proj.w", c.d_model, FEATURE_DIM)
        bias("backbone.region_proj.b", c.d_model)
        for i in range(c.layers):
            prefix = f"backbone.layer{i}"
            for mat in ("wq", "wk", "wv", "wo"):
                weight(f"{prefix}.attn.{mat}", c.d_model, c.d_model)
                bias(f"{prefix}.attn.b{mat[1]}", c.d_model)
            bias(f"{prefix}.ln1.g", c.d_model, 1.0)
            bias(f"{prefix}.ln1.b", c.d_model)
            weight(f"{prefix}.ffn.w1", c.ffn, c.d_model)
            bias(f"{prefix}.ffn.b1", c.ffn)
            weight(f"{prefix}.ffn.w2", c.d_model, c.ffn)
            bias(f"{prefix}.ffn.b2", c.d_model)
            bias(f"{prefix}.ln2.g", c.d_model, 1.0)
            bias(f"{prefix}.ln2.b", c.d_model)
        self.params = p
        assert self.parameter_count() < 1_000_000

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def named_params(self) -> dict[str, Tensor]:
        return dict(self.params)

    def freeze(self) -> None:
        for t in self.params.values():
            t.requires_grad = False
            t.zero_grad()

    @property
    def frozen(self) -> bool:
        return all(not t.requires_grad for t in self.params.values())

    def save(self, path) -> dict:
        return save_checkpoint(path, self.params)

    def load(self, path) -> None:
        blob = load_checkpoint(path)
        for name, t in self.params.items():
            t.data = blob[name].astype(t.dtype, copy=True)

    # -- forward pieces ----------------------------------------------------

    def embed_text(self, word_table: Tensor, tokens: list[str]) -> Tensor:
        if len(tokens) > self.config.max_text_len:
            raise ValueError(f"query of {len(tokens)} tokens exceeds text window")
        rows = ad.stack_rows(
            [ad.row(word_table, self.vocab.word_id(w)) for w in tokens]
        )
        projected = ad.add(
            ad.matmul(rows, ad.transpose(self.params["backbone.text_proj.w"])),
            self.params["backbone.text_proj.b"],
        )
        return ad.add(
            projected, ad.slice_rows(self.params["backbone.text_pos"], 0, len(tokens))
        )

    def embed_regions(self, scene: SyntheticScene) -> Tensor:
        feats = Tensor(region_features(scene))
        return ad.add(
            ad.matmul(feats, ad.transpose(self.params["backbone.region_proj.w"])),
            self.params["backbone.region_proj.b"],
        )

    def _mha(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        q = ad.add(ad.matmul(x, ad.transpose(p[f"{prefix}.attn.wq"])), p[f"{prefix}.attn.bq"])
        k = ad.add(ad.matmul(x, ad.transpose(p[f"{prefix}.attn.wk"])), p[f"{prefix}.attn.bk"])
        v = ad.add(ad.matmul(x, ad.transpose(p[f"{prefix}.attn.wv"])), p[f"{prefix}.attn.bv"])
        heads = self.config.heads
        dh = self.config.d_model // heads
        parts = [
            ad.attention(
                ad.slice_cols(q, h * dh, (h + 1) * dh),
                ad.slice_cols(k, h * dh, (h + 1) * dh),
                ad.slice_cols(v, h * dh, (h + 1) * dh),
            )
            for h in range(heads)
        ]
        merged = parts[0] if heads == 1 else ad.concat(parts, axis=1)
        return ad.add(ad.matmul(merged, ad.transpose(p[f"{prefix}.attn.wo"])), p[f"{prefix}.attn.bo"])

    def layer_forward(self, i: int, x: Tensor) -> Tensor:
        p = self.params
        prefix = f"backbone.layer{i}"
        x = ad.layer_norm(
            ad.add(x, self._mha(prefix, x)), p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"]
        )
        hidden = ad.relu(
            ad.add(ad.matmul(x, ad.transpose(p[f"{prefix}.ffn.w1"])), p[f"{prefix}.ffn.b1"])
        )
        ffn_out = ad.add(
            ad.matmul(hidden, ad.transpose(p[f"{prefix}.ffn.w2"])), p[f"{prefix}.ffn.b2"]
        )
        return ad.layer_norm(ad.add(x, ffn_out), p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])

    def forward_scores(self, word_table: Tensor, example: GroundingExample,
                       bundle: PromptBundle | None = None) -> Tensor:
        """One score per region; prediction is the argmax (ties: lowest index)."""
        text = self.embed_text(word_table, example.tokens)
        regions = self.embed_regions(example.scene)
        m = len(example.tokens)
        k = len(example.scene.objects)

        if bundle is not None and bundle.mode is PromptMode.MULTI:
            t_state, r_state = text, regions
            for i in range(self.config.layers):
                t_state, r_state = layer_inject(
                    bundle.p_stack, i + 1, t_state, r_state,
                    lambda x, i=i: self.layer_forward(i, x),
                )
            text_out, region_out = t_state, r_state
        else:
            if bundle is not None:
                x = ad.concat([inject_input_layer(bundle.p, text), regions], axis=0)
                n = bundle.p.shape[0]
            else:
                x = ad.concat([text, regions], axis=0)
                n = 0
            for i in range(self.config.layers):
                x = self.layer_forward(i, x)
            text_out = ad.slice_rows(x, n, n + m)
            region_out = ad.slice_rows(x, n + m, n + m + k)

        pooled = ad.mean(text_out, axis=0)
        return ad.mul(ad.matmul(region_out, pooled), 1.0 / np.sqrt(self.config.d_model))


def score_regions(backbone: ToyBackbone, word_table: Tensor, example: GroundingExample,
                  bundle: PromptBundle | None = None):
    """Frozen-backbone inference: (scores, predicted index, predicted box)."""
    scores = backbone.forward_scores(word_table, example, bundle).data
    pred = int(np.argmax(scores))
    return scores, pred, example.scene.objects[pred].box


def make_word_table(vocab: Vocab, d_w: int, rng: np.random.Generator) -> Tensor:
    return Tensor(
        rng.normal(0.0, 0.02, size=(len(vocab.word2id), d_w)).astype(np.float32),
        requires_grad=True,
        name="tables.word",
    )


def pretrain_backbone(backbone: ToyBackbone, word_table: Tensor,
                      examples: list[GroundingExample], seed: int = 0,
                      batch_size: int = 32, lr: float = 1e-3,
                      max_epochs: int = 15, target_acc: float = 0.95,
                      min_acc: float = 0.80, log=None):
    """Train the backbone plus the shared word table on simple queries.

    The last tenth of ``examples`` is held out for validation; training
    stops once held-out accuracy reaches ``target_acc``. Below ``min_acc``
    after the epoch budget it raises ConvergenceFailure.
    """
    n_val = max(1, len(examples) // 10)
    train, val = examples[:-n_val], examples[-n_val:]
    params = {**backbone.named_params(), word_table.name: word_table}
    opt = AdamW(params, lr=lr)
    history = []
    start = time.time()
    for epoch in range(max_epochs):
        order = np.random.default_rng((seed, epoch)).permutation(len(train))
        for b0 in range(0, len(order), batch_size):
            batch = [train[i] for i in order[b0 : b0 + batch_size]]
            opt.zero_grad()
            for ex in batch:
                with Tape() as tape:
                    scores = backbone.forward_scores(word_table, ex)
                    loss = cross_entropy_logits(scores, ex.gold_region)
                    backward(tape, loss)
            for p in params.values():
                if p.grad is not None:
                    p.grad /= len(batch)
            opt.step()
        acc = top1_accuracy(backbone, word_table, val)
        history.append(acc)
        if log:
            log(f"pretrain epoch {epoch}: held-out simple accuracy {acc:.3f}")
        if acc >= target_acc:
            break
    final = history[-1]
    if final < min_acc:
        raise ConvergenceFailure(
            f"held-out accuracy {final:.3f} < {min_acc} after {max_epochs} epochs"
        )
    return {
        "val_accuracy": final,
        "epochs": len(history),
        "history": history,
        "seconds": time.time() - start,
    }


def top1_accuracy(backbone: ToyBackbone, word_table: Tensor,
                  examples: list[GroundingExample],
                  bundle_fn=None) -> float:
    """Share of examples whose predicted region overlaps gold with IoU > 0.5."""
    from .world import iou

    hits = 0
    for ex in examples:
        bundle = bundle_fn(ex) if bundle_fn else None
        _, _, box = score_regions(backbone, word_table, ex, bundle)
        if iou(box, ex.gold_box) > 0.5:
            hits += 1
    return hits / len(examples)
