"""Delivery of fused prompts into the backbone.

Two modes exist and are mutually exclusive per run: prepending the prompt
matrix once to the text embeddings, or expanding it to one prompt block
per encoder layer and adding that to a frozen pretuned multi-layer
prompt. In the per-layer mode, each layer's outputs at prompt positions
are discarded and the next layer receives its own fresh prompt rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor


class DimMismatch(ValueError):
    pass


class LayerIndexOutOfRange(IndexError):
    pass


class PromptMode(str, Enum):
    INPUT = "input"
    MULTI = "multi"


@dataclass
class PromptBundle:
    """Exactly one payload is populated, matching the mode."""

    mode: PromptMode
    p: Tensor | None = None        # (N, d_p) for input-layer runs
    p_stack: Tensor | None = None  # (L, N, d_p) for multi-layer runs

    def __post_init__(self):
        if self.mode is PromptMode.INPUT and (self.p is None or self.p_stack is not None):
            raise ValueError("input mode carries P only")
        if self.mode is PromptMode.MULTI and (self.p_stack is None or self.p is not None):
            raise ValueError("multi mode carries the layer stack only")


def inject_input_layer(p: Tensor, text_emb: Tensor) -> Tensor:
    """Prepend prompt rows to the text embedding rows."""
    if p.shape[0] == 0:
        return text_emb
    if p.shape[1] != text_emb.shape[1]:
        raise DimMismatch(
            f"prompt width {p.shape[1]} != text embedding width {text_emb.shape[1]}"
        )
    return ad.concat([p, text_emb], axis=0)


class ExpansionMLP:
    """Row-shared 2-layer map from one prompt row to its L per-layer rows."""

    def __init__(self, d_p: int, layers: int, rng: np.random.Generator, dtype=np.float32):
        def glorot(fan_out, fan_in):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            return rng.normal(0.0, scale, size=(fan_out, fan_in)).astype(dtype)

        self.d_p = d_p
        self.layers = layers
        self.w1 = Tensor(glorot(d_p, d_p), True, name="expand.w1")
        self.b1 = Tensor(np.zeros(d_p, dtype), True, name="expand.b1")
        self.w2 = Tensor(glorot(layers * d_p, d_p), True, name="expand.w2")
        self.b2 = Tensor(np.zeros(layers * d_p, dtype), True, name="expand.b2")

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.w1, self.b1, self.w2, self.b2)}


def expand_multi_layer(p: Tensor, mlp: ExpansionMLP) -> Tensor:
    """Map P (N x d_p) to the per-layer stack (L x N x d_p)."""
    if p.shape[1] != mlp.d_p:
        raise ShapeMismatch(f"prompt width {p.shape[1]} != expansion d_p {mlp.d_p}")
    hidden = ad.relu(ad.add(ad.matmul(p, ad.transpose(mlp.w1)), mlp.b1))
    flat = ad.add(ad.matmul(hidden, ad.transpose(mlp.w2)), mlp.b2)  # (N, L*d_p)
    n = p.shape[0]
    return ad.permute(ad.reshape(flat, (n, mlp.layers, mlp.d_p)), (1, 0, 2))


def add_to_global(p_stack: Tensor, global_stack: Tensor) -> Tensor:
    """Elementwise sum with the frozen pretuned multi-layer prompt."""
    if p_stack.shape != global_stack.shape:
        raise ShapeMismatch(
            f"stack {p_stack.shape} does not match global stack {global_stack.shape}"
        )
    if global_stack.requires_grad:
        raise ValueError("the global multi-layer prompt must be frozen")
    return ad.add(p_stack, global_stack)


def layer_inject(prompt_stack: Tensor, layer_index: int, text_state: Tensor,
                 visual_state: Tensor, layer_fn):
    """Run one encoder layer on [P_i; T_i; I_i] and return the next states.

    ``layer_index`` is 1-based. The layer's outputs at prompt positions are
    sliced away unread; the caller supplies fresh prompt rows for the next
    layer.
    """
    layers = prompt_stack.shape[0]
    if not 1 <= layer_index <= layers:
        raise LayerIndexOutOfRange(f"layer {layer_index} outside 1..{layers}")
    p_i = ad.index_axis0(prompt_stack, layer_index - 1)
    x = ad.concat([p_i, text_state, visual_state], axis=0)
    y = layer_fn(x)
    if y.shape != x.shape:
        raise ShapeMismatch(f"layer changed sequence shape {x.shape} -> {y.shape}")
    n = p_i.shape[0]
    m = text_state.shape[0]
    k = visual_state.shape[0]
    return ad.slice_rows(y, n, n + m), ad.slice_rows(y, n + m, n + m + k)
