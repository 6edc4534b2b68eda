"""AdamW with decoupled weight decay over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeMismatch, Tensor


class AdamWState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, lr=5e-5, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


class AdamW:
    def __init__(self, params: dict[str, Tensor], lr=5e-5, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=0.0):
        self.params = params
        self.state = AdamWState(lr, betas, eps, weight_decay)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self) -> None:
        adamw_step(self.state, self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def adamw_step(state: AdamWState, params: dict[str, Tensor],
               grads: dict[str, np.ndarray] | None = None) -> None:
    """One decoupled-weight-decay Adam update.

    Gradients default to each parameter's ``.grad``; parameters without a
    gradient this step are left untouched (moments included).
    """
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != param {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data -= (state.lr * update).astype(p.data.dtype, copy=False)
