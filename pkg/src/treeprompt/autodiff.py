"""Dense tensors with reverse-mode automatic differentiation.

A thread-local tape records every op whose output needs gradients; ops run
as plain numpy when no tape is active, which keeps finite-difference
sweeps cheap. Training runs in float32; gradient checks build float64
tensors. Reductions are plain sequential numpy reductions, so results are
bitwise reproducible for identical inputs.
"""

from __future__ import annotations

import math
import threading
import warnings

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeMismatch(ValueError):
    pass


class DisconnectedParameter(UserWarning):
    """A parameter was not reachable from the loss; its gradient is zero."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            raise TypeError("wrapping a Tensor in a Tensor")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed ops; reverse iteration is backprop order."""

    def __init__(self):
        self.entries = []  # (output, inputs, backward_fn)
        self.produced = set()  # id() of every tensor created on this tape

    def __enter__(self):
        _STACK.stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _STACK.stack.pop()
        assert popped is self
        return False

    def record(self, out: Tensor, inputs: tuple, backward_fn) -> None:
        self.entries.append((out, inputs, backward_fn))
        self.produced.add(id(out))

    def __len__(self):
        return len(self.entries)


class _TapeStack(threading.local):
    def __init__(self):
        self.stack = []


_STACK = _TapeStack()


def active_tape() -> Tape | None:
    return _STACK.stack[-1] if _STACK.stack else None


def _lift(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _tracked(t: Tensor, tape: Tape | None) -> bool:
    return t.requires_grad or (tape is not None and id(t) in tape.produced)


def _make(out_data, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = active_tape()
    out = Tensor(out_data)
    if tape is not None and any(_tracked(t, tape) for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a.dtype)
    out = a.data + b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b) -> Tensor:
    b = _lift(b, a.dtype)
    out = a.data - b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    b = _lift(b, a.dtype)
    out = a.data * b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a: Tensor, b) -> Tensor:
    b = _lift(b, a.dtype)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad  # 1-D @ 1-D -> scalar

    return _make(out, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    # the tiny floor keeps the zero-input corner finite
    return _make(out, (a,), lambda g: (g / np.maximum(2.0 * out, 1e-30),))


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward)


def stack_rows(vectors: list[Tensor]) -> Tensor:
    out = np.stack([v.data for v in vectors], axis=0)

    def backward(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _make(out, tuple(vectors), backward)


def row(a: Tensor, index: int) -> Tensor:
    """Single-row lookup (embedding read); backward scatter-adds."""

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(a.data[index].copy(), (a,), backward)


def index(a: Tensor, i: int) -> Tensor:
    """Pick element ``i`` of a vector as a scalar tensor."""

    def backward(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _make(a.data[i].copy(), (a,), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _make(a.data[start:stop].copy(), (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop].copy(), (a,), backward)


def index_axis0(a: Tensor, i: int) -> Tensor:
    """Select slab ``a[i]`` of a 3-D tensor."""

    def backward(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _make(a.data[i].copy(), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    return _make(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),)
    )


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# composites


def softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis."""
    shift = x.data.max(axis=-1, keepdims=True)  # constant offset, no gradient
    e = exp(sub(x, Tensor(shift)))
    return div(e, tensor_sum(e, axis=-1, keepdims=True))


def l2norm(x: Tensor, eps: float = 1e-12) -> Tensor:
    """x / (||x||_2 + eps); the eps keeps the zero vector safe."""
    norm = sqrt(tensor_sum(mul(x, x)))
    return div(x, add(norm, eps))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer w @ x + b for a vector input."""
    if w.data.ndim != 2 or x.data.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"linear: W {w.shape} incompatible with x {x.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatch(f"linear: bias {b.shape} incompatible with W {w.shape}")
    return add(matmul(w, x), b)


def mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer perceptron with ReLU hidden activation."""
    return linear(relu(linear(x, w1, b1)), w2, b2)


def attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """Single-head scaled dot-product attention.

    q is (n_q, d), k and v are (n_k, d); softmax runs row-wise over the
    scaled score matrix with max-subtraction for stability.
    """
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeMismatch("attention expects 2-D q, k, v")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeMismatch(
            f"attention shapes disagree: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    weights = softmax_rows(scores)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learnable scale and shift."""
    mu = mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    return add(mul(div(centered, sqrt(add(var, eps))), gamma), beta)


def cross_entropy_logits(scores: Tensor, gold: int) -> Tensor:
    """Negative log-softmax probability of ``gold`` for a score vector."""
    shift = float(scores.data.max())
    z = sub(scores, shift)
    lse = log(tensor_sum(exp(z)))
    return sub(lse, index(z, gold))


# ---------------------------------------------------------------------------
# backward pass


def backward(tape: Tape, loss: Tensor, params: list[Tensor] | None = None) -> None:
    """Populate ``.grad`` on every reachable requires_grad leaf tensor.

    Gradients accumulate across calls (callers zero them between steps).
    If ``params`` is given, any parameter the loss does not reach gets a
    zero gradient and a DisconnectedParameter warning.
    """
    if loss.data.ndim != 0:
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    touched: set[int] = set()
    for out, inputs, backward_fn in reversed(tape.entries):
        g = flowing.pop(id(out), None)
        if g is None:
            continue
        input_grads = backward_fn(g)
        for t, ig in zip(inputs, input_grads):
            if ig is None:
                continue
            if id(t) in tape.produced:
                if id(t) in flowing:
                    flowing[id(t)] = flowing[id(t)] + ig
                else:
                    flowing[id(t)] = ig
            elif t.requires_grad:
                if t.grad is None:
                    t.grad = np.array(ig, copy=True)
                else:
                    t.grad += ig
                touched.add(id(t))
    if params is not None:
        for p in params:
            if id(p) not in touched and p.grad is None:
                warnings.warn(
                    f"parameter {p.name or '<unnamed>'} is disconnected from the loss",
                    DisconnectedParameter,
                )
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(build_loss, params: dict[str, Tensor], h: float = 1e-5):
    """Compare autodiff gradients against central finite differences.

    ``build_loss`` is a zero-argument callable that runs the forward pass
    and returns a scalar Tensor; it must read parameter values from the
    ``params`` tensors each call. Returns (max relative error, per-name
    error dict). Use float64 parameters for trustworthy results.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
        backward(tape, loss, params=list(params.values()))

    worst = 0.0
    per_param: dict[str, float] = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        err = 0.0
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss().item()
            flat[i] = orig - h
            down = build_loss().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            denom = max(abs(fd), abs(aflat[i]), 1e-8)
            err = max(err, abs(fd - aflat[i]) / denom)
        per_param[name] = err
        worst = max(worst, err)
    return worst, per_param
