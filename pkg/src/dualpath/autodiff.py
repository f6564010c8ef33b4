"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
local backward rule. :func:`backward` replays the recorded graph in reverse
topological order and accumulates gradients into the ``.grad`` buffers of all
tensors that require them. Gradients accumulate additively across backward
calls until :func:`zero_grad` is used.

All math is double precision. Broadcasting follows numpy semantics; gradients
of broadcast operands are reduced back to the operand shape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "parameter",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "narrow",
    "concat",
    "stack",
    "exp",
    "log",
    "sqrt",
    "relu",
    "tsum",
    "tmean",
    "softmax",
    "layer_norm",
    "cross_entropy_with_logits",
    "cosine_similarity",
    "pool",
    "Tape",
    "backward",
    "zero_grad",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer.

    Leaf tensors are created directly (see :func:`parameter` and
    :func:`constant`); non-leaf tensors are produced by the operations in
    this module and carry the recorded backward rule.
    """

    __slots__ = ("data", "grad", "requires_grad", "_inputs", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(_as_array(data))
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._inputs: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A constant copy sharing no graph history."""
        return Tensor(self.data.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; all routed through the module-level primitives
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """A trainable leaf tensor.

    With ``rng`` given, ``data`` is interpreted as a shape and the tensor is
    initialised from N(0, scale^2); ``scale`` defaults to 1/sqrt(fan_in) for
    matrices and 0 is never used for gains/biases (pass explicit arrays).
    """
    if rng is not None:
        shape = tuple(data)
        if scale is None:
            fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
            scale = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable | None) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == np.float64 else data.astype(np.float64)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = np.zeros_like(out.data) if out.requires_grad else None
    out._inputs = tuple(inputs) if out.requires_grad else ()
    out._backward = backward_fn if out.requires_grad else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` by summing broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    dup = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if dup:
        grad = grad.sum(axis=dup, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = (_unbroadcast(-g * a.data / (b.data * b.data), b.shape)
              if b.requires_grad else None)
        return ga, gb

    return _make(a.data / b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra and structure
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy's stacked-matrix broadcasting on leading axes."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        ga = (_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
              if a.requires_grad else None)
        gb = (_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
              if b.requires_grad else None)
        return ga, gb

    return _make(data, (a, b), bw)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _wrap(a)
    perm = tuple(axes) if axes is not None else tuple(range(a.ndim))[::-1]
    inv = tuple(np.argsort(perm))

    def bw(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(perm), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape

    def bw(g):
        return (np.reshape(g, old),)

    return _make(np.reshape(a.data, shape), (a,), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _wrap(a)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}) outside axis {axis} of {a.shape}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), bw)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]

    def bw(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(ts)))

    return _make(np.stack([t.data for t in ts], axis=axis), ts, bw)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def log(a) -> Tensor:
    a = _wrap(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    data = np.sqrt(a.data)
    return _make(data, (a,), lambda g: (g * 0.5 / data,))


def relu(a) -> Tensor:
    # subgradient at 0 is 0
    a = _wrap(a)
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bw)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a, axis: int | tuple | None = None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _make(np.asarray(data), (a,), bw)


def tmean(a, axis: int | tuple | None = None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[i] for i in axis]))
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def pool(a, axis: int, mode: str = "mean") -> Tensor:
    """Reduce one axis by mean or max; max routes its gradient to the argmax."""
    a = _wrap(a)
    if a.shape[axis] < 1:
        raise ShapeError(f"pool over empty axis {axis} of {a.shape}")
    if mode == "mean":
        n = a.shape[axis]
        data = a.data.mean(axis=axis)

        def bw(g):
            return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

        return _make(data, (a,), bw)
    if mode == "max":
        data = a.data.max(axis=axis)
        arg = np.argmax(a.data, axis=axis)  # ties go to the lowest index

        def bw(g):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis)
            return (full,)

        return _make(data, (a,), bw)
    raise ValueError(f"unknown pool mode {mode!r}")


# ---------------------------------------------------------------------------
# composite primitives with recorded rules
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max subtraction)."""
    a = _wrap(a)
    if a.shape[axis] < 1:
        raise ShapeError(f"softmax over empty axis {axis} of {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (a,), bw)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _wrap(a), _wrap(gain), _wrap(bias)
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    c = a.shape[-1]
    if c < 1:
        raise ShapeError("layer_norm needs a non-empty last axis")
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({c},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        da = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return da, dgain, dbias

    return _make(data, (a, gain, bias), bw)


def cross_entropy_with_logits(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``.

    ``logits`` is (B, M); backward is (softmax - one_hot) / B.
    """
    logits = _wrap(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross entropy expects (batch, classes), got {logits.shape}")
    b, m = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != b:
        raise ShapeError(f"{labels.shape[0]} labels for batch of {b}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= m:
        raise ValueError(f"label outside [0, {m})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(b)
    data = np.asarray(-logp[rows, labels].mean())

    def bw(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (float(g) / b),)

    return _make(data, (logits,), bw)


def cosine_similarity(u, v) -> Tensor:
    """cos(u, v) for rank-1 tensors, differentiable; zero-norm inputs raise."""
    u, v = _wrap(u), _wrap(v)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity expects matching vectors, got {u.shape}, {v.shape}")
    if np.linalg.norm(u.data) == 0.0 or np.linalg.norm(v.data) == 0.0:
        raise ValueError("cosine_similarity: zero-norm input")
    uv = tsum(mul(u, v))
    nu = sqrt(tsum(mul(u, u)))
    nv = sqrt(tsum(mul(v, v)))
    return div(uv, mul(nu, nv))


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

class Tape:
    """The recorded forward graph below one root, in topological order.

    ``nodes[i]``'s inputs always appear at lower indices; the reverse sweep in
    :func:`backward` therefore visits each node exactly once with its upstream
    gradient fully accumulated.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for inp in node._inputs:
                stack.append((inp, False))
        return cls(order)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    ``loss`` must be scalar. Gradients add onto whatever the buffers already
    hold, so calling twice without :func:`zero_grad` doubles them.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {loss.shape}")
    tape = Tape.trace(loss)
    if not loss.requires_grad:
        return tape
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if node._backward is None:
            continue
        for inp, gi in zip(node._inputs, node._backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in flow:
                flow[key] = flow[key] + gi
            else:
                flow[key] = gi
    return tape


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
