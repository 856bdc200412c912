"""Dense float64 tensors with reverse-mode gradients, plus the training substrate.

Only the primitives the models in this package need are provided. Every
primitive checks operand shapes and the finiteness of its result, so a bad
composition fails loudly at the op that caused it instead of silently
propagating NaNs into the optimizer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from satrank.errors import NumericError, ShapeError

DTYPE = np.float64


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------


def derive_seed(seed: int, name: str, index: int = 0) -> int:
    """Split a global seed into an independent stream for ``(name, index)``.

    The result is ``seed XOR H(name, index)`` where ``H`` is a stable 64-bit
    hash, so streams do not depend on Python's randomized ``hash``.
    """
    digest = hashlib.blake2b(f"{name}:{index}".encode(), digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(digest, "little")) & 0xFFFFFFFFFFFFFFFF


def rng_for(seed: int, name: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, name, index))


# ---------------------------------------------------------------------------
# Tensor core
# ---------------------------------------------------------------------------


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by {op}")


class Tensor:
    """A float64 array node in a computation graph.

    ``backward`` closures receive the cotangent of this node and return one
    cotangent per parent (``None`` for parents that need no gradient).
    """

    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="const"):
        value = np.asarray(value, dtype=DTYPE)
        _check_finite(value, op)
        self.value = value
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self, cotangent=None) -> None:
        backward(self, cotangent)


class Parameter(Tensor):
    """A trainable leaf. ``decay`` marks weight matrices for the L2 penalty."""

    __slots__ = ("name", "grad", "decay")

    def __init__(self, value, name: str, decay: bool = True):
        super().__init__(value, requires_grad=True, op="param")
        self.name = name
        self.decay = decay
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def backward(output: Tensor, cotangent=None) -> None:
    """Accumulate d(output)/d(param) into every reachable ``Parameter.grad``.

    A scalar output gets an implicit cotangent of 1; otherwise a cotangent of
    the output's shape is required.
    """
    if cotangent is None:
        if output.value.size != 1:
            raise ShapeError(f"backward: non-scalar output {output.shape} needs a cotangent")
        cotangent = np.ones_like(output.value)
    cotangent = np.asarray(cotangent, dtype=DTYPE)
    if cotangent.shape != output.shape:
        raise ShapeError(f"backward: cotangent {cotangent.shape} != output {output.shape}")
    if not output.requires_grad:
        return

    # iterative post-order so deep graphs do not hit the recursion limit
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(output): cotangent}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def forward_backward(fn: Callable[[], Tensor], params: Iterable[Parameter]) -> float:
    """Zero ``params`` grads, evaluate the scalar ``fn()``, backpropagate.

    Returns the scalar value; gradients are left in each ``Parameter.grad``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = fn()
    out.backward()
    return out.item()


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Element-wise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.value * b.value, (a, b), bw, "mul")


def matmul(a, b) -> Tensor:
    """``a[..., k] @ b[k, n]`` (or ``b[k]``); ``b`` must be 1-D or 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim not in (1, 2) or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.value @ b.value

    def bw(g):
        ga = gb = None
        if b.ndim == 1:
            if a.requires_grad:
                ga = g[..., None] * b.value
            if b.requires_grad:
                gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1)
        else:
            if a.requires_grad:
                ga = g @ b.value.T
            if b.requires_grad:
                gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _node(out, (a, b), bw, "matmul")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no operands")
    nd = ts[0].ndim
    ax = axis % nd if nd else 0
    for t in ts:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _node(np.concatenate([t.value for t in ts], axis=ax), ts, bw, "concat")


def absdiff(a, b) -> Tensor:
    """``|a - b|`` element-wise; the subgradient at zero is 0."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("absdiff", a, b)
    d = a.value - b.value
    s = np.sign(d)

    def bw(g):
        return _unbroadcast(g * s, a.shape), _unbroadcast(-g * s, b.shape)

    return _node(np.abs(d), (a, b), bw, "absdiff")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.value > 0  # derivative at exactly 0 is 0

    def bw(g):
        return (g * on,)

    return _node(np.where(on, a.value, 0.0), (a,), bw, "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.value)

    def bw(g):
        return (g * s * (1.0 - s),)

    return _node(s, (a,), bw, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)

    def bw(g):
        return (g * (1.0 - t * t),)

    return _node(t, (a,), bw, "tanh")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise NumericError("log: non-positive operand")

    def bw(g):
        return (g / a.value,)

    return _node(np.log(a.value), (a,), bw, "log")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; zero gradient where the clamp is active."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)

    def bw(g):
        return (g * inside,)

    return _node(np.clip(a.value, lo, hi), (a,), bw, "clip")


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(a.value.sum(axis=axis), (a,), bw, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), bw, "reshape")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.value, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None

    def bw(g):
        return (_unbroadcast(g, a.shape),)

    return _node(out, (a,), bw, "broadcast_to")


def masked_max(a, mask=None, axis: int = 1) -> Tensor:
    """Max over ``axis`` restricted to positions where ``mask`` is true.

    ``mask`` has the shape of ``a`` without its trailing dims past ``axis``
    (e.g. ``[B, T]`` for ``a`` of ``[B, T, C]``). Ties route the gradient to
    the first maximal position.
    """
    a = as_tensor(a)
    v = a.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.shape[: axis + 1]:
            raise ShapeError(f"masked_max: mask {mask.shape} does not match {v.shape} at axis {axis}")
        if not np.all(mask.any(axis=axis)):
            raise ShapeError("masked_max: a slice has no unmasked positions")
        m = mask.reshape(mask.shape + (1,) * (v.ndim - mask.ndim))
        v = np.where(m, v, -np.inf)
    idx = np.expand_dims(np.argmax(v, axis=axis), axis)
    out = np.take_along_axis(a.value, idx, axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.value)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _node(out, (a,), bw, "masked_max")


# ---------------------------------------------------------------------------
# Initialization, regularization, dropout
# ---------------------------------------------------------------------------


def xavier_init(fan_in: int, fan_out: int, seed: int) -> np.ndarray:
    """Glorot-uniform ``[fan_in, fan_out]`` matrix, a pure function of ``seed``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"xavier_init: fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return np.random.default_rng(seed).uniform(-bound, bound, size=(fan_in, fan_out))


def dropout_mask(shape, rate: float, seed: int, mode: str = "train") -> np.ndarray:
    """Inverted-dropout multiplier: 0 w.p. ``rate``, else ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return np.ones(shape, dtype=DTYPE)
    keep = np.random.default_rng(seed).random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(a, rate: float, seed: int, mode: str) -> Tensor:
    if mode == "eval" or rate == 0.0:
        return as_tensor(a)
    return mul(a, dropout_mask(as_tensor(a).shape, rate, seed, mode))


def l2_penalty(params: Iterable[Parameter], lam: float) -> Tensor:
    """``lam * sum(W**2)`` over parameters flagged ``decay`` (biases are not)."""
    total = Tensor(0.0)
    if lam == 0:
        return total
    for p in params:
        if p.decay:
            total = add(total, tsum(mul(p, p)))
    return mul(total, lam)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Iterable[Parameter], **hyper) -> "AdamState":
        state = cls(**hyper)
        for p in params:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        return state


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update in place; gradients are zeroed after."""
    params = list(params)
    for p in params:
        if p.name not in state.m or state.m[p.name].shape != p.shape:
            got = state.m[p.name].shape if p.name in state.m else None
            raise ShapeError(f"adam_step: state for {p.name!r} has shape {got}, parameter has {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        m = state.m[p.name] = b1 * state.m[p.name] + (1.0 - b1) * g
        v = state.v[p.name] = b2 * state.v[p.name] + (1.0 - b2) * g * g
        p.value = p.value - state.alpha * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        _check_finite(p.value, f"adam_step({p.name})")
        p.zero_grad()
