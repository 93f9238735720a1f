"""A small reverse-mode autodiff engine over float64 numpy arrays.

Each op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back to them.  ``backward`` walks the
recorded graph in reverse topological order, so every node is visited once.

Broadcasting is limited to what ``add``/``mul`` need for biases and gains;
``matmul`` broadcasts leading (batch, head) dims only.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


class NonScalarLoss(ValueError):
    pass


_GRAD_ENABLED = True
_DEBUG_CHECKS = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Raise NonFiniteValue as soon as any op produces NaN or Inf."""
    global _DEBUG_CHECKS
    prev, _DEBUG_CHECKS = _DEBUG_CHECKS, enabled
    try:
        yield
    finally:
        _DEBUG_CHECKS = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    # operator sugar used by tests and small expressions
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"non-finite output from {op}")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    out.op = op
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                pg = _unbroadcast(pg, parent.data.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# --------------------------------------------------------------------------
# primitives; each backward closure returns one gradient per parent


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from e
    return _result(data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from e
    return _result(data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _result(data, (a, b), bw, "matmul")


def transpose_last2(a: Tensor) -> Tensor:
    return _result(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(f"reshape {old} -> {tuple(shape)}") from e
    return _result(data, (a,), lambda g: (g.reshape(old),), "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "permute")


def sum_all(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape),), "sum")


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _result(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,), "relu")


def softmax_lastdim(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (a,), bw, "softmax")


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``; no gradient flows there."""
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    try:
        data = np.where(mask, value, a.data)
    except ValueError as e:
        raise ShapeMismatch(f"masked_fill: {a.shape} vs mask {mask.shape}") from e
    if data.shape != a.shape:
        raise ShapeMismatch(f"masked_fill: mask {mask.shape} widens {a.shape}")
    return _result(data, (a,), lambda g: (np.where(mask, 0.0, g),), "masked_fill")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    if gain.shape != a.shape[-1:] or bias.shape != a.shape[-1:]:
        raise ShapeMismatch(f"layer_norm: {a.shape} with gain {gain.shape}, bias {bias.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(y, (a, gain, bias), bw, "layer_norm")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"ids out of range for table of {table.shape[0]} rows")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), bw, "embedding")


def gather_lastdim(a: Tensor, index: np.ndarray) -> Tensor:
    """``out[..., i, j] = a[..., i, index[i, j]]`` for a 2-D integer ``index``."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 2 or index.shape[0] != a.shape[-2]:
        raise ShapeMismatch(f"gather: index {index.shape} for input {a.shape}")
    rows = np.arange(index.shape[0])[:, None]
    data = a.data[..., rows, index]

    def bw(g):
        onehot = index[:, :, None] == np.arange(a.shape[-1])
        return (np.einsum("...ij,ijr->...ir", g, onehot.astype(np.float64)),)

    return _result(data, (a,), bw, "gather")


def dropout(a: Tensor, p: float, rng_seed, training: bool = True) -> Tensor:
    """Inverted dropout; the keep mask comes from a Philox stream keyed by ``rng_seed``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if p == 0.0 or not training:
        return a
    seed = np.random.SeedSequence(rng_seed if np.iterable(rng_seed) else [rng_seed])
    keep = np.random.Generator(np.random.Philox(seed)).random(a.shape) >= p
    factor = keep / (1.0 - p)
    return _result(a.data * factor, (a,), lambda g: (g * factor,), "dropout")


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(
    logits: Tensor, targets, ignore_id: int | None = None, label_smoothing: float = 0.0
) -> Tensor:
    """Mean token cross-entropy over non-ignored targets.

    With smoothing eps the target distribution is ``(1 - eps) * onehot + eps / V``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    vocab = logits.shape[-1]
    flat = logits.data.reshape(-1, vocab)
    tflat = targets.reshape(-1)
    keep = np.ones_like(tflat, dtype=bool) if ignore_id is None else tflat != ignore_id
    count = max(int(keep.sum()), 1)
    logp = log_softmax_np(flat)
    safe_t = np.where(keep, tflat, 0)
    q = np.full_like(flat, label_smoothing / vocab)
    q[np.arange(len(tflat)), safe_t] += 1.0 - label_smoothing
    q *= keep[:, None]
    loss = -(q * logp).sum() / count

    def bw(g):
        probs = np.exp(logp)
        grad = (probs * keep[:, None] - q) / count
        return (g * grad.reshape(logits.shape),)

    return _result(np.asarray(loss), (logits,), bw, "cross_entropy")


def parameters_zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
