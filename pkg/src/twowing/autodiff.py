"""Minimal dense-tensor autodiff engine.

Every tensor is a float64 numpy array. Operations build a define-by-run graph
(each output keeps references to its parents and a closure that pushes the
output gradient back into them); ``Tensor.backward`` walks that graph in
reverse topological order. Only the operations the two-wing model needs are
provided, and several of them (convolution, attention) are fused so that a
forward pass creates few Python-level nodes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from twowing.errors import ArgumentError, ContractError, DimensionError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure numpy forward)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array that optionally records how it was computed.

    Args:
        data: Anything ``np.asarray`` accepts.
        requires_grad: Whether gradients should be accumulated into ``grad``.
        name: Optional label used in error messages and checkpoints.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out.name = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf.

        Raises:
            ContractError: if ``self`` is not a scalar.
        """
        if self.data.ndim != 0:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # intermediate gradients are not needed once propagated
                node.grad = None
                node._backward = None
                node._parents = ()


def _topological_order(root: Tensor) -> list:
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64).reshape(t.data.shape)
    else:
        t.grad += np.reshape(g, t.data.shape)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - y * y))

    return _result(y, (a,), backward)


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    """Logistic function, evaluated without overflow for large ``|x|``."""
    a = as_tensor(a)
    y = _sigmoid_array(a.data)

    def backward(g):
        _accumulate(a, g * y * (1.0 - y))

    return _result(y, (a,), backward)


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log of ``max(a, floor)``; the gradient is zero where clamped."""
    clamped = np.maximum(a.data, floor)
    live = a.data > floor

    def backward(g):
        _accumulate(a, np.where(live, g / clamped, 0.0))

    return _result(np.log(clamped), (a,), backward)


def tensor_sum(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _result(np.asarray(a.data.sum()), (a,), backward)


def softmax(v: Tensor) -> Tensor:
    """Softmax of a vector, shifted by its max for stability.

    Raises:
        ArgumentError: on an empty vector.
    """
    if v.ndim != 1:
        raise DimensionError(f"softmax expects a vector, got shape {v.shape}")
    if v.shape[0] == 0:
        raise ArgumentError("softmax of an empty vector")
    e = np.exp(v.data - v.data.max())
    y = e / e.sum()

    def backward(g):
        _accumulate(v, y * (g - np.dot(g, y)))

    return _result(y, (v,), backward)


# --------------------------------------------------------------------------
# linear algebra and reshaping
# --------------------------------------------------------------------------


def matvec(W: Tensor, x: Tensor) -> Tensor:
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec: cannot multiply W{W.shape} by x{x.shape}")

    def backward(g):
        if W.requires_grad:
            _accumulate(W, np.outer(g, x.data))
        if x.requires_grad:
            _accumulate(x, W.data.T @ g)

    return _result(W.data @ x.data, (W, x), backward)


def matmul(A: Tensor, B: Tensor) -> Tensor:
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul: cannot multiply A{A.shape} by B{B.shape}")

    def backward(g):
        if A.requires_grad:
            _accumulate(A, g @ B.data.T)
        if B.requires_grad:
            _accumulate(B, A.data.T @ g)

    return _result(A.data @ B.data, (A, B), backward)


def dot(x: Tensor, y: Tensor) -> Tensor:
    if x.ndim != 1 or x.shape != y.shape:
        raise DimensionError(f"dot: shapes {x.shape} and {y.shape} differ")

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * y.data)
        if y.requires_grad:
            _accumulate(y, g * x.data)

    return _result(np.asarray(np.dot(x.data, y.data)), (x, y), backward)


def transpose(A: Tensor) -> Tensor:
    def backward(g):
        _accumulate(A, g.T)

    return _result(A.data.T, (A,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def index(v: Tensor, i: int) -> Tensor:
    """Scalar element ``v[i]`` of a vector."""

    def backward(g):
        full = np.zeros(v.shape)
        full[i] = g
        _accumulate(v, full)

    return _result(np.asarray(v.data[i]), (v,), backward)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Join vectors (and scalars, treated as length-1 vectors) end to end."""
    parts = [as_tensor(p) for p in parts]
    flat = [p.data.reshape(-1) for p in parts]
    if any(p.ndim > 1 for p in parts):
        raise DimensionError("concat expects vectors or scalars")
    sizes = [f.shape[0] for f in flat]

    def backward(g):
        start = 0
        for p, n in zip(parts, sizes):
            _accumulate(p, g[start:start + n])
            start += n

    return _result(np.concatenate(flat), parts, backward)


def stack(vectors: Sequence[Tensor]) -> Tensor:
    """Stack ``k`` equal-length vectors into a ``k x n`` matrix (one per row)."""
    vectors = list(vectors)
    if not vectors:
        raise ArgumentError("stack of an empty list")
    shape = vectors[0].shape
    for v in vectors:
        if v.shape != shape or v.ndim != 1:
            raise DimensionError(f"stack: vector shapes {shape} and {v.shape} differ")

    def backward(g):
        for row, v in enumerate(vectors):
            _accumulate(v, g[row])

    return _result(np.stack([v.data for v in vectors]), vectors, backward)


def hstack(mats: Sequence[Tensor]) -> Tensor:
    """Concatenate ``d x l_k`` feature maps column-wise into ``d x sum(l_k)``."""
    mats = list(mats)
    if not mats:
        raise ArgumentError("hstack of an empty list")
    rows = mats[0].shape[0]
    for m in mats:
        if m.ndim != 2 or m.shape[0] != rows:
            raise DimensionError(f"hstack: shapes {mats[0].shape} and {m.shape} differ")
    widths = [m.shape[1] for m in mats]

    def backward(g):
        start = 0
        for m, w in zip(mats, widths):
            _accumulate(m, g[:, start:start + w])
            start += w

    return _result(np.concatenate([m.data for m in mats], axis=1), mats, backward)


def amax(M: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    if M.shape[axis] == 0:
        raise ArgumentError(f"max over an empty axis of shape {M.shape}")
    arg = np.argmax(M.data, axis=axis)
    out = np.take_along_axis(M.data, np.expand_dims(arg, axis), axis).squeeze(axis)

    def backward(g):
        full = np.zeros(M.shape)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis)
        _accumulate(M, full)

    return _result(out, (M,), backward)


def maxpool_over_time(M: Tensor) -> Tensor:
    """Row-wise max of a ``d x l`` map, giving a length-``d`` vector."""
    if M.ndim != 2 or M.shape[1] == 0:
        raise ArgumentError(f"max-pooling needs at least one column, got shape {M.shape}")
    return amax(M, axis=1)


def max_over(vectors: Sequence[Tensor]) -> Tensor:
    """Componentwise max over a non-empty list of equal-length vectors."""
    return amax(stack(vectors), axis=0)


# --------------------------------------------------------------------------
# fused text operations
# --------------------------------------------------------------------------


def _windows(T: np.ndarray, width: int) -> np.ndarray:
    d, l = T.shape
    half = width // 2
    padded = np.zeros((d, l + 2 * half))
    padded[:, half:half + l] = T
    # column j holds [T_{j-half}; ...; T_{j+half}] stacked top to bottom
    return np.concatenate([padded[:, k:k + l] for k in range(width)], axis=0)


def conv1d(T: Tensor, W: Tensor, b: Tensor, width: int = 3) -> Tensor:
    """Zero-padded "same" convolution over time followed by tanh.

    Column ``j`` of the result is ``tanh(W [T_{j-1}; T_j; T_{j+1}] + b)`` for
    ``width=3``; missing neighbours at both ends are zero vectors.

    Args:
        T: ``d x l`` feature map.
        W: ``d_out x (width*d)`` filter matrix.
        b: ``d_out`` bias.
        width: odd filter width.
    """
    if width % 2 != 1:
        raise ArgumentError(f"filter width must be odd, got {width}")
    if T.ndim != 2 or T.shape[1] == 0:
        raise ArgumentError(f"conv1d needs a non-empty d x l map, got shape {T.shape}")
    d, l = T.shape
    if W.ndim != 2 or W.shape[1] != width * d or b.shape != (W.shape[0],):
        raise DimensionError(
            f"conv1d: filter W{W.shape} / bias b{b.shape} do not fit map T{T.shape} at width {width}"
        )
    U = _windows(T.data, width)
    Y = np.tanh(W.data @ U + b.data[:, None])

    def backward(g):
        dZ = g * (1.0 - Y * Y)
        if W.requires_grad:
            _accumulate(W, dZ @ U.T)
        if b.requires_grad:
            _accumulate(b, dZ.sum(axis=1))
        if T.requires_grad:
            dU = W.data.T @ dZ
            half = width // 2
            dpad = np.zeros((d, l + 2 * half))
            for k in range(width):
                dpad[:, k:k + l] += dU[k * d:(k + 1) * d]
            _accumulate(T, dpad[:, half:half + l])

    return _result(Y, (T, W, b), backward)


def attention(H: Tensor, X: Tensor) -> Tensor:
    """Dot-product attention of each column of ``H`` over the columns of ``X``.

    Returns a ``d x l`` map whose column ``j`` is
    ``sum_z softmax_z(H_j . X_z) X_z``. Scores are not scaled.
    """
    if H.ndim != 2 or X.ndim != 2 or H.shape[0] != X.shape[0]:
        raise DimensionError(f"attention: shapes H{H.shape} and X{X.shape} do not agree")
    if X.shape[1] == 0:
        raise ArgumentError("attention over an empty context")
    S = H.data.T @ X.data
    S -= S.max(axis=1, keepdims=True)
    A = np.exp(S)
    A /= A.sum(axis=1, keepdims=True)
    C = X.data @ A.T

    def backward(g):
        dA = g.T @ X.data
        dS = A * (dA - (dA * A).sum(axis=1, keepdims=True))
        if H.requires_grad:
            _accumulate(H, X.data @ dS.T)
        if X.requires_grad:
            _accumulate(X, g @ A + H.data @ dS)

    return _result(C, (H, X), backward)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Look up rows of a ``V x d`` table and return them as a ``d x l`` map."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] == 0:
        raise ArgumentError("cannot embed an empty token sequence")

    def backward(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids, g.T)
        _accumulate(table, full)

    return _result(table.data[ids].T.copy(), (table,), backward)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


class AdaGrad:
    """AdaGrad with a per-entry squared-gradient accumulator.

    ``accum += g**2; param -= lr * g / sqrt(accum + eps)``. No decay, no clipping.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 0.02, eps: float = 1e-8):
        unique = []
        seen = set()
        for p in params:
            if id(p) not in seen:
                seen.add(id(p))
                unique.append(p)
        self.params = unique
        self.lr = lr
        self.eps = eps
        self.accum = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, acc in zip(self.params, self.accum):
            if p.grad is None:
                continue
            g = p.grad
            acc += g * g
            p.data -= self.lr * g / np.sqrt(acc + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
