"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new Tensor holding the result and a closure that
routes the output gradient to the operation's inputs.  backward() walks the
recorded graph once in reverse topological order.  Inside a no_grad() block
nothing is recorded and the ops run at plain numpy cost.

All values are float64; gradient-check tolerances are unachievable in 32-bit.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class GraphError(RuntimeError):
    """Backward invoked on a tensor with no recorded computation."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        if _GRAD_ENABLED:
            self._parents = parents
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, constant(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return getitem(self, key)


def constant(value) -> Tensor:
    """Leaf with no gradient path (plain data)."""
    return Tensor(value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        # copy: g may be a view of (or alias) another node's gradient buffer
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad throughout the graph below a scalar loss."""
    if loss.data.size != 1:
        raise GraphError("backward requires a scalar loss")
    if loss._backward is None and not loss._parents:
        raise GraphError("backward without a recorded forward computation")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive operations


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if not _GRAD_ENABLED:
        return Tensor(data)
    return Tensor(data, parents, backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(out_data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(out_data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def back(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(out_data, (a, b), back)


def power(a: Tensor, exponent: float) -> Tensor:
    out_data = a.data**exponent

    def back(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    return _node(out_data, (a,), back)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def back(g):
        _accumulate(a, g * out_data)

    return _node(out_data, (a,), back)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def back(g):
        _accumulate(a, g / a.data)

    return _node(out_data, (a,), back)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def back(g):
        _accumulate(a, g * (a.data > 0))

    return _node(out_data, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast_matmul(ga, a.shape))
        _accumulate(b, _unbroadcast_matmul(gb, b.shape))

    return _node(out_data, (a, b), back)


def _unbroadcast_matmul(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return _unbroadcast(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gg, a.shape).copy())

    return _node(out_data, (a,), back)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), constant(1.0 / count))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def back(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(out_data, (a,), back)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out_data = np.swapaxes(a.data, ax1, ax2)

    def back(g):
        _accumulate(a, np.swapaxes(g, ax1, ax2))

    return _node(out_data, (a,), back)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def back(g):
        offs = np.cumsum([0] + sizes)
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(sl)])

    return _node(out_data, tuple(parts), back)


def _is_advanced_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def getitem(a: Tensor, key) -> Tensor:
    out_data = a.data[key]

    def back(g):
        full = np.zeros_like(a.data)
        if _is_advanced_key(key):
            np.add.at(full, key, g)  # duplicate indices must accumulate
        else:
            full[key] += g
        _accumulate(a, full)

    return _node(out_data, (a,), back)


def take_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup along axis 0 (embedding gather)."""
    idx = np.asarray(indices)
    out_data = table.data[idx]

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accumulate(table, full)

    return _node(out_data, (table,), back)


def pad2d(a: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Zero-pad the two spatial axes of a [..., H, W, C] tensor."""
    widths = [(0, 0)] * a.ndim
    widths[-3] = (pad_h, pad_h)
    widths[-2] = (pad_w, pad_w)
    out_data = np.pad(a.data, widths)

    def back(g):
        sl = [slice(None)] * a.ndim
        sl[-3] = slice(pad_h, pad_h + a.shape[-3])
        sl[-2] = slice(pad_w, pad_w + a.shape[-2])
        _accumulate(a, g[tuple(sl)])

    return _node(out_data, (a,), back)
