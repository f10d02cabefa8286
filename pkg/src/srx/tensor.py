"""Dense float64 tensors with reverse-mode automatic differentiation.

Every forward operation returns a new :class:`Tensor` that remembers its
parents and a closure propagating the output gradient back to them. Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order (the :class:`Tape`) exactly once per node.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_GRAD_ENABLED = True

# op name -> factor applied to the incoming gradient; test hook for gradcheck
_GRAD_CORRUPTION: dict[str, float] = {}


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


@contextlib.contextmanager
def corrupt_gradient(op: str, factor: float = 1.5):
    """Scale the gradient entering ``op``'s backward rule (negative control)."""
    _GRAD_CORRUPTION[op] = factor
    try:
        yield
    finally:
        _GRAD_CORRUPTION.pop(op, None)


class Tensor:
    """An n-dimensional float64 array with optional gradient tracking."""

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        # interior nodes get their buffer when backward() reaches them
        self.grad = np.zeros_like(self.data) if self.requires_grad and not _parents else None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[], None] | None = None
        self.op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self):
        """Populate ``.grad`` of every tracked tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor that does not track gradients")
        tape = Tape.record(self)
        for node in tape.nodes:
            if node._parents:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(tape.nodes):
            if node._backward is None:
                continue
            factor = _GRAD_CORRUPTION.get(node.op)
            if factor is not None:
                node.grad = node.grad * factor
            node._backward()

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return mean_pool(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Topologically ordered record of the operations that produced a tensor.

    Nodes appear after all of their parents; :meth:`Tensor.backward` visits
    them once each, in reverse.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @classmethod
    def record(cls, root: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        # iterative DFS: model graphs are deep enough to hit the recursion limit
        stack: list[tuple[Tensor, bool]] = [(root, False)]
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
        return cls(order)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.op = op
    out._backward = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} is invalid for a tensor of shape {x.shape}")
    return axis % x.ndim


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def backward():
            _accumulate(a, _unbroadcast(out.grad, a.shape))
            _accumulate(b, _unbroadcast(out.grad, b.shape))
        out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = _result(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def backward():
            _accumulate(a, _unbroadcast(out.grad, a.shape))
            _accumulate(b, -_unbroadcast(out.grad, b.shape))
        out._backward = backward
    return out


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def backward():
            _accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
            _accumulate(b, _unbroadcast(out.grad * a.data, b.shape))
        out._backward = backward
    return out


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    out = _result(x.data * c, (x,), "scale")
    if out.requires_grad:
        out._backward = lambda: _accumulate(x, out.grad * c)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def backward():
            _accumulate(a, out.grad @ b.data.T)
            _accumulate(b, a.data.T @ out.grad)
        out._backward = backward
    return out


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    out = _result(x.data.T, (x,), "transpose")
    if out.requires_grad:
        out._backward = lambda: _accumulate(x, out.grad.T)
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = _result(np.where(mask, x.data, 0.0), (x,), "relu")
    if out.requires_grad:
        out._backward = lambda: _accumulate(x, out.grad * mask)
    return out


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _result(y, (x,), "softmax")
    if out.requires_grad:
        def backward():
            g = out.grad
            _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = backward
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must match last axis of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = _result(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm")
    if out.requires_grad:
        def backward():
            g = out.grad
            lead = tuple(range(g.ndim - 1))
            _accumulate(gain, (g * xhat).sum(axis=lead))
            _accumulate(bias, g.sum(axis=lead))
            if x.requires_grad:
                gx = g * gain.data
                dx = inv_std * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                )
                x.grad += dx
        out._backward = backward
    return out


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    first = tensors[0]
    axis = _check_axis(first, axis)
    for t in tensors[1:]:
        ok = t.ndim == first.ndim and all(
            t.shape[i] == first.shape[i] for i in range(first.ndim) if i != axis
        )
        if not ok:
            shapes = [t.shape for t in tensors]
            raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}")
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    if out.requires_grad:
        bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

        def backward():
            for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
                if t.requires_grad:
                    index = [slice(None)] * out.ndim
                    index[axis] = slice(lo, hi)
                    t.grad += out.grad[tuple(index)]
        out._backward = backward
    return out


def take(x, index) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    x = as_tensor(x)
    try:
        y = x.data[index]
    except IndexError as exc:
        raise DimensionError(f"index {index!r} invalid for shape {x.shape}: {exc}") from None
    out = _result(y, (x,), "take")
    if out.requires_grad:
        def backward():
            if x.requires_grad:
                np.add.at(x.grad, index, out.grad)
        out._backward = backward
    return out


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    out = _result(y, (x,), "reshape")
    if out.requires_grad:
        out._backward = lambda: _accumulate(x, out.grad.reshape(x.shape))
    return out


def stack(tensors: Iterable) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    return concat([reshape(t, (1,) + as_tensor(t).shape) for t in tensors], axis=0)


def tensor_sum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axis = _check_axis(x, axis)
    out = _result(x.data.sum(axis=axis), (x,), "sum")
    if out.requires_grad:
        def backward():
            g = out.grad if axis is None else np.expand_dims(out.grad, axis)
            _accumulate(x, np.broadcast_to(g, x.shape))
        out._backward = backward
    return out


def mean_pool(x, axis: int | None = 0) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axis = _check_axis(x, axis)
        count = x.shape[axis]
    out = _result(x.data.mean(axis=axis), (x,), "mean_pool")
    if out.requires_grad:
        def backward():
            g = out.grad if axis is None else np.expand_dims(out.grad, axis)
            _accumulate(x, np.broadcast_to(g / count, x.shape))
        out._backward = backward
    return out


def max_pool(x, axis: int = 0) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the lowest-index maximum."""
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    arg = np.expand_dims(x.data.argmax(axis=axis), axis)
    out = _result(np.take_along_axis(x.data, arg, axis=axis).squeeze(axis), (x,), "max_pool")
    if out.requires_grad:
        def backward():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                np.put_along_axis(g, arg, np.expand_dims(out.grad, axis), axis=axis)
                x.grad += g
        out._backward = backward
    return out


def l2_normalize(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    norm = np.sqrt((x.data ** 2).sum(axis=axis, keepdims=True))
    if np.any(norm == 0.0):
        raise ContractError("l2_normalize: cannot normalise a zero vector")
    y = x.data / norm
    out = _result(y, (x,), "l2_normalize")
    if out.requires_grad:
        def backward():
            g = out.grad
            _accumulate(x, (g - y * (g * y).sum(axis=axis, keepdims=True)) / norm)
        out._backward = backward
    return out


def finite_diff_grad(f: Callable[[np.ndarray], float], x, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``f`` receives a float64 array shaped like ``x``. With ``indices`` (flat
    positions) only those coordinates are estimated and a 1-D array of the
    same length is returned; otherwise the full gradient array.
    """
    if step <= 0:
        raise ContractError("finite_diff_grad: step must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = base.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    estimates = []
    for i in coords:
        original = flat[i]
        flat[i] = original + step
        plus = float(f(base))
        flat[i] = original - step
        minus = float(f(base))
        flat[i] = original
        estimates.append((plus - minus) / (2.0 * step))
    estimates = np.asarray(estimates)
    return estimates.reshape(base.shape) if indices is None else estimates
