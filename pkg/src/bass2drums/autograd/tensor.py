"""The Tensor type: ndarray data, gradient slot, and a recorded backward.

Semantics worth knowing before writing ops:

- Whether a gradient is needed is captured when an op is *built*, not when
  backward runs, so freezing a network after building a graph does not
  silence gradients already recorded in it.
- backward() re-zeroes interior nodes of the swept graph but accumulates
  into leaves, so two backward passes double a parameter's gradient.
- Elementwise arithmetic accepts equal-shaped tensors or a tensor and a
  python scalar; there is no silent broadcasting.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

_default_dtype = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


def set_default_dtype(dtype) -> None:
    """Set the dtype used for new tensors built from non-float data."""
    global _default_dtype
    dt = np.dtype(dtype).type
    if dt not in _FLOAT_DTYPES:
        raise ValueError("default dtype must be float32 or float64")
    _default_dtype = dt


def get_default_dtype():
    return _default_dtype


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward_fn=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        arr = np.asarray(data)
        if arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward_fn = _backward_fn

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def detach(self) -> "Tensor":
        """A leaf tensor sharing no graph history (data is copied)."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")

    # -- backward sweep ----------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad.

        self must be scalar.  Interior (non-leaf) gradients are reset at the
        start of each sweep; leaf gradients accumulate across sweeps until
        zero_grad is called.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

        for node in topo:
            if not node.is_leaf:
                node.grad = None
        _accum(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ----------------------------------------------------

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
        return neg(self)

    def relu(self):
        return relu(self)

    def leaky_relu(self, slope: float = 0.2):
        return leaky_relu(self, slope)

    def tanh(self):
        return tanh(self)

    def abs(self):
        return abs_(self)

    def square(self):
        return square(self)

    def softplus(self):
        return softplus(self)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution (never in place, so aliasing is safe)."""
    t.grad = g if t.grad is None else t.grad + g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ "
                         "(elementwise ops do not broadcast)")


def _as_operand(value, op: str):
    """Split an operand into (tensor, scalar): exactly one is non-None."""
    if isinstance(value, Tensor):
        return value, None
    if isinstance(value, (int, float, np.integer, np.floating)):
        return None, float(value)
    raise TypeError(f"{op}: operand must be a Tensor or python scalar, "
                    f"got {type(value).__name__}")


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    at, asc = _as_operand(a, "add")
    bt, bsc = _as_operand(b, "add")
    if at is not None and bt is not None:
        _check_same_shape(at, bt, "add")
        need_a, need_b = at.requires_grad, bt.requires_grad
        out = Tensor(at.data + bt.data, requires_grad=need_a or need_b,
                     _parents=(at, bt))

        def backward(g):
            if need_a:
                _accum(at, g)
            if need_b:
                _accum(bt, g)

        out._backward_fn = backward if out.requires_grad else None
        return out
    t, sc = (at, bsc) if at is not None else (bt, asc)
    need = t.requires_grad
    out = Tensor(t.data + sc, requires_grad=need, _parents=(t,))

    def backward_scalar(g):
        _accum(t, g)

    out._backward_fn = backward_scalar if need else None
    return out


def neg(a: Tensor) -> Tensor:
    need = a.requires_grad
    out = Tensor(-a.data, requires_grad=need, _parents=(a,))

    def backward(g):
        _accum(a, -g)

    out._backward_fn = backward if need else None
    return out


def sub(a, b) -> Tensor:
    bt, bsc = _as_operand(b, "sub")
    if bt is not None:
        return add(a, neg(bt))
    return add(a, -bsc)


def mul(a, b) -> Tensor:
    at, asc = _as_operand(a, "mul")
    bt, bsc = _as_operand(b, "mul")
    if at is not None and bt is not None:
        _check_same_shape(at, bt, "mul")
        need_a, need_b = at.requires_grad, bt.requires_grad
        out = Tensor(at.data * bt.data, requires_grad=need_a or need_b,
                     _parents=(at, bt))
        a_data, b_data = at.data, bt.data

        def backward(g):
            if need_a:
                _accum(at, g * b_data)
            if need_b:
                _accum(bt, g * a_data)

        out._backward_fn = backward if out.requires_grad else None
        return out
    t, sc = (at, bsc) if at is not None else (bt, asc)
    need = t.requires_grad
    out = Tensor(t.data * sc, requires_grad=need, _parents=(t,))

    def backward_scalar(g):
        _accum(t, g * sc)

    out._backward_fn = backward_scalar if need else None
    return out


# -- activations ------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    need = a.requires_grad
    out = Tensor(np.maximum(a.data, 0), requires_grad=need, _parents=(a,))
    x = a.data

    def backward(g):
        _accum(a, g * (x > 0))

    out._backward_fn = backward if need else None
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    need = a.requires_grad
    x = a.data
    out = Tensor(np.where(x > 0, x, x * slope), requires_grad=need, _parents=(a,))

    def backward(g):
        _accum(a, g * np.where(x > 0, 1.0, slope).astype(x.dtype))

    out._backward_fn = backward if need else None
    return out


def tanh(a: Tensor) -> Tensor:
    need = a.requires_grad
    y = np.tanh(a.data)
    out = Tensor(y, requires_grad=need, _parents=(a,))

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    out._backward_fn = backward if need else None
    return out


def abs_(a: Tensor) -> Tensor:
    need = a.requires_grad
    x = a.data
    out = Tensor(np.abs(x), requires_grad=need, _parents=(a,))

    def backward(g):
        _accum(a, g * np.sign(x))

    out._backward_fn = backward if need else None
    return out


def square(a: Tensor) -> Tensor:
    need = a.requires_grad
    x = a.data
    out = Tensor(x * x, requires_grad=need, _parents=(a,))

    def backward(g):
        _accum(a, g * (2.0 * x))

    out._backward_fn = backward if need else None
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow on either tail."""
    need = a.requires_grad
    x = a.data
    out = Tensor(np.logaddexp(0.0, x), requires_grad=need, _parents=(a,))

    def backward(g):
        pos = x >= 0
        ex = np.exp(np.where(pos, -x, x))  # exp of a non-positive number
        sig = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))
        _accum(a, g * sig)

    out._backward_fn = backward if need else None
    return out


# -- reductions ---------------------------------------------------------------


def sum_(a: Tensor) -> Tensor:
    need = a.requires_grad
    out = Tensor(np.asarray(a.data.sum(), dtype=a.data.dtype),
                 requires_grad=need, _parents=(a,))
    shape = a.data.shape

    def backward(g):
        _accum(a, np.broadcast_to(g, shape))

    out._backward_fn = backward if need else None
    return out


def mean(a: Tensor) -> Tensor:
    need = a.requires_grad
    out = Tensor(np.asarray(a.data.mean(), dtype=a.data.dtype),
                 requires_grad=need, _parents=(a,))
    shape, size = a.data.shape, a.data.size

    def backward(g):
        _accum(a, np.broadcast_to(g / size, shape))

    out._backward_fn = backward if need else None
    return out


# -- structure ---------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along one axis; gradient slices flow back per input."""
    ts = list(tensors)
    if not ts:
        raise ValueError("concat of nothing")
    for t in ts[1:]:
        if t.data.ndim != ts[0].data.ndim:
            raise ValueError("concat inputs must have equal rank")
    need = any(t.requires_grad for t in ts)
    needs = [t.requires_grad for t in ts]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis),
                 requires_grad=need, _parents=tuple(ts))
    sizes = [t.data.shape[axis] for t in ts]

    def backward(g):
        start = 0
        for t, size, needed in zip(ts, sizes, needs):
            if needed:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, start + size)
                _accum(t, g[tuple(index)])
            start += size

    out._backward_fn = backward if need else None
    return out
