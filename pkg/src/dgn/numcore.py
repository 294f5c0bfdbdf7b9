"""Small dense tensors with reverse-mode gradients.

Every value the model computes is a :class:`Tensor`. Operations record their
inputs and a closure that pushes the output gradient back to those inputs;
:func:`backward` walks the record in reverse topological order. Tensors are
rank 1 or rank 2 and backed by numpy arrays. Parameters default to float32;
float64 is used for finite-difference verification.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np

FLOAT32 = np.float32
FLOAT64 = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad", "grad", "name")

    def __init__(self, data, dtype=None, parents=(), backward_fn=None, requires_grad=False, name=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(FLOAT32)
        if arr.ndim not in (1, 2):
            raise ShapeError(f"tensors are rank 1 or 2, got shape {arr.shape}")
        self.data = arr
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A named leaf tensor whose gradient is written by :func:`backward`."""

    __slots__ = ()

    def __init__(self, name: str, value, dtype=FLOAT32):
        super().__init__(np.array(value, dtype=dtype), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


class ModelParams:
    """Ordered collection of uniquely named parameters."""

    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()
        for p in params:
            self.add(p)

    def add(self, param: Parameter) -> Parameter:
        if param.name in self._params:
            raise ValueError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self:
            p.zero_grad()

    @property
    def dtype(self):
        for p in self:
            return p.dtype
        return np.dtype(FLOAT32)

    def size(self) -> int:
        return sum(p.data.size for p in self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def constant(x, dtype=FLOAT32) -> Tensor:
    return Tensor(np.array(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    # Allowed: (m,n) with (n,), (m,n) with (m,1) or (1,n), scalar-like (1,) / (1,1).
    try:
        out = np.broadcast_shapes(sa, sb)
    except ValueError:
        out = None
    if out is None or out not in (sa, sb):
        raise ShapeError(f"{op}: incompatible operand shapes {sa} and {sb}")


# -- binary / unary elementwise -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, parents=(a, b), backward_fn=back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return Tensor(a.data - b.data, parents=(a, b), backward_fn=back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, parents=(a, b), backward_fn=back)


def scale(a: Tensor, factor: float) -> Tensor:
    return Tensor(a.data * a.data.dtype.type(factor), parents=(a,),
                  backward_fn=lambda g: (g * a.data.dtype.type(factor),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * (1 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows; sigmoid(0) is exactly 0.5.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * out * (1 - out),))


def one_minus(a: Tensor) -> Tensor:
    return Tensor(1 - a.data, parents=(a,), backward_fn=lambda g: (-g,))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without overflow."""
    x = a.data
    out = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))
    sig_neg = _sigmoid(-x)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * sig_neg,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "one_minus": one_minus,
    "log_sigmoid": log_sigmoid,
}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch an entrywise operation by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# -- structural ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply lhs {a.shape} by rhs {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(a.data @ b.data, parents=(a, b), backward_fn=back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs rank 2, got {a.shape}")
    return Tensor(a.data.T, parents=(a,), backward_fn=lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor(a.data.reshape(shape), parents=(a,), backward_fn=lambda g: (g.reshape(old),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError(f"concat_cols: row counts differ: {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return Tensor(np.concatenate([p.data for p in parts], axis=1), parents=tuple(parts), backward_fn=back)


def gather_rows(a: Tensor, index) -> Tensor:
    """out[i] = a[index[i]]."""
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return Tensor(a.data[index], parents=(a,), backward_fn=back)


def segment_sum(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """out[s] = sum of rows i with segment_ids[i] == s (rows accumulate in index order)."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape[0] != a.shape[0]:
        raise ShapeError(f"segment_sum: {segment_ids.shape[0]} ids for {a.shape[0]} rows")
    out = np.zeros((num_segments,) + a.shape[1:], dtype=a.dtype)
    np.add.at(out, segment_ids, a.data)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g[segment_ids],))


def row_max(a: Tensor) -> Tensor:
    """Max over each row, shape (m, 1). The gradient goes to the first maximiser."""
    if a.data.ndim != 2 or a.shape[1] == 0:
        raise ShapeError(f"row_max needs a non-empty rank-2 tensor, got {a.shape}")
    idx = np.argmax(a.data, axis=1)
    rows = np.arange(a.shape[0])

    def back(g):
        out = np.zeros_like(a.data)
        out[rows, idx] = g[:, 0]
        return (out,)

    return Tensor(a.data[rows, idx][:, None], parents=(a,), backward_fn=back)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor(np.array([a.data.sum()], dtype=a.dtype), parents=(a,),
                  backward_fn=lambda g: (np.full(shape, g[0], dtype=g.dtype),))


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    if a.data.ndim != 2 or a.shape[1] == 0 or a.shape[0] == 0:
        raise ShapeError(f"softmax_rows needs non-empty rows, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Tensor(out, parents=(a,), backward_fn=back)


def segment_softmax(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a column vector taken separately within each segment."""
    if a.data.ndim != 2 or a.shape[1] != 1:
        raise ShapeError(f"segment_softmax expects an (n, 1) column, got {a.shape}")
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    x = a.data[:, 0]
    seg_max = np.full(num_segments, -np.inf, dtype=x.dtype)
    np.maximum.at(seg_max, segment_ids, x)
    ex = np.exp(x - seg_max[segment_ids])
    denom = np.zeros(num_segments, dtype=x.dtype)
    np.add.at(denom, segment_ids, ex)
    out = (ex / denom[segment_ids])[:, None]

    def back(g):
        gy = (g * out)[:, 0]
        dot = np.zeros(num_segments, dtype=gy.dtype)
        np.add.at(dot, segment_ids, gy)
        return (out * (g - dot[segment_ids][:, None]),)

    return Tensor(out, parents=(a,), backward_fn=back)


# -- gradients -----------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: ModelParams | Iterable[Parameter]):
    """Write d(loss)/d(value) into the ``grad`` of every parameter in ``params``.

    Parameters that the loss does not depend on end up with zero gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params)
    for p in params:
        p.zero_grad()
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad_check(forward: Callable[[], Tensor], params: ModelParams, epsilon: float = 1e-6) -> float:
    """Largest relative disagreement between backward() and central differences.

    ``forward`` must rebuild the scalar loss from the current parameter values
    each time it is called. Every parameter must be float64.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    for p in params:
        if p.dtype != FLOAT64:
            raise TypeError(f"grad_check needs float64 parameters; {p.name!r} is {p.dtype}")

    loss = forward()
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite at the unperturbed point")
    backward(loss, params)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = forward().item()
            flat[i] = orig - epsilon
            down = forward().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite loss while perturbing {p.name!r}[{i}]")
            numeric = (up - down) / (2 * epsilon)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
