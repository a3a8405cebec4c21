"""Reverse-mode automatic differentiation over small dense float64 tensors.

Every operation that sees a grad-requiring input records itself on the
implicit tape (the graph hanging off its output node); ``backward`` walks
that tape once in reverse topological order and deposits gradients on the
requiring leaves.  The op set is deliberately tiny and broadcast-free
(except bias-row addition) so each backward rule stays auditable.

The module also provides ``grad_check``, the central-finite-difference
oracle used throughout the test suite and by the ``grad-check`` CLI verb.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class TensorError(Exception):
    """Base class for autodiff contract violations."""


class DimensionError(TensorError):
    """Operand shapes do not conform for the requested op."""


class DomainError(TensorError):
    """Input values outside the op's mathematical domain (e.g. log of <= 0)."""


class GraphError(TensorError):
    """Misuse of the tape: non-scalar backward root, repeated backward, ..."""


class NonFiniteError(TensorError):
    """A forward op produced NaN/Inf from finite inputs."""


class Tensor:
    """Dense float64 array with optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "op", "inputs", "_vjp", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op: str | None = None
        self.inputs: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; all graph construction lives in the module functions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def softmax(self):
        return softmax(self)

    def log_softmax(self):
        return log_softmax(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError("item() requires a scalar tensor")
        return float(self.data.reshape(()))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _tracked(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _finite_or_raise(op: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op {op!r} produced non-finite values")


def _node(op: str, inputs: tuple[Tensor, ...], data: np.ndarray, vjp) -> Tensor:
    _finite_or_raise(op, data)
    out = Tensor(data)
    if _tracked(*inputs):
        out.requires_grad = True
        out.op = op
        out.inputs = inputs
        out._vjp = vjp
    return out


# -- op implementations ------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes {a.data.shape} x {b.data.shape} do not chain")
    with np.errstate(over="ignore", invalid="ignore"):
        data = a.data @ b.data

    def vjp(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _node("matmul", (a, b), data, vjp)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bias_row = (
        a.data.ndim == 2
        and b.data.ndim == 2
        and b.data.shape[0] == 1
        and a.data.shape[1] == b.data.shape[1]
        and a.data.shape[0] != 1
    )
    if a.data.shape != b.data.shape and not bias_row:
        raise DimensionError(f"add shapes {a.data.shape} and {b.data.shape} differ")
    data = a.data + b.data

    def vjp(g):
        gb = None
        if b.requires_grad:
            gb = g.sum(axis=0, keepdims=True) if bias_row else g
        return (g if a.requires_grad else None, gb)

    return _node("add", (a, b), data, vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"sub shapes {a.data.shape} and {b.data.shape} differ")
    data = a.data - b.data

    def vjp(g):
        return (g if a.requires_grad else None, -g if b.requires_grad else None)

    return _node("sub", (a, b), data, vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul shapes {a.data.shape} and {b.data.shape} differ")
    data = a.data * b.data

    def vjp(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    return _node("mul", (a, b), data, vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0
    data = np.where(mask, x.data, 0.0)

    def vjp(g):
        return (g * mask,)

    return _node("relu", (x,), data, vjp)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # piecewise form avoids overflow in exp for large |x|
    pos = x.data >= 0
    z = np.exp(np.where(pos, -x.data, x.data))
    data = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _node("sigmoid", (x,), data, vjp)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _node("tanh", (x,), data, vjp)


def _row_axis(data: np.ndarray, op: str) -> int:
    if data.ndim not in (1, 2):
        raise DimensionError(f"{op} expects a vector or a matrix of row distributions")
    return data.ndim - 1


def softmax(x) -> Tensor:
    x = as_tensor(x)
    axis = _row_axis(x.data, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _node("softmax", (x,), data, vjp)


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    axis = _row_axis(x.data, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def vjp(g):
        soft = np.exp(data)
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node("log_softmax", (x,), data, vjp)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    data = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return _node("log", (x,), data, vjp)


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        data = np.exp(x.data)

    def vjp(g):
        return (g * data,)

    return _node("exp", (x,), data, vjp)


def tsum(x) -> Tensor:
    x = as_tensor(x)
    data = np.asarray(x.data.sum())

    def vjp(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _node("sum", (x,), data, vjp)


def tmean(x) -> Tensor:
    x = as_tensor(x)
    data = np.asarray(x.data.mean())
    n = x.data.size

    def vjp(g):
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return _node("mean", (x,), data, vjp)


def slice_rows(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError("slice_rows expects a matrix")
    n = x.data.shape[0]
    if not (0 <= start < stop <= n):
        raise DimensionError(f"row slice [{start}:{stop}] out of range for {n} rows")
    data = x.data[start:stop].copy()

    def vjp(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _node("slice_rows", (x,), data, vjp)


def concat_rows(parts: Sequence) -> Tensor:
    tensors = tuple(as_tensor(p) for p in parts)
    if not tensors:
        raise DimensionError("concat_rows needs at least one input")
    for t in tensors:
        if t.data.ndim != 2 or t.data.shape[1] != tensors[0].data.shape[1]:
            raise DimensionError("concat_rows inputs must be matrices with equal column count")
    data = np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            g[offsets[i] : offsets[i + 1]] if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return _node("concat_rows", tensors, data, vjp)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    data = x.data * factor

    def vjp(g):
        return (g * factor,)

    return _node("scale", (x,), data, vjp)


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    if not lo < hi:
        raise DomainError(f"clamp bounds [{lo}, {hi}] are empty")
    data = np.clip(x.data, lo, hi)
    interior = (x.data > lo) & (x.data < hi)

    def vjp(g):
        return (g * interior,)

    return _node("clamp", (x,), data, vjp)


def grl(x, coeff: float) -> Tensor:
    """Gradient-reverse: identity forward, -coeff times the gradient backward."""
    x = as_tensor(x)
    coeff = float(coeff)
    if coeff < 0.0:
        raise DomainError("grl coefficient must be >= 0")
    data = x.data.copy()

    def vjp(g):
        return (-coeff * g,)

    return _node("grl", (x,), data, vjp)


# -- registry and generic application ----------------------------------------

OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "log": log,
    "exp": exp,
    "sum": tsum,
    "mean": tmean,
    "slice_rows": slice_rows,
    "concat_rows": concat_rows,
    "scale": scale,
    "clamp": clamp,
    "grl": grl,
}


def apply(op_kind: str, inputs: Iterable, **params) -> Tensor:
    """Dispatch an op by name; the per-op functions do all validation."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    inputs = list(inputs)
    if op_kind == "concat_rows":
        return fn(inputs, **params)
    return fn(*inputs, **params)


# -- backward pass ------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for inp in node.inputs:
            if id(inp) not in seen:
                stack.append((inp, False))
    return order


def backward(root: Tensor, accumulate: bool = False) -> dict[Tensor, np.ndarray]:
    """Propagate d(root)/d(leaf) to every grad-requiring leaf under ``root``.

    Returns a map from leaf tensor to its gradient array (the same array
    stored in ``leaf.grad``).  With ``accumulate=False`` (default) leaf
    gradients are overwritten; pass ``accumulate=True`` to sum gradients
    across several backward roots.
    """
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.data.shape}")
    if root.op is None:
        return {}
    if root._backward_done:
        raise GraphError("second backward through the same root without reset")
    root._backward_done = True

    order = _topo_order(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for inp, gi in zip(node.inputs, node._vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            held = grads.get(id(inp))
            grads[id(inp)] = gi if held is None else held + gi

    result: dict[Tensor, np.ndarray] = {}
    for node in order:
        if node.op is not None or not node.requires_grad:
            continue
        g = grads.get(id(node))
        if g is None:
            continue
        if accumulate and node.grad is not None:
            node.grad = node.grad + g
        else:
            node.grad = g
        result[node] = node.grad
    return result


# -- finite-difference oracle --------------------------------------------------


def grad_check(f, x, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map the given tensor(s) to a scalar Tensor.  ``x`` may be a
    single Tensor or a sequence of Tensors; every coordinate of every input
    is perturbed.  The error for a coordinate is
    ``|analytic - central| / max(1, |analytic|)``.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    probes = [Tensor(t.data.copy(), requires_grad=True) for t in xs]

    out = f(*probes)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise GraphError("grad_check requires a scalar-valued function")
    backward(out)

    def value_at(arrays) -> float:
        frozen = [Tensor(a) for a in arrays]
        return f(*frozen).item()

    worst = 0.0
    for idx, probe in enumerate(probes):
        analytic = probe.grad
        if analytic is None:
            analytic = np.zeros_like(probe.data)
        flat = probe.data.reshape(-1)
        for coord in range(flat.size):
            bumped = [p.data.copy() for p in probes]
            bumped[idx].reshape(-1)[coord] += eps
            hi = value_at(bumped)
            bumped[idx].reshape(-1)[coord] -= 2.0 * eps
            lo = value_at(bumped)
            central = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[coord]
            err = abs(a - central) / max(1.0, abs(a))
            if err > worst:
                worst = err
    return worst
