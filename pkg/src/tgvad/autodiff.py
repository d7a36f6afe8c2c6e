"""Dense 2-D tensors with reverse-mode automatic differentiation.

Every tensor produced by an operation remembers its parents and a closure
mapping the output gradient to one gradient per parent. ``backward`` walks
the recorded graph in reverse topological order and sums gradients into the
leaves that require them.

Only three shapes are used anywhere in the package: scalars ``()``, vectors
``(n,)`` and matrices ``(m, n)``. Broadcasting is limited to a scalar against
anything and a vector bias against the rows of a matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _result(data, parents, backward_fn, op) -> Tensor:
    # Only keep the graph when something upstream wants a gradient.
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# computation tape and backward pass
# ---------------------------------------------------------------------------


@dataclass
class ComputationTape:
    """Recorded operations of one graph in topological order (inputs first)."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationTape":
        order = []
        seen = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def leaves(self) -> list:
        return [n for n in self.nodes if not n._parents]


def backward(output: Tensor, tape: ComputationTape | None = None) -> ComputationTape:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf on the tape."""
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise ContractError("output does not depend on any tensor that requires grad")
    if tape is None:
        tape = ComputationTape.from_output(output)
    grads = {id(output): np.ones_like(output.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            # gradient arrays are never mutated in place, so aliasing is safe
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return tape


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.sum(axis=0)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def _bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), _bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), _bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` as a single tape entry."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: cannot multiply shapes {x.shape} and {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is None:
        return _result(out, (x, w), lambda g: (g @ wd.T, xd.T @ g), "linear")
    if b.shape != (wd.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match {wd.shape}")

    def _bw(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return _result(out + b.data, (x, w, b), _bw, "linear")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    return _result(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


# ---------------------------------------------------------------------------
# reductions and indexing
# ---------------------------------------------------------------------------


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    """Mean over everything, or over ``axis`` keeping a 2-D ``(1, n)`` / ``(m, 1)`` result."""
    shape = a.shape
    if axis is None:
        n = a.data.size
        return _result(
            np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean"
        )
    n = shape[axis]
    return _result(
        a.data.mean(axis=axis, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
        "mean",
    )


def take(a: Tensor, index) -> Tensor:
    """Select entries of a vector (or rows of a matrix) by integer index array."""
    idx = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def _bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), _bw, "take")


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def _bw(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _result(a.data[start:stop], (a,), _bw, "rows")


def cols(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def _bw(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _result(a.data[:, start:stop], (a,), _bw, "cols")


def _concat(parts: Sequence[Tensor], axis: int, op: str) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError(f"{op}: nothing to concatenate")
    for p in parts:
        if p.data.ndim != 2:
            raise ShapeError(f"{op}: expected matrices, got {p.shape}")
    other = 1 - axis
    if len({p.shape[other] for p in parts}) != 1:
        raise ShapeError(f"{op}: mismatched shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def _bw(g):
        if axis == 0:
            return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), _bw, op)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, 0, "concat_rows")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, 1, "concat_cols")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(np.atleast_1d(a.data)).reshape(a.shape)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    y = 0.5 * x * (1.0 + t)

    def _bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _result(y, (a,), _bw, "gelu")


def identity(a: Tensor) -> Tensor:
    return a


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,), "log")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero where clipping was active."""
    x = a.data
    mask = (x >= lo) & (x <= hi)
    return _result(np.clip(x, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got {a.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax_rows: non-finite input")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), _bw, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Per-row normalization to zero mean / unit variance followed by ``gain * . + bias``."""
    xd = x.data
    if xd.ndim != 2 or gain.shape != (xd.shape[1],) or bias.shape != (xd.shape[1],):
        raise ShapeError(
            f"layer_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape} disagree"
        )
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def _bw(g):
        gx = g * gd
        dx = inv * (
            gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _result(xhat * gd + bias.data, (x, gain, bias), _bw, "layer_norm")


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "identity": identity,
}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    from .errors import ConfigError

    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None


def mlp_forward(x: Tensor, layers: Iterable[tuple]) -> Tensor:
    """Apply ``(W, b, activation_name)`` triples in order."""
    for w, b, act in layers:
        x = activation(act)(linear(x, w, b))
    return x
