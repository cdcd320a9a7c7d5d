"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a vector-Jacobian rule. :func:`backward` linearises the reachable
operations into a :class:`Tape` (topological order) and replays it in reverse,
accumulating gradients into leaf tensors.

Only scalar-vs-tensor broadcasting is supported. Row-wise bias addition and
row scaling are exposed as dedicated operations (:func:`add_bias`,
:func:`scale_rows`) instead of general broadcasting.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Union

import numpy as np

Number = Union[int, float]
ArrayLike = Union[np.ndarray, Sequence, Number]

__all__ = [
    "DimensionError",
    "ContractError",
    "NonFiniteError",
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "mul_scalar",
    "relu",
    "leaky_relu",
    "identity",
    "elementwise",
    "add_bias",
    "linear",
    "scale_rows",
    "concat",
    "reshape",
    "slice_cols",
    "gather_rows",
    "sparse_matmul",
    "sum_all",
    "mean_all",
    "cross_entropy",
    "mse_loss",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity was produced or supplied."""


def _check_finite(data: np.ndarray, where: str) -> None:
    # a NaN or inf anywhere makes the sum non-finite; overflow of a finite sum
    # (|sum| > 1e308) is reported too, which is divergence for our purposes
    if data.size and not math.isfinite(float(np.add.reduce(data, axis=None))):
        raise NonFiniteError(f"non-finite value in {where}")


class Tensor:
    """A dense float64 array that can take part in reverse-mode differentiation.

    Parameters
    ----------
    data : array-like
        Values; converted to a C-contiguous float64 array.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad`` by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "retain_grad", "_parents", "_vjp", "op")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, *, _check: bool = True):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=np.float64)
        if _check:
            _check_finite(arr, "tensor creation")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.retain_grad = False
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, _check=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data: ArrayLike, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data: ArrayLike) -> Tensor:
    """Leaf tensor with ``requires_grad=True`` owning a private, writable copy of ``data``."""
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    op: str,
) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.retain_grad = False
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


# ---------------------------------------------------------------------------
# Tape and backward pass
# ---------------------------------------------------------------------------


class Tape:
    """Operations reachable from a root, in topological order (inputs first).

    Built by :meth:`from_root`; :func:`backward` walks ``ops`` in reverse so
    each operation's vector-Jacobian product runs exactly once.
    """

    def __init__(self, ops: list[Tensor]):
        self.ops = ops

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        if not root.requires_grad:
            return cls(order)
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf with ``requires_grad`` reachable from ``loss``.

    Gradients accumulate additively into existing ``grad`` arrays, so callers
    zero them between optimisation steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_root(loss)
    if len(tape) == 0:
        raise ContractError("loss does not depend on any tensor requiring grad")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.ops):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf or node.retain_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node.is_leaf:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data

    def vjp(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _result(av @ bv, (a, b), vjp, "matmul")


def _binary_operands(a, b, name: str):
    a_scalar = isinstance(a, (int, float)) or (isinstance(a, Tensor) and a.data.size == 1 and a.ndim == 0)
    b_scalar = isinstance(b, (int, float)) or (isinstance(b, Tensor) and b.data.size == 1 and b.ndim == 0)
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and not (a_scalar or b_scalar):
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} are incompatible")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _result(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")
    av, bv = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bv, a.shape) if a.requires_grad else None,
                _unbroadcast(g * av, b.shape) if b.requires_grad else None)

    return _result(av * bv, (a, b), vjp, "mul")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    x = a.data

    def vjp(g):
        return (g * np.where(x > 0, 1.0, slope),)

    if 0.0 <= slope <= 1.0:
        data = np.maximum(x, x * slope)
    else:
        data = np.where(x > 0, x, x * slope)
    return _result(data, (a,), vjp, "leaky_relu")


def identity(a: Tensor) -> Tensor:
    return a


def elementwise(op_kind: str, *inputs, slope: float = 0.2, scalar: float = 1.0) -> Tensor:
    """Dispatch by name: relu, leaky_relu, identity, add, sub, mul_scalar."""
    if op_kind == "relu":
        return relu(*inputs)
    if op_kind == "leaky_relu":
        return leaky_relu(*inputs, slope=slope)
    if op_kind == "identity":
        return identity(*inputs)
    if op_kind == "add":
        return add(*inputs)
    if op_kind == "sub":
        return sub(*inputs)
    if op_kind == "mul_scalar":
        return mul_scalar(inputs[0], scalar)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-``d`` vector to every row of an ``n x d`` matrix."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise DimensionError(f"add_bias: bias {b.shape} does not fit rows of {x.shape}")

    def vjp(g):
        return (g if x.requires_grad else None,
                g.sum(axis=0) if b.requires_grad else None)

    return _result(x.data + b.data, (x, b), vjp, "add_bias")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row ``i`` of ``x`` by ``w[i]``; ``w`` has shape ``(n,)`` or ``(n, 1)``."""
    wv = w.data.reshape(-1)
    if x.ndim != 2 or wv.shape[0] != x.shape[0]:
        raise DimensionError(f"scale_rows: weights {w.shape} do not match rows of {x.shape}")
    xv = x.data
    col = wv[:, None]

    def vjp(g):
        return (g * col if x.requires_grad else None,
                np.einsum("ij,ij->i", g, xv).reshape(w.shape) if w.requires_grad else None)

    return _result(xv * col, (x, w), vjp, "scale_rows")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not 0 <= start <= stop <= a.shape[1]:
        raise DimensionError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _result(a.data[:, start:stop].copy(), (a,), vjp, "slice_cols")


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def vjp(g):
        out = []
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                out.append(g[tuple(idx)])
            else:
                out.append(None)
        return out

    return _result(data, parts, vjp, "concat")


def gather_rows(x: Tensor, index: np.ndarray, adjoint=None) -> Tensor:
    """Select rows ``x[index]``.

    ``adjoint`` may be a sparse ``(rows(x), len(index))`` 0/1 matrix whose
    product with the upstream gradient performs the scatter-add; without it
    the backward pass falls back to ``np.add.at``.
    """
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def vjp(g):
        if adjoint is not None:
            return (np.asarray(adjoint @ g),)
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _result(np.take(x.data, index, axis=0), (x,), vjp, "gather_rows")


def sparse_matmul(s, x: Tensor, op: str = "sparse_matmul") -> Tensor:
    """Left-multiply by a constant sparse matrix ``s`` (no gradient w.r.t. ``s``)."""
    if x.ndim != 2 or s.shape[1] != x.shape[0]:
        raise DimensionError(f"{op}: operator {s.shape} does not fit {x.shape}")
    st = s.T.tocsr()
    return _result(np.asarray(s @ x.data), (x,), lambda g: (np.asarray(st @ g),), op)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean")


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (n x k) against integer ``targets``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(targets))
    loss = float((logsumexp - z[rows, targets]).mean())
    probs = np.exp(z - logsumexp[:, None])

    def vjp(g):
        d = probs.copy()
        d[rows, targets] -= 1.0
        return (d * (float(g) / len(targets)),)

    return _result(np.asarray(loss), (logits,), vjp, "cross_entropy")


def mse_loss(pred: Tensor, target: ArrayLike) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.data - target
    n = diff.size

    def vjp(g):
        return (diff * (2.0 * float(g) / n),)

    return _result(np.asarray((diff ** 2).mean()), (pred,), vjp, "mse_loss")
