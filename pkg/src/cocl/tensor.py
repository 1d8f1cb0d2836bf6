"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op builds its output eagerly with numpy and, when any input requires a
gradient, records the inputs together with a closure that maps the output
gradient to input gradients. ``backward`` orders the reachable graph into a
:class:`Tape` and walks it once in reverse.

Broadcasting is deliberately limited to scalar-with-tensor; row-wise bias
addition goes through the explicit :func:`broadcast_rows` op.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, DomainError

NORM_FLOOR = 1e-12

Scalar = Union[int, float]


class Tensor:
    """A float64 array that can take part in a differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else arr.copy()
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


class Tape:
    """Topologically ordered record of the ops reachable from a root tensor.

    Inputs always precede the node that consumes them, so iterating
    ``reversed(tape.nodes)`` visits each node after all of its consumers.
    """

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list = []
        seen: set = set()
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
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1 or loss.ndim > 0:
        raise ContractError(f"backward() needs a scalar (0-d) loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape.from_root(loss)
    grads = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def _is_scalar(x) -> bool:
    if isinstance(x, Tensor):
        return x.ndim == 0
    return np.ndim(x) == 0


def _binary_operands(a, b, name: str):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # only scalar broadcasting exists, so the sole reduction is to a 0-d value
    if g.shape == shape:
        return g
    return np.asarray(g.sum())


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def _bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _node(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def _bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _node(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def _bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), _bw, "mul")


def scale(a: Tensor, c: Scalar) -> Tensor:
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        bad = float(a.data[a.data <= 0].flat[0])
        raise DomainError(f"log of non-positive value {bad}")
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


# ----------------------------------------------------------------- reductions


def _check_axis(t: Tensor, axis: Optional[int]) -> None:
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {t.shape}")


def sum(t: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    _check_axis(t, axis)
    shape = t.shape

    def _bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(np.sum(t.data, axis=axis), (t,), _bw, "sum")


def mean(t: Tensor, axis: Optional[int] = None) -> Tensor:
    _check_axis(t, axis)
    count = t.size if axis is None else t.shape[axis]
    if count == 0:
        raise DimensionError("mean over an empty axis")
    return scale(sum(t, axis), 1.0 / count)


# ------------------------------------------------------------ linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def _bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), _bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T.copy(),), "transpose")


def broadcast_rows(b: Tensor, n: int) -> Tensor:
    """Stack a length-d vector into an (n, d) matrix."""
    if b.ndim != 1:
        raise DimensionError(f"broadcast_rows needs a vector, got shape {b.shape}")
    return _node(np.tile(b.data, (n, 1)), (b,), lambda g: (g.sum(axis=0),), "broadcast_rows")


def l2_normalize(t: Tensor) -> Tensor:
    """Project every row onto the unit sphere.

    Rows with norm below ``NORM_FLOOR`` raise instead of being silently
    stabilised.
    """
    if t.ndim != 2:
        raise DimensionError(f"l2_normalize needs a matrix, got shape {t.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", t.data, t.data))
    small = np.flatnonzero(norms < NORM_FLOOR)
    if small.size:
        raise DegenerateInputError(
            f"row {int(small[0])} has norm {norms[small[0]]:.3e} below floor {NORM_FLOOR}"
        )
    n = norms[:, None]
    y = t.data / n

    def _bw(g):
        dot = np.einsum("ij,ij->i", y, g)[:, None]
        return ((g - y * dot) / n,)

    return _node(y, (t,), _bw, "l2_normalize")


def masked_log_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise log-softmax restricted to the entries where ``mask`` is true.

    Masked-out entries come back as exactly 0 and receive no gradient. The
    log-sum-exp subtracts each row's masked maximum before exponentiating.
    """
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 2 or mask.shape != x.shape:
        raise DimensionError(f"masked_log_softmax: data {x.shape} vs mask {mask.shape}")
    if not mask.any(axis=1).all():
        raise ContractError("masked_log_softmax: a row has no unmasked entry")
    masked = np.where(mask, x.data, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    shifted = masked - row_max
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = np.where(mask, shifted - lse, 0.0)
    prob = np.where(mask, np.exp(out), 0.0)

    def _bw(g):
        g = np.where(mask, g, 0.0)
        return (g - prob * g.sum(axis=1, keepdims=True),)

    return _node(out, (x,), _bw, "masked_log_softmax")


def log_softmax(x: Tensor) -> Tensor:
    return masked_log_softmax(x, np.ones(x.shape, dtype=bool))
