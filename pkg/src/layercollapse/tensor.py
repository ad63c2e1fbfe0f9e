"""A small define-by-run reverse-mode autodiff engine over float64 numpy arrays.

Every operation on tensors that require gradients records a node holding its
parents and a closure mapping the output gradient to parent gradients.
:meth:`Tensor.backward` walks the recorded graph in reverse topological order,
visiting every node exactly once, and accumulates into leaf ``.grad`` arrays.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, parameter updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable | None = None
        self.op = ""

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data, parents: Sequence["Tensor"], grad_fn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
        else:
            out._parents = ()
            out._grad_fn = None
        return out

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
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # -- autodiff -------------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf requiring grad.

        Only scalar tensors (a single element) may start a backward pass when
        ``grad`` is not supplied.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape).copy()
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._grad_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ------------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "add")
    return Tensor._make(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "sub")
    return Tensor._make(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "mul")
    return Tensor._make(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "div")
    out = a.data / b.data
    return Tensor._make(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape),
                   _unbroadcast(-g * out / b.data, b.shape)),
        "div")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    return Tensor._make(
        a.data ** exponent, (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1.0),), f"pow{exponent:g}")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def maximum(a: Tensor, value: float = 0.0) -> Tensor:
    """Elementwise max against a constant; ties route the gradient to ``a``."""
    mask = a.data >= value
    return Tensor._make(np.where(mask, a.data, value), (a,),
                        lambda g: (g * mask,), "max")


def minimum(a: Tensor, value: float = 0.0) -> Tensor:
    mask = a.data <= value
    return Tensor._make(np.where(mask, a.data, value), (a,),
                        lambda g: (g * mask,), "min")


def relu(a: Tensor) -> Tensor:
    return Tensor._make(np.maximum(a.data, 0.0), (a,),
                        lambda g: (g * (a.data > 0),), "relu")


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """``max(0, x) + alpha * min(0, x)`` with a scalar ``alpha``.

    The subgradient at ``x == 0`` is taken from the positive branch (1).
    """
    x, alpha = as_tensor(x), as_tensor(alpha)
    if alpha.size != 1:
        raise DimensionError(f"prelu: alpha must be a scalar, got shape {alpha.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("prelu: non-finite input")
    a = float(alpha.data.reshape(-1)[0])
    pos = x.data >= 0
    neg_part = np.minimum(x.data, 0.0)
    out = np.maximum(x.data, 0.0) + a * neg_part

    def grad_fn(g):
        gx = g * np.where(pos, 1.0, a)
        ga = np.sum(g * neg_part).reshape(alpha.shape)
        return gx, ga

    return Tensor._make(out, (x, alpha), grad_fn, "prelu")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return Tensor._make(
        a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    return Tensor._make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,),
                        lambda g: (g.reshape(old),), "reshape")


# -- reductions ---------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return Tensor._make(
        np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),), "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size / max(np.size(out), 1)
    return Tensor._make(
        out, (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,), "mean")


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return Tensor._make(
        out, (a,),
        lambda g: (g - soft * g.sum(axis=-1, keepdims=True),), "log_softmax")


def softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return Tensor._make(
        out, (a,),
        lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),), "softmax")


# -- convolution --------------------------------------------------------------

def conv2d(x, weight, bias=None, padding: int = 0) -> Tensor:
    """Stride-1 2-D cross-correlation.

    x: (N, C_in, H, W); weight: (C_out, C_in, kh, kw); bias: (C_out,) or None.
    Zero padding of ``padding`` pixels is applied on every border.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: incompatible shapes {x.shape} and {weight.shape}")
    p = int(padding)
    if p < 0:
        raise DimensionError(f"conv2d: negative padding {p}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    n, _, hp, wp = xp.shape
    c_out, _, kh, kw = weight.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {(kh, kw)} larger than padded input {(hp, wp)}")
    K = weight.data
    out = np.zeros((n, c_out, ho, wo))
    for u in range(kh):
        for v in range(kw):
            out += np.einsum("nchw,oc->nohw", xp[:, :, u:u + ho, v:v + wo], K[:, :, u, v])
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
        out += bias.data[None, :, None, None]
        parents.append(bias)

    def grad_fn(g):
        gxp = np.zeros_like(xp)
        gK = np.zeros_like(K)
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, :, u:u + ho, v:v + wo]
                gK[:, :, u, v] = np.einsum("nohw,nchw->oc", g, patch)
                gxp[:, :, u:u + ho, v:v + wo] += np.einsum("nohw,oc->nchw", g, K[:, :, u, v])
        gx = gxp[:, :, p:hp - p, p:wp - p] if p else gxp
        grads = [gx, gK]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor._make(out, parents, grad_fn, "conv2d")
