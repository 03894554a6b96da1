"""Dense tensors with reverse-mode automatic differentiation.

Every operation on a tensor that requires gradients records its parents and a
backward closure, stamped with a global sequence number. ``backward`` visits
the reachable nodes in descending sequence order, i.e. in exact reverse
execution order, and accumulates gradients into leaf tensors additively.

All operations accept arbitrary leading (batch) dimensions and follow numpy
broadcasting; gradients are summed back to each operand's shape.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError

_counter = itertools.count()
_grad_enabled = True

DEFAULT_DTYPE = np.float32


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_counter)

    # --- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # --- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self.dtype)))

    def __rsub__(self, other):
        return add(_lift(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    # --- autodiff ------------------------------------------------------
    def backward(self, grad=None) -> None:
        backward(self, grad)


def _lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    """Wrap an op result; record the graph edge only when needed."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor, grad=None) -> None:
    """Populate ``.grad`` of every leaf reachable from ``loss``.

    ``loss`` must be a scalar unless an explicit output gradient is given.
    Repeated calls accumulate.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# --- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a = _lift(a, b.dtype if isinstance(b, Tensor) else None)
    b = _lift(b, a.dtype)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _lift(a, b.dtype if isinstance(b, Tensor) else None)
    b = _lift(b, a.dtype)
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # gradient at exactly 0 is 0
    return _make(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


# --- shape ----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def flatten(x: Tensor, start: int = -2) -> Tensor:
    """Merge dims from ``start`` to the end, row-major."""
    return reshape(x, (*x.shape[:start], -1))


# --- reductions -----------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), fn)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / count)


# --- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with broadcasting over leading dims."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def fn(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), fn)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    flat_x = x.data.reshape(-1, x.shape[-1])  # one GEMM instead of a batched loop
    out = flat_x @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(*lead, w.shape[1])
    parents = (x, w) if b is None else (x, w, b)

    def fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = flat_x.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, fn)


# --- fused neural-network primitives -------------------------------------


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction for stability."""
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (z,), fn)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit (population) variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape}/shift {shift.shape} do not match feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + shift.data

    def fn(g):
        gxhat = g * gain.data
        gx = None
        if x.requires_grad:
            gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, d).sum(axis=0)
        gs = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gs

    return _make(out.astype(x.dtype, copy=False), (x, gain, shift), fn)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """1-D cross-correlation: ``x`` (..., C_in, L), ``kernels`` (D, C_in, k) -> (..., D, N).

    N = floor((L - k) / stride) + 1.
    """
    *lead, c_in, length = x.shape
    d, kc, k = kernels.shape
    if kc != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels, kernels expect {kc}")
    if length < k:
        raise ShapeError(f"conv1d: sequence length {length} shorter than kernel size {k}")
    n = (length - k) // stride + 1
    # cols[..., j, c, a] = x[..., c, j*stride + a]
    idx = np.arange(n)[:, None] * stride + np.arange(k)[None, :]  # (N, k)
    cols = x.data[..., idx]  # (..., C_in, N, k)
    cols = np.moveaxis(cols, -3, -2).reshape(*lead, n, c_in * k)  # (..., N, C_in*k)
    wmat = kernels.data.reshape(d, c_in * k)
    out = cols @ wmat.T  # (..., N, D)
    if bias is not None:
        out = out + bias.data
    out = np.swapaxes(out, -1, -2)
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def fn(g):
        gt = np.swapaxes(g, -1, -2)  # (..., N, D)
        gx = None
        if x.requires_grad:
            gcols = (gt @ wmat).reshape(*lead, n, c_in, k)
            gx = np.zeros(x.shape, dtype=x.dtype)
            for a in range(k):
                # positions a, a+stride, ... receive gcols[..., :, :, a]
                gx[..., a : a + (n - 1) * stride + 1 : stride] += np.swapaxes(gcols[..., a], -1, -2)
        gk = (gt.reshape(-1, d).T @ cols.reshape(-1, c_in * k)).reshape(kernels.shape)
        if bias is None:
            return gx, gk
        return gx, gk, gt.reshape(-1, d).sum(axis=0)

    return _make(out, parents, fn)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared componentwise error."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    scale = 2.0 / diff.size
    return _make(np.asarray((diff * diff).mean()), (pred,), lambda g: (g * scale * diff,))
