"""Dense float64 tensors with reverse-mode automatic differentiation.

The operator set is deliberately small: elementwise arithmetic with numpy
broadcasting, a few reductions, and the four structured layers the codec
needs (strided cross-correlation, its transpose, and the divisive
normalization pair).  Every differentiable op records its inputs and a
backward closure on the result tensor; `backward()` replays the graph in
reverse topological order.

Conventions:
  - all data is float64, row-major;
  - conv2d is cross-correlation (no kernel flip);
  - weights are laid out (maps_out, maps_in, k, k) for conv2d, and a
    transpose convolution reusing that same array is its exact adjoint.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConstraintError, DomainError, NumericError, ShapeError, UsageError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus an optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self, params: Sequence["Tensor"] | None = None) -> None:
        backward(self, params)


def as_tensor(x) -> Tensor:
    """Wrap plain data as a constant tensor; pass tensors through."""
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], bw) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape` by summation."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")


def backward(loss: Tensor, params: Sequence[Tensor] | None = None):
    """Populate gradients of every tensor reachable from `loss`.

    The loss must be scalar.  Parameters listed in `params` that are not
    reachable from the loss receive an all-zero gradient, and the per-
    parameter gradient map is returned for convenience.
    """
    if loss.data.size != 1:
        raise UsageError("backward requires a scalar loss")
    # Iterative post-order walk; nodes end up inputs-first.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)
    if params is None:
        return None
    grads = {}
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        grads[p] = p.grad
    return grads


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------
# Elementwise primitives (numpy broadcasting, gradients reduced back)
# ---------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        _accum(a, g * out)

    return _node(out, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")
    out = np.log(a.data)

    def bw(g):
        _accum(a, g / a.data)

    return _node(out, (a,), bw)


def absolute(a) -> Tensor:
    # Subgradient 0 at the kink.
    a = as_tensor(a)
    s = np.sign(a.data)

    def bw(g):
        _accum(a, g * s)

    return _node(np.abs(a.data), (a,), bw)


def sign(a) -> Tensor:
    """Elementwise sign, detached from the graph (zero gradient)."""
    a = as_tensor(a)
    return Tensor(np.sign(a.data))


def maximum(a, floor: float) -> Tensor:
    """Clamp from below by a scalar; gradient is zero where the floor binds."""
    a = as_tensor(a)
    mask = a.data > floor

    def bw(g):
        _accum(a, g * mask)

    return _node(np.maximum(a.data, floor), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    orig = a.data.shape

    def bw(g):
        _accum(a, g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), bw)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) else np.full_like(a.data, g))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _node(out, (a,), bw)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / out.size

    def bw(g):
        if axis is None:
            _accum(a, np.full_like(a.data, float(g) / n))
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape) / n)

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------
# Structured layers
# ---------------------------------------------------------------------

def _conv_out_extent(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def conv2d(x, w, b, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided 2-D cross-correlation with per-output-channel bias.

    x: (batch, c_in, h, w); w: (c_out, c_in, k, k); b: (c_out,).
    Output spatial extent is floor((h + 2*pad - k)/stride) + 1.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    n, cin, h, wd = x.data.shape
    cout, cin_w, k, k2 = w.data.shape
    if k != k2:
        raise ShapeError("conv2d kernels must be square")
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    if b.data.shape != (cout,):
        raise ShapeError("conv2d bias must have one entry per output channel")
    if stride < 1 or pad < 0:
        raise ShapeError("conv2d requires stride >= 1 and pad >= 0")
    ho = _conv_out_extent(h, k, stride, pad)
    wo = _conv_out_extent(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d output would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bcijuv,ocuv->boij", win, w.data, optimize=True)
    out += b.data[None, :, None, None]
    _check_finite(out, "conv2d")

    def bw(g):
        if w.requires_grad:
            _accum(w, np.einsum("boij,bcijuv->ocuv", g, win, optimize=True))
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            top = (ho - 1) * stride + 1
            left = (wo - 1) * stride + 1
            for di in range(k):
                for dj in range(k):
                    contrib = np.tensordot(g, w.data[:, :, di, dj], axes=([1], [0]))
                    gxp[:, :, di:di + top:stride, dj:dj + left:stride] += np.moveaxis(contrib, 3, 1)
            if pad:
                gxp = gxp[:, :, pad:pad + h, pad:pad + wd]
            _accum(x, gxp)

    return _node(out, (x, w, b), bw)


def tconv2d(x, w, b, stride: int = 1, pad: int = 0, out_size: tuple[int, int] | None = None) -> Tensor:
    """Transpose of conv2d's linear map (scatter-accumulate), plus bias.

    x: (batch, c_in, h, w); w: (c_in, c_out, k, k); b: (c_out,).
    Sharing a conv2d weight array makes this its exact adjoint.  The
    default output extent is (h-1)*stride - 2*pad + k; `out_size` selects
    any larger extent consistent with the matching forward convolution
    (needed to invert strided convs whose input was not an exact multiple).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("tconv2d expects 4-D input and weight")
    n, cin, h, wd = x.data.shape
    cin_w, cout, k, k2 = w.data.shape
    if k != k2:
        raise ShapeError("tconv2d kernels must be square")
    if cin != cin_w:
        raise ShapeError(f"tconv2d channel mismatch: input {cin}, weight {cin_w}")
    if b.data.shape != (cout,):
        raise ShapeError("tconv2d bias must have one entry per output channel")
    if stride < 1 or pad < 0:
        raise ShapeError("tconv2d requires stride >= 1 and pad >= 0")
    if out_size is None:
        oh = (h - 1) * stride - 2 * pad + k
        ow = (wd - 1) * stride - 2 * pad + k
    else:
        oh, ow = out_size
    if oh < 1 or ow < 1:
        raise ShapeError("tconv2d output would be empty")
    if _conv_out_extent(oh, k, stride, pad) != h or _conv_out_extent(ow, k, stride, pad) != wd:
        raise ShapeError(f"tconv2d out_size ({oh},{ow}) inconsistent with input ({h},{wd})")

    buf = np.zeros((n, cout, oh + 2 * pad, ow + 2 * pad))
    top = (h - 1) * stride + 1
    left = (wd - 1) * stride + 1
    for di in range(k):
        for dj in range(k):
            contrib = np.tensordot(x.data, w.data[:, :, di, dj], axes=([1], [0]))
            buf[:, :, di:di + top:stride, dj:dj + left:stride] += np.moveaxis(contrib, 3, 1)
    out = buf[:, :, pad:pad + oh, pad:pad + ow]
    out = out + b.data[None, :, None, None]
    _check_finite(out, "tconv2d")

    def bw(g):
        if b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad or w.requires_grad:
            gbuf = np.zeros((n, cout, oh + 2 * pad, ow + 2 * pad))
            gbuf[:, :, pad:pad + oh, pad:pad + ow] = g
            gwin = sliding_window_view(gbuf, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
            if x.requires_grad:
                _accum(x, np.einsum("bcijuv,ocuv->boij", gwin, w.data, optimize=True))
            if w.requires_grad:
                _accum(w, np.einsum("boij,bcijuv->ocuv", x.data, gwin, optimize=True))

    return _node(out, (x, w, b), bw)


def _norm_pool(x: np.ndarray, beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    sq = x * x
    return np.einsum("bkij,ck->bcij", sq, gamma, optimize=True) + beta[None, :, None, None]


def _check_norm_args(x: Tensor, beta: Tensor, gamma: Tensor, name: str) -> int:
    if x.data.ndim != 4:
        raise ShapeError(f"{name} expects a 4-D input")
    c = x.data.shape[1]
    if beta.data.shape != (c,):
        raise ShapeError(f"{name} beta must have shape ({c},)")
    if gamma.data.shape != (c, c):
        raise ShapeError(f"{name} gamma must have shape ({c},{c})")
    if np.any(beta.data <= 0.0):
        raise ConstraintError(f"{name} beta must stay strictly positive")
    return c


def gdn(x, beta, gamma) -> Tensor:
    """Divisive normalization: z_c = y_c / sqrt(beta_c + sum_k gamma_ck y_k^2)."""
    x, beta, gamma = as_tensor(x), as_tensor(beta), as_tensor(gamma)
    _check_norm_args(x, beta, gamma, "gdn")
    norm = _norm_pool(x.data, beta.data, gamma.data)
    d = np.sqrt(norm)
    out = x.data / d
    _check_finite(out, "gdn")

    def bw(g):
        t = g * out / norm  # g * y / d^3
        if x.requires_grad:
            gx = g / d - x.data * np.einsum("bcij,ck->bkij", t, gamma.data, optimize=True)
            _accum(x, gx)
        if beta.requires_grad:
            _accum(beta, -0.5 * t.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            _accum(gamma, -0.5 * np.einsum("bcij,bkij->ck", t, x.data * x.data, optimize=True))

    return _node(out, (x, beta, gamma), bw)


def igdn(x, beta, gamma) -> Tensor:
    """Multiplicative inverse of gdn: z_c = y_c * sqrt(beta_c + sum_k gamma_ck y_k^2)."""
    x, beta, gamma = as_tensor(x), as_tensor(beta), as_tensor(gamma)
    _check_norm_args(x, beta, gamma, "igdn")
    norm = _norm_pool(x.data, beta.data, gamma.data)
    d = np.sqrt(norm)
    out = x.data * d
    _check_finite(out, "igdn")

    def bw(g):
        t = g * x.data / d
        if x.requires_grad:
            gx = g * d + x.data * np.einsum("bcij,ck->bkij", t, gamma.data, optimize=True)
            _accum(x, gx)
        if beta.requires_grad:
            _accum(beta, 0.5 * t.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            _accum(gamma, 0.5 * np.einsum("bcij,bkij->ck", t, x.data * x.data, optimize=True))

    return _node(out, (x, beta, gamma), bw)
