"""Reverse-mode automatic differentiation over dense float32 arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure computing input gradients from the output gradient. Tensors carry
a monotonically increasing creation index, so the reverse of creation order
is a topological order of any graph (an op can only consume tensors that
already exist); :func:`backward` replays closures in that order exactly once
per node and accumulates gradients additively, so a tensor used twice
receives the sum of both path gradients.

Design notes:
  * N-d tensor data is float32 end to end; scalar reductions (sum/mean) carry
    double precision, as accumulators commonly do in 32-bit training, so loss
    values and finite-difference checks are not limited by the ulp of a large
    sum. Gradients are cast back to float32 at the array boundary.
  * conv2d uses the cross-correlation convention (no kernel flip).
  * maxpool2 breaks ties toward the first element in row-major window order.
  * every op validates that its output is finite and raises otherwise.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NotScalarError(ValueError):
    """backward() requires a single-element loss tensor."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class Tensor:
    """A float32 array plus an optional gradient and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_order")
    _counter = itertools.count()

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not (arr.ndim == 0 and arr.dtype == np.float64):
            arr = arr.astype(np.float32, copy=False)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor holds NaN or Inf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn = None
        self._order = next(Tensor._counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.float32(x))


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Adjoint of numpy broadcasting: sum g down to `shape`."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcastable(a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatchError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise ops -------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b)
    out_data = a.data + b.data

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(out_data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b)
    out_data = a.data * b.data

    def backward_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(out_data, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b)
    out_data = a.data / b.data

    def backward_fn(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(out_data, (a, b), backward_fn)


def scale(x: Tensor, c: float) -> Tensor:
    # a python scalar is dtype-weak: float32 arrays stay float32 and float64
    # reduction scalars keep full precision
    c = float(c)

    def backward_fn(g):
        _accum(x, g * np.float32(c) if g.dtype == np.float32 else g * c)

    return _result(x.data * c, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, np.float32(0.0))

    def backward_fn(g):
        _accum(x, g * (x.data > 0))

    return _result(out_data, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def backward_fn(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return _result(out_data, (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)  # non-positive input trips the finiteness check

    def backward_fn(g):
        _accum(x, g / x.data)

    return _result(out_data, (x,), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    out_data = np.float64(x.data.sum(dtype=np.float64))

    def backward_fn(g):
        _accum(x, np.broadcast_to(np.float32(g), x.shape))

    return _result(out_data, (x,), backward_fn)


def tensor_mean(x: Tensor) -> Tensor:
    n = x.size
    out_data = np.float64(x.data.sum(dtype=np.float64) / n)

    def backward_fn(g):
        _accum(x, np.broadcast_to(np.float32(g / n), x.shape))

    return _result(out_data, (x,), backward_fn)


def concat_channels(*xs: Tensor) -> Tensor:
    if len(xs) < 2:
        raise ShapeMismatchError("concat needs at least two tensors")
    ref = xs[0]
    for t in xs[1:]:
        if t.data.ndim != 4 or ref.data.ndim != 4:
            raise ShapeMismatchError("concat_channels expects NCHW tensors")
        if t.shape[0] != ref.shape[0] or t.shape[2:] != ref.shape[2:]:
            raise ShapeMismatchError(f"concat N/H/W mismatch: {ref.shape} vs {t.shape}")
    out_data = np.concatenate([t.data for t in xs], axis=1)
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def backward_fn(g):
        for t, gi in zip(xs, np.split(g, splits, axis=1)):
            _accum(t, gi)

    return _result(out_data, xs, backward_fn)


# -- structured ops --------------------------------------------------------

def _require_nchw(x: Tensor, name: str):
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"{name} expects an NCHW tensor, got shape {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIHW weights."""
    _require_nchw(x, "conv2d input")
    _require_nchw(w, "conv2d weight")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeMismatchError(f"weight expects {ci} input channels, input has {c}")
    if b is not None and b.shape != (co,):
        raise ShapeMismatchError(f"bias shape {b.shape} != ({co},)")
    if stride < 1:
        raise ShapeMismatchError(f"stride must be >= 1, got {stride}")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeMismatchError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    out2 = cols @ w.data.reshape(co, -1).T
    if b is not None:
        out2 += b.data
    out_data = out2.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)

    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, co)
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=0))
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                    gw[:, :, i, j] += np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
            _accum(w, gw)
        if x.requires_grad:
            gxp = np.zeros((n, c, hp, wp), dtype=np.float32)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, w.data[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        contrib.transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
            _accum(x, gx)

    return _result(out_data, parents, backward_fn)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed convolution; weights are (Cin, Cout, kh, kw).

    Output spatial size is (H-1)*stride + kh. The forward pass is exactly the
    adjoint of conv2d with the channel axes of the weight swapped, which the
    tests pin down via the inner-product identity.
    """
    _require_nchw(x, "conv_transpose2d input")
    _require_nchw(w, "conv_transpose2d weight")
    n, c, h, wd = x.shape
    ci, co, kh, kw = w.shape
    if ci != c:
        raise ShapeMismatchError(f"weight expects {ci} input channels, input has {c}")
    if b is not None and b.shape != (co,):
        raise ShapeMismatchError(f"bias shape {b.shape} != ({co},)")
    if stride < 1:
        raise ShapeMismatchError(f"stride must be >= 1, got {stride}")
    ho = (h - 1) * stride + kh
    wo = (wd - 1) * stride + kw

    out_data = np.zeros((n, co, ho, wo), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(x.data, w.data[:, :, i, j], axes=([1], [0]))
            out_data[:, :, i : i + stride * h : stride, j : j + stride * wd : stride] += (
                contrib.transpose(0, 3, 1, 2)
            )
    if b is not None:
        out_data += b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    gs = g[:, :, i : i + stride * h : stride, j : j + stride * wd : stride]
                    gw[:, :, i, j] += np.tensordot(x.data, gs, axes=([0, 2, 3], [0, 2, 3]))
            _accum(w, gw)
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gs = g[:, :, i : i + stride * h : stride, j : j + stride * wd : stride]
                    gx += np.tensordot(gs, w.data[:, :, i, j], axes=([1], [1])).transpose(
                        0, 3, 1, 2
                    )
            _accum(x, gx)

    return _result(out_data, parents, backward_fn)


class OddDimsError(ShapeMismatchError):
    """maxpool2 requires even spatial dims."""


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient goes to the first max per window."""
    _require_nchw(x, "maxpool2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddDimsError(f"spatial dims must be even, got {h}x{w}")
    win = (
        x.data.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = win.argmax(axis=-1)
    out_data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = (
            gwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        _accum(x, gx)

    return _result(out_data, (x,), backward_fn)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Replicate every pixel 2x2; gradient sums the four children."""
    _require_nchw(x, "upsample_nearest2")
    n, c, h, w = x.shape
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward_fn(g):
        _accum(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _result(out_data, (x,), backward_fn)


# -- backward pass ---------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from `loss`."""
    if loss.data.size != 1:
        raise NotScalarError(f"loss must be a single element, got shape {loss.shape}")
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._order, reverse=True)
    loss.grad = np.ones_like(loss.data)
    for t in nodes:
        if t._backward_fn is not None and t.grad is not None:
            t._backward_fn(t.grad)


def finite_diff_check(f, x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between recorded and central-difference gradients.

    Relative error per coordinate is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    Inputs should be O(1)-scaled and away from non-smooth points (relu kinks
    within eps of zero make the finite difference itself wrong).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.zero_grad()
    out = f(x)
    backward(out)
    g_ad = x.grad.copy().astype(np.float64).ravel()

    flat = x.data.ravel()
    g_fd = np.empty_like(g_ad)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = float(f(x).data)
        flat[k] = orig - eps
        fm = float(f(x).data)
        flat[k] = orig
        g_fd[k] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
    return float(np.max(np.abs(g_ad - g_fd) / denom))
