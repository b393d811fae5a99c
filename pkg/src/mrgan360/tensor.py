"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap a numpy array plus an optional tape node (parents + a backward
closure).  Every op records enough to run one reverse sweep; the sweep
accumulates gradients additively into every reachable tensor that either
requires a gradient or sits in the interior of the graph, then tears the
tape down.  Layout is channels-first row-major throughout.

Precision is carried by the numpy dtype of the data: float32 is the
training default, gradient checks build float64 graphs.  There is no
separate type for either.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float32

# Active branch recorders.  Piecewise ops (relu, leaky_relu, maximum,
# max_pool2d) append their branch pattern here so a finite-difference
# probe can tell whether a perturbation crossed a kink.  Empty in normal
# operation; the check in _record_branch keeps the cost at one truth test.
_branch_hooks: list = []


def _record_branch(pattern: np.ndarray):
    if _branch_hooks:
        blob = np.ascontiguousarray(pattern).tobytes()
        for log in _branch_hooks:
            log.append(blob)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make numpy defer mixed ndarray/Tensor arithmetic to our operators
    __array_ufunc__ = None
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # -- basics --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, other):
        return mul(self, power(_as_tensor(other), -1.0))

    def __rtruediv__(self, other):
        return mul(_as_tensor(other), power(self, -1.0))

    def __pow__(self, exponent):
        return power(self, exponent)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = tuple(parents)
    out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    """Add a gradient contribution to ``t`` (no-op for detached leaves)."""
    if t._backward is None and not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def assert_finite(t: Tensor, context: str = "tensor"):
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"{context} contains NaN or Inf")


# -- elementwise ops ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    exponent = float(exponent)
    out_data = a.data ** exponent

    def backward(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient is zero at and below it."""
    a = _as_tensor(a)
    mask = a.data > floor
    _record_branch(mask)

    def backward(g):
        _accum(a, g * mask)

    return _make(np.maximum(a.data, floor), (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    _record_branch(mask)

    def backward(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    """Leaky ReLU; the derivative at exactly zero is ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ShapeError(f"leaky_relu alpha must be in (0,1), got {alpha}")
    a = _as_tensor(a)
    positive = a.data > 0
    _record_branch(positive)
    slope = np.where(positive, 1.0, alpha)

    def backward(g):
        _accum(a, g * slope)

    return _make(np.where(a.data > 0, a.data, alpha * a.data), (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def activation(a, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, alpha)
    if kind == "tanh":
        return tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ShapeError(f"unknown activation kind {kind!r}")


# -- reductions / reshaping ---------------------------------------------

def tsum(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(np.asarray(a.data.sum()), (a,), backward)


def tmean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape))

    return _make(np.asarray(a.data.mean()), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.data.shape

    def backward(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tensors, backward)


# -- neural-net ops ------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           dilation: int = 1) -> Tensor:
    """Dilated 2-D convolution with same-size zero padding.

    ``x`` is (C_in, H, W), ``kernel`` is (C_out, C_in, k, k); the output
    keeps the input's spatial extent, out-of-range reads are zero.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if dilation < 1:
        raise ShapeError(f"dilation must be >= 1, got {dilation}")
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects (C,H,W) input and (Co,Ci,k,k) kernel, got "
            f"{x.data.shape} and {kernel.data.shape}")
    c_in, h, w = x.data.shape
    c_out, kc_in, kh, kw = kernel.data.shape
    if kc_in != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c_in}, "
                         f"kernel expects {kc_in}")
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    k = kh
    center = k // 2
    pad_before = center * dilation
    pad_after = (k - 1 - center) * dilation
    xp = np.zeros((c_in, h + pad_before + pad_after,
                   w + pad_before + pad_after), dtype=x.data.dtype)
    xp[:, pad_before:pad_before + h, pad_before:pad_before + w] = x.data

    def _patches(arr: np.ndarray) -> np.ndarray:
        """(C_in*k*k, H*W) view-copy of all kernel taps."""
        s0, s1, s2 = arr.strides
        view = np.lib.stride_tricks.as_strided(
            arr, shape=(c_in, k, k, h, w),
            strides=(s0, s1 * dilation, s2 * dilation, s1, s2))
        return view.reshape(c_in * k * k, h * w)

    k_mat = kernel.data.reshape(c_out, c_in * k * k)
    out_data = (k_mat @ _patches(xp)).reshape(c_out, h, w)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (c_out,):
            raise ShapeError(f"conv2d bias must be ({c_out},), "
                             f"got {bias.data.shape}")
        out_data += bias.data[:, None, None]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g_mat = g.reshape(c_out, h * w)
        gk = (g_mat @ _patches(xp).T).reshape(c_out, c_in, k, k)
        gxp = np.zeros_like(xp)
        contrib = (kernel.data.reshape(c_out, c_in, k * k).transpose(2, 1, 0)
                   @ g_mat).reshape(k, k, c_in, h, w)
        for i in range(k):
            for j in range(k):
                gxp[:, i * dilation:i * dilation + h,
                    j * dilation:j * dilation + w] += contrib[i, j]
        _accum(x, gxp[:, pad_before:pad_before + h, pad_before:pad_before + w])
        _accum(kernel, gk)
        if bias is not None:
            _accum(bias, g.sum(axis=(1, 2)))

    return _make(out_data, parents, backward)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the
    first window cell in scan order.  Odd trailing rows/cols are dropped."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"max_pool2d expects (C,H,W), got {x.data.shape}")
    c, h, w = x.data.shape
    if h < 2 or w < 2:
        raise ShapeError(f"max_pool2d needs H,W >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = x.data[:, :h2 * 2, :w2 * 2].reshape(c, h2, 2, w2, 2)
    win = win.transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    _record_branch(idx)
    out_data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :h2 * 2, :w2 * 2] = (
            gwin.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4)
            .reshape(c, h2 * 2, w2 * 2))
        _accum(x, gx)

    return _make(out_data, (x,), backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """out = weight @ x + bias for a flat input vector."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 1:
        raise ShapeError(f"fully_connected input must be flat, "
                         f"got {x.data.shape}")
    m, n = weight.data.shape
    if x.data.shape[0] != n:
        raise ShapeError(f"fully_connected length mismatch: input {x.data.shape[0]}, "
                         f"weight expects {n}")
    if bias.data.shape != (m,):
        raise ShapeError(f"fully_connected bias must be ({m},), "
                         f"got {bias.data.shape}")

    def backward(g):
        _accum(x, weight.data.T @ g)
        _accum(weight, np.outer(g, x.data))
        _accum(bias, g)

    return _make(weight.data @ x.data + bias.data, (x, weight, bias), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (C,H,W) -> (C,)."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool expects (C,H,W), got {x.data.shape}")
    _, h, w = x.data.shape

    def backward(g):
        _accum(x, np.broadcast_to(g[:, None, None] / (h * w), x.data.shape))

    return _make(x.data.mean(axis=(1, 2)), (x,), backward)


# -- the reverse sweep ---------------------------------------------------

def backward(loss: Tensor):
    """Run reverse-mode differentiation from a scalar loss.

    Gradients accumulate additively on every tensor in the graph that
    requires one; the tape is consumed (parents and closures dropped).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape "
                         f"{loss.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in topo:
        node._parents = ()
        node._backward = None


def zero_grads(tensors: Iterable[Tensor]):
    for t in tensors:
        t.grad = None
