"""Dense tensors with reverse-mode automatic differentiation.

Small tape-based engine sized for single-channel square images up to
128 px. Every differentiable operation builds a node that remembers its
inputs and a closure computing the local vector-Jacobian product;
``Tensor.backward()`` walks the tape in reverse topological order and
accumulates gradients into ``.grad`` buffers.

Precision is a process-wide switch: float64 for the test suite (tight
finite-difference tolerances), float32 for training runs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NoGraph, NonFinite, ShapeMismatch

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the engine precision ("float32" or "float64")."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """N-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, prev, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in prev)
        out._prev = tuple(p for p in prev if p.requires_grad) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Leaf tensor sharing this tensor's values, cut from the tape."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._backward = None
        out._prev = ()
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFinite(f"{what} contains NaN/Inf")
        return self

    def _accumulate(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(delta, dtype=self.data.dtype, copy=True)
        else:
            self.grad += delta

    # -- autodiff driver ------------------------------------------------------

    def backward(self) -> None:
        """Populate ``.grad`` of every reachable requires_grad tensor.

        Repeated calls without ``zero_grad`` accumulate. The root must be a
        scalar produced by a recorded computation.
        """
        if self.data.size != 1:
            raise NoGraph("backward() requires a scalar loss")
        if not self.requires_grad or self._backward is None and not self._prev:
            raise NoGraph("loss is not attached to a recorded computation")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(-self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: {a.data.shape} vs {b.data.shape}")


# -- elementwise arithmetic ---------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _wrap(b)
    if b.data.ndim != 0 and a.data.ndim != 0:
        _same_shape(a, b, "add")
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g if a.data.shape == g.shape else np.sum(g))
        if b.requires_grad:
            b._accumulate(g if b.data.shape == g.shape else np.sum(g))

    return Tensor._node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor._node(data, (a, b), backward)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(g):
        a._accumulate(g * s)

    return Tensor._node(data, (a,), backward)


def square(a: Tensor) -> Tensor:
    data = a.data * a.data

    def backward(g):
        a._accumulate(g * 2.0 * a.data)

    return Tensor._node(data, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return Tensor._node(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return Tensor._node(data, (a,), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values; gradient is zero outside [lo, hi]."""
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        a._accumulate(g * mask)

    return Tensor._node(data, (a,), backward)


# -- reductions ---------------------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return Tensor._node(data, (a,), backward)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.mean(), dtype=a.data.dtype)

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.data.shape))

    return Tensor._node(data, (a,), backward)


# -- activations ----------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return Tensor._node(data, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    data = np.where(a.data > 0, a.data, a.data * slope)

    def backward(g):
        a._accumulate(g * np.where(a.data > 0, 1.0, slope))

    return Tensor._node(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - data * data))

    return Tensor._node(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * data * (1.0 - data))

    return Tensor._node(data, (a,), backward)


# -- structural ops -------------------------------------------------------------

def concat(a: Tensor, b: Tensor, axis: int = 1) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ShapeMismatch(f"concat: rank {a.data.ndim} vs {b.data.ndim}")
    data = np.concatenate([a.data, b.data], axis=axis)
    split = a.data.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [split], axis=axis)
        if a.requires_grad:
            a._accumulate(ga)
        if b.requires_grad:
            b._accumulate(gb)

    return Tensor._node(data, (a, b), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; also serves as the generator's noise source."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} out of range")
    if p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    mask = mask.astype(a.data.dtype)
    data = a.data * mask

    def backward(g):
        a._accumulate(g * mask)

    return Tensor._node(data, (a,), backward)


# -- convolution ----------------------------------------------------------------

def conv_out_side(side: int, kernel: int, stride: int, pad: int) -> int:
    return (side + 2 * pad - kernel) // stride + 1


def conv_transpose_out_side(side: int, kernel: int, stride: int, pad: int,
                            out_pad: int = 0) -> int:
    return (side - 1) * stride - 2 * pad + kernel + out_pad


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols: np.ndarray, n: int, c: int, h: int, w: int,
            kh: int, kw: int, stride: int, pad: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add column windows back onto an (n, c, h, w) image."""
    acc = np.zeros((n, c, h + 2 * pad + kh, w + 2 * pad + kw), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            acc[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols6[:, :, i, j]
    return acc[:, :, pad:pad + h, pad:pad + w]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation. x: (N,C,H,W), w: (OC,C,KH,KW), b: (OC,)."""
    n, c, h, wd = x.data.shape
    oc, cin, kh, kw = w.data.shape
    if cin != c:
        raise ShapeMismatch(f"conv2d: input channels {c} != kernel channels {cin}")
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ShapeMismatch(f"conv2d: input {h}x{wd} too small for kernel {kh}x{kw}")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(oc, -1)
    out = np.matmul(wmat, cols)                       # (N, OC, OH*OW)
    if b is not None:
        out += b.data[:, None]
    data = out.reshape(n, oc, oh, ow)
    prev = (x, w) if b is None else (x, w, b)

    def backward(g):
        gflat = g.reshape(n, oc, oh * ow)
        if w.requires_grad:
            w._accumulate(np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b._accumulate(gflat.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gflat)          # (N, C*KH*KW, OH*OW)
            x._accumulate(_col2im(dcols, n, c, h, wd, kh, kw, stride, pad, oh, ow))

    return Tensor._node(data, prev, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
                     pad: int = 0, out_pad: int = 0) -> Tensor:
    """Transposed convolution. x: (N,C,H,W), w: (C,OC,KH,KW), b: (OC,)."""
    n, c, h, wd = x.data.shape
    cin, oc, kh, kw = w.data.shape
    if cin != c:
        raise ShapeMismatch(f"conv_transpose2d: input channels {c} != kernel channels {cin}")
    if out_pad >= stride:
        raise ShapeMismatch(f"conv_transpose2d: out_pad {out_pad} must be < stride {stride}")
    oh = conv_transpose_out_side(h, kh, stride, pad, out_pad)
    ow = conv_transpose_out_side(wd, kw, stride, pad, out_pad)
    wmat = w.data.reshape(c, oc * kh * kw)
    xflat = x.data.reshape(n, c, h * wd)
    cols = np.matmul(wmat.T, xflat)                   # (N, OC*KH*KW, H*W)
    data = _col2im(cols, n, oc, oh, ow, kh, kw, stride, pad, h, wd)
    if b is not None:
        data += b.data[None, :, None, None]
    prev = (x, w) if b is None else (x, w, b)

    def backward(g):
        # im2col of the output gradient with the same (kernel, stride, pad)
        # lands exactly on the h*wd input positions because out_pad < stride.
        gcols, _, _ = _im2col(g, kh, kw, stride, pad)
        if x.requires_grad:
            x._accumulate(np.matmul(wmat, gcols).reshape(n, c, h, wd))
        if w.requires_grad:
            w._accumulate(np.matmul(xflat, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return Tensor._node(data, prev, backward)


# -- normalization ----------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the running buffers are updated in place; eval mode
    normalizes with the stored running statistics.
    """
    if x.data.ndim != 4:
        raise ShapeMismatch(f"batch_norm expects (N,C,H,W), got {x.data.shape}")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            if training:
                gsum = g.sum(axis=axes)
                gx_sum = (g * xhat).sum(axis=axes)
                dx = (gamma.data * inv_std)[None, :, None, None] * (
                    g - gsum[None, :, None, None] / m - xhat * gx_sum[None, :, None, None] / m
                )
            else:
                dx = (gamma.data * inv_std)[None, :, None, None] * g
            x._accumulate(dx)

    return Tensor._node(data, (x, gamma, beta), backward)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over (H, W); no affine terms."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"instance_norm expects (N,C,H,W), got {x.data.shape}")
    axes = (2, 3)
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    m = x.data.shape[2] * x.data.shape[3]

    def backward(g):
        gsum = g.sum(axis=axes, keepdims=True)
        gx_sum = (g * xhat).sum(axis=axes, keepdims=True)
        x._accumulate(inv_std * (g - gsum / m - xhat * gx_sum / m))

    return Tensor._node(xhat, (x,), backward)
