"""Dense tensors with reverse-mode automatic differentiation.

Numpy holds the buffers; this module builds the graph eagerly during the
forward pass and walks it once, in reverse creation order, on ``backward``.
Creation order is a valid topological order because an op's output is always
created after its inputs, so descending node ids give a deterministic
reverse-topological schedule and bitwise-reproducible gradient accumulation.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FLOAT_DTYPES = (np.float32, np.float64)
_uid = itertools.count()

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class no_grad:
    """Context manager that disables graph construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    """N-dimensional float array with an optional autodiff record.

    ``data`` is a row-major numpy buffer (float32 or float64), ``grad`` is a
    same-shape buffer allocated lazily by ``backward``. Tensors produced by
    ops are treated as immutable; only ``grad`` and leaf ``data`` (through an
    optimizer) are ever rewritten.
    """

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._uid = next(_uid)

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _lift(value, dtype):
        if isinstance(value, Tensor):
            return value
        return Tensor(np.asarray(value, dtype=dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    # -- graph plumbing --------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every tracked tensor.

        Gradients add (+=) into existing ``grad`` buffers; call ``zero_grad``
        between independent passes. The walk visits reachable nodes in
        descending creation order, which fixes the accumulation order.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")

        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append(parent)

        nodes.sort(key=lambda t: t._uid, reverse=True)
        flows = {id(self): np.ones_like(self.data)}
        holders = {id(self): self}
        for node in nodes:
            gout = flows.get(id(node))
            if gout is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(gout)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flows:
                    flows[key] = flows[key] + pg
                else:
                    flows[key] = pg
                    holders[key] = parent

        for key, g in flows.items():
            node = holders[key]
            if not node.requires_grad:
                continue
            node.grad = np.array(g) if node.grad is None else node.grad + g

    # -- operators --------------------------------------------------------------

    def __add__(self, other):
        return add(self, self._lift(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, self._lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(self._lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, self._lift(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, self._lift(other, self.dtype))

    def __rtruediv__(self, other):
        return div(self._lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Named trainable leaf. ``name`` is stamped on registration in a model."""

    def __init__(self, data, name="", trainable=True, init_kind="zeros"):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.init_kind = init_kind


def _make(data, parents, backward_fn):
    """Wrap an op result; drops the graph record when grads are off."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same_dtype(a, b):
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"dtype mismatch: {a.data.dtype.name} vs {b.data.dtype.name}")


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (have, want) in enumerate(zip(g.shape, shape)) if want == 1 and have != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b):
    _check_same_dtype(a, b)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, (a, b), back)


def sub(a, b):
    _check_same_dtype(a, b)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, (a, b), back)


def mul(a, b):
    _check_same_dtype(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(a.data * b.data, (a, b), back)


def div(a, b):
    _check_same_dtype(a, b)

    def back(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _make(a.data / b.data, (a, b), back)


def neg(a):
    def back(g):
        return (-g,)

    return _make(-a.data, (a,), back)


def power(a, exponent):
    """Elementwise ``a ** exponent`` for a plain-number exponent.

    The local derivative is taken as 0 where it would be infinite (base 0
    with exponent < 1), so clamped-to-zero inputs stay on a flat gradient.
    """
    e = float(exponent)

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = e * a.data ** (e - 1.0)
        d = np.where(np.isfinite(d), d, 0.0)
        return (g * d,)

    return _make(a.data**e, (a,), back)


def matmul(a, b):
    _check_same_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-d operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), back)


# -- reductions and shape ops -----------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            expand = list(g.shape)
            for ax in sorted(axes):
                expand.insert(ax, 1)
            g = g.reshape(expand)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True),)

    return _make(out, (a,), back)


def tmean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.data.ndim)
    count = math.prod(a.data.shape[ax] for ax in axes)
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            expand = list(g.shape)
            for ax in sorted(axes):
                expand.insert(ax, 1)
            g = g.reshape(expand)
        scaled = g / count
        return (np.broadcast_to(scaled, a.data.shape).astype(a.data.dtype, copy=True),)

    return _make(out, (a,), back)


def reshape(a, shape):
    def back(g):
        return (g.reshape(a.data.shape),)

    return _make(a.data.reshape(shape), (a,), back)


def take(a, index):
    """Basic indexing (ints, slices, tuples thereof) with scatter-add backward."""
    out = a.data[index]

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _make(out, (a,), back)


def concat(tensors, axis=0):
    if not tensors:
        raise ValueError("concat of an empty sequence")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t)
    axis = axis % tensors[0].data.ndim
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=axis))

    return _make(out, tuple(tensors), back)


def stack(tensors, axis=0):
    """Stack along a new axis, built from reshape + concat."""
    expanded = []
    for t in tensors:
        shape = list(t.data.shape)
        shape.insert(axis % (t.data.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# -- pointwise nonlinearities ------------------------------------------------------


def exp(a):
    out = np.exp(a.data)

    def back(g):
        return (g * out,)

    return _make(out, (a,), back)


def log(a):
    def back(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), back)


def sqrt(a):
    out = np.sqrt(a.data)

    def back(g):
        return (g / (2.0 * out),)

    return _make(out, (a,), back)


def clip(a, lo, hi):
    """Clamp values; gradient passes through wherever the input is in range."""
    out = np.clip(a.data, lo, hi)

    def back(g):
        mask = (a.data >= lo) & (a.data <= hi)
        return (g * mask,)

    return _make(out, (a,), back)


def relu(a):
    def back(g):
        return (g * (a.data > 0),)

    return _make(np.maximum(a.data, 0), (a,), back)


def sigmoid(a):
    # exp(-|x|) based form avoids overflow on large negative inputs
    z = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = out.astype(a.data.dtype, copy=False)

    def back(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), back)


def softmax(a, axis):
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for ndim {a.data.ndim}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (a,), back)


# -- structured ops -----------------------------------------------------------------


def linear(x, w, b=None):
    """Affine map ``x @ w.T + b`` with ``w`` shaped (d_out, d_in).

    A 1-d ``x`` is treated as a single row and returned 1-d.
    """
    _check_same_dtype(x, w)
    squeeze = x.data.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    if xd.ndim != 2 or w.data.ndim != 2 or xd.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear: x {x.data.shape} incompatible with w {w.data.shape}")
    out = xd @ w.data.T
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise ShapeError(f"linear: bias shape {b.data.shape} != ({w.data.shape[0]},)")
        out = out + b.data
    if squeeze:
        out = out[0]

    def back(g):
        gm = g[None, :] if squeeze else g
        gx = gm @ w.data
        gw = gm.T @ xd
        grads = [gx[0] if squeeze else gx, gw]
        if b is not None:
            grads.append(gm.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-d cross-correlation.

    Args:
        x: input of shape (B, C_in, H, W) or (C_in, H, W).
        w: kernels of shape (C_out, C_in, kh, kw).
        b: optional per-output-channel bias (C_out,).
        stride, pad: spatial stride and symmetric zero padding.

    Output spatial dims are (H + 2*pad - kh) // stride + 1 per axis.
    """
    _check_same_dtype(x, w)
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be >= 1 and pad >= 0")
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and 4-d kernels")
    bs, cin, h, wd = xd.shape
    cout, wcin, kh, kw = w.data.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: kernel expects {wcin} input channels, input has {cin}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: output dims {ho}x{wo} not positive")

    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # im2col: one BLAS matmul does all output positions at once
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bs * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T).reshape(bs, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        if b.data.shape != (cout,):
            raise ShapeError(f"conv2d: bias shape {b.data.shape} != ({cout},)")
        out = out + b.data[:, None, None]
    if squeeze:
        out = out[0]

    def back(g):
        gb4 = g[None] if squeeze else g
        gmat = gb4.transpose(0, 2, 3, 1).reshape(bs * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(cout, cin, kh, kw)
        if stride == 1:
            # adjoint of valid correlation: full correlation with the kernel
            # flipped spatially and transposed over channels, one matmul
            gpad = np.pad(gb4, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = sliding_window_view(gpad, (kh, kw), axis=(2, 3))
            hp, wp = h + 2 * pad, wd + 2 * pad
            gcols = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(bs * hp * wp, cout * kh * kw)
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * kh * kw)
            gxp = (gcols @ wflip.T).reshape(bs, hp, wp, cin).transpose(0, 3, 1, 2)
        else:
            gcols = (gmat @ wmat).reshape(bs, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros((bs, cin, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[..., i, j]
        gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        if squeeze:
            gx = gx[0]
        grads = [gx, gw]
        if b is not None:
            grads.append(gb4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization over (B, H, W).

    Train mode normalizes with batch statistics (population variance) and
    folds them into the running buffers in place; eval mode normalizes with
    the running buffers, which the caller guarantees are populated.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm expects (B, C, H, W), got {x.data.shape}")
    if eps < 0:
        raise ValueError("batch_norm: eps must be non-negative")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have shape ({c},)")

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

    def back(g):
        dbeta = g.sum(axis=(0, 2, 3))
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        if training:
            # batch statistics depend on x, so their gradient flows back too
            gx = (gamma.data * inv)[:, None, None] * (
                g - (dbeta / n)[:, None, None] - xhat * (dgamma / n)[:, None, None]
            )
        else:
            gx = (gamma.data * inv)[:, None, None] * g
        return gx, dgamma, dbeta

    return _make(out, (x, gamma, beta), back)


def max_pool2(x):
    """2x2 max pooling with stride 2; gradient routes to the first max per window."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError(f"max_pool2 expects (B, C, H, W), got {x.data.shape}")
    bs, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 requires even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = xd.reshape(bs, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bs, c, h2, w2, 4)
    idx = win.argmax(axis=-1)  # argmax keeps the first maximum, row-major in-window
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def back(g):
        g4 = g[None] if squeeze else g
        gwin = np.zeros((bs, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(gwin, idx[..., None], g4[..., None], axis=-1)
        gx = gwin.reshape(bs, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bs, c, h, w)
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _make(out, (x,), back)


def avg_pool2(x):
    """2x2 mean pooling with stride 2."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    bs, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 requires even spatial dims, got {h}x{w}")
    out = xd.reshape(bs, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    if squeeze:
        out = out[0]

    def back(g):
        g4 = g[None] if squeeze else g
        gx = np.repeat(np.repeat(g4, 2, axis=2), 2, axis=3) * 0.25
        gx = gx.astype(g.dtype, copy=False)
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _make(out, (x,), back)


def _bilinear_axis(n):
    """Source indices and weights doubling a length-n axis (corners not aligned)."""
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    w1 = src - i0
    return i0, i1, 1.0 - w1, w1


_upsample_matrices = {}


def _upsample_matrix(n, dtype):
    """Dense (2n, n) interpolation matrix for one doubled axis, cached."""
    key = (n, np.dtype(dtype).name)
    mat = _upsample_matrices.get(key)
    if mat is None:
        i0, i1, w0, w1 = _bilinear_axis(n)
        mat = np.zeros((2 * n, n), dtype=dtype)
        rows = np.arange(2 * n)
        np.add.at(mat, (rows, i0), w0.astype(dtype))
        np.add.at(mat, (rows, i1), w1.astype(dtype))
        _upsample_matrices[key] = mat
    return mat


def upsample_bilinear2(x):
    """Double both spatial dims by bilinear interpolation.

    The map is linear and separable, so both directions are matmuls with
    small per-axis interpolation matrices.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    bs, c, h, w = xd.shape
    ah = _upsample_matrix(h, xd.dtype)
    aw = _upsample_matrix(w, xd.dtype)
    out = ah @ xd @ aw.T
    if squeeze:
        out = out[0]

    def back(g):
        g4 = g[None] if squeeze else g
        gx = ah.T @ g4 @ aw
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _make(out, (x,), back)


def global_avg_pool(x):
    """Mean over the two trailing spatial axes: (..., C, H, W) -> (..., C)."""
    if x.data.ndim < 3:
        raise ShapeError(f"global_avg_pool expects at least 3 dims, got {x.data.shape}")
    h, w = x.data.shape[-2:]
    if h * w == 0:
        raise ShapeError("global_avg_pool: empty spatial extent")
    return tmean(x, axis=(-2, -1))


# -- verification ---------------------------------------------------------------


def check_gradients(f, inputs, h=1e-5):
    """Compare analytic gradients of a scalar function against central differences.

    Args:
        f: callable mapping the input tensors to a scalar Tensor.
        inputs: list of float64 Tensors; each is perturbed coordinate-wise.
        h: finite-difference step.

    Returns:
        Max over all coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("check_gradients requires float64 inputs")
        t.requires_grad = True
        t.zero_grad()

    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError("check_gradients requires a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            aflat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f(*inputs).data)
                flat[i] = orig - h
                fm = float(f(*inputs).data)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * h)
                err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]), abs(numeric))
                worst = max(worst, err)
    return worst
