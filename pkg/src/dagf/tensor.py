"""Minimal reverse-mode autodiff over numpy arrays.

Tensors are N x C x H x W float arrays. Every primitive records a closure
that maps the output gradient to gradients of its inputs; ``backward`` walks
the recorded graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
from functools import lru_cache

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def abs(self):
        return tabs(self)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        for node, g in _propagate(self, np.asarray(grad, dtype=self.dtype)).items():
            if node._backward is None and node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _result(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _toposort(root):
    order, seen = [], set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def _propagate(root, grad):
    """Return {node: gradient} for every node reachable from ``root``."""
    grads = {id(root): grad}
    nodes = {}
    for node in _toposort(root):
        g = grads.get(id(node))
        if g is None:
            continue
        nodes[id(node)] = node
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return {nodes[k]: grads[k] for k in nodes}


def backward(loss, params):
    """Gradients of a scalar ``loss`` keyed by parameter name.

    Parameters the loss does not depend on receive zero gradients. ``.grad``
    attributes are left untouched.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    found = _propagate(loss, np.ones_like(loss.data)) if loss.requires_grad else {}
    by_id = {id(t): g for t, g in found.items()}
    return {
        name: by_id.get(id(p), np.zeros_like(p.data)).reshape(p.shape)
        for name, p in params.items()
    }


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------
def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    da, db = a.data, b.data
    return _result(da * db, (a, b),
                   lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)))


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def tabs(a):
    s = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * s,))


def tsum(a):
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a):
    shape, n = a.shape, a.data.size
    return _result(np.asarray(a.data.mean()), (a,),
                   lambda g: (np.full(shape, g / n, dtype=a.dtype),))


def sigmoid(x):
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def prelu(x, slope):
    """Channel-wise parametric ReLU; ``slope`` holds one value per channel."""
    if slope.data.ndim != 1 or slope.shape[0] != x.shape[1]:
        raise ValueError(f"prelu slope has shape {slope.shape}, expected ({x.shape[1]},)")
    a = slope.data.reshape(1, -1, 1, 1)
    pos = x.data >= 0
    y = np.where(pos, x.data, a * x.data)

    def bw(g):
        gx = np.where(pos, g, a * g)
        gs = np.where(pos, 0.0, g * x.data).sum(axis=(0, 2, 3)).astype(slope.dtype)
        return gx, gs

    return _result(y, (x, slope), bw)


def concat(tensors, axis=1):
    tensors = list(tensors)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                   lambda g: tuple(np.split(g, sizes, axis=axis)))


# convolution ---------------------------------------------------------------
def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Zero-padded 2-D cross-correlation, (N,C,H,W) * (Co,C,kh,kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input has {c} channels, weight expects {ci}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d needs stride >= 1 and padding >= 0")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({co},)")
    if not np.isfinite(x.data).all():
        raise ValueError("conv2d received non-finite input")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {h}x{w} and kernel {kh}x{kw}")
    wd = weight.data
    wm = wd.reshape(co, c * kh * kw)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # im2col as (n, c, kh, kw, ho, wo), filled with one strided copy per tap
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(wm, cols).reshape(n, co, ho, wo)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def bw(g):
        g2 = g.reshape(n, co, ho * wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        gcols = np.matmul(wm.T, g2).reshape(n, c, kh, kw, ho, wo)
        gxp = np.zeros(xp.shape, dtype=gcols.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw.astype(wd.dtype), gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, lambda g: bw(g)[:len(parents)])


# rearrangement ---------------------------------------------------------------
def pixel_shuffle(x, r):
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r) sub-pixel rearrangement."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    co = c // (r * r)
    y = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def bw(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _result(y, (x,), bw)


def inv_pixel_shuffle(x, r):
    """(N, C, H, W) -> (N, C*r*r, H/r, W/r); exact inverse of ``pixel_shuffle``."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"inv_pixel_shuffle: spatial size {h}x{w} not divisible by {r}")
    ho, wo = h // r, w // r
    y = x.data.reshape(n, c, ho, r, wo, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, ho, wo)

    def bw(g):
        return (g.reshape(n, c, r, r, ho, wo).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w),)

    return _result(y, (x,), bw)


# resampling ----------------------------------------------------------------
BICUBIC_A = -0.5


def cubic_weight(d, a=BICUBIC_A):
    """Keys cubic convolution kernel (Catmull-Rom for a = -0.5)."""
    d = abs(d)
    if d <= 1:
        return (a + 2) * d ** 3 - (a + 3) * d ** 2 + 1
    if d < 2:
        return a * d ** 3 - 5 * a * d ** 2 + 8 * a * d - 4 * a
    return 0.0


@lru_cache(maxsize=256)
def interp_taps(n_in, n_out, mode):
    """Per-output source indices and weights along one axis.

    Returns (idx, wt), both (n_out, taps). Half-pixel-centre mapping, edge-clamped.
    """
    o = np.arange(n_out)
    if mode == "nearest":
        idx, wt = ((o * n_in) // n_out)[:, None], np.ones((n_out, 1))
    elif mode in ("bilinear", "bicubic"):
        src = (o + 0.5) * (n_in / n_out) - 0.5
        i0 = np.floor(src).astype(int)
        t = src - i0
        if mode == "bilinear":
            idx = np.stack([i0, i0 + 1], 1)
            wt = np.stack([1.0 - t, t], 1)
        else:
            offs = np.array([-1, 0, 1, 2])
            idx = i0[:, None] + offs
            wt = np.array([[cubic_weight(tt - k) for k in offs] for tt in t])
        idx = np.clip(idx, 0, n_in - 1)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    idx.setflags(write=False)
    wt.setflags(write=False)
    return idx, wt


@lru_cache(maxsize=256)
def interp_matrix(n_in, n_out, mode):
    """Row-stochastic (n_out, n_in) resampling matrix along one axis."""
    idx, wt = interp_taps(n_in, n_out, mode)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), idx.shape[1]), idx.ravel()), wt.ravel())
    m.setflags(write=False)
    return m


def _resample_axis(x, n_out, mode, axis):
    # anchored differences: y = x[a] + sum_t w_t (x[i_t] - x[a]) reproduces constants exactly
    idx, wt = interp_taps(x.shape[axis], n_out, mode)
    anchor = idx[np.arange(n_out), np.argmax(wt, axis=1)]
    base = np.take(x, anchor, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = n_out
    y = base.copy()
    for t in range(idx.shape[1]):
        y += wt[:, t].astype(x.dtype).reshape(shape) * (np.take(x, idx[:, t], axis=axis) - base)
    return y


def resize(x, out_h, out_w, mode="bilinear"):
    """Separable resampling of the two trailing axes."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w) and mode in ("nearest", "bilinear", "bicubic"):
        return _result(x.data.copy(), (x,), lambda g: (g,))
    ry = interp_matrix(h, out_h, mode).astype(x.dtype)
    rx = interp_matrix(w, out_w, mode).astype(x.dtype)
    y = _resample_axis(_resample_axis(x.data, out_h, mode, x.ndim - 2), out_w, mode, x.ndim - 1)
    return _result(y, (x,), lambda g: (np.matmul(np.matmul(ry.T, g), rx),))
