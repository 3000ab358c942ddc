"""Per-pixel kernel fields: attentional combination and application.

A kernel field is a (N, k*k, H, W) tensor holding one k x k kernel per
pixel, flattened row-major so channel ``a*k + b`` is the weight for offset
``(a - k//2, b - k//2)``. An attention map is an (N, 1, H, W) tensor in (0, 1).
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, _result, mul, add


def kernel_size(w):
    """Side length k of a kernel field, validating that it has k*k channels with k odd."""
    kk = w.shape[1]
    k = math.isqrt(kk)
    if k * k != kk or k % 2 == 0:
        raise ValueError(f"kernel field has {kk} channels; expected k*k with k odd")
    return k


def combine_kernels(wg, wt, a, mode="attention"):
    """Blend guidance and target kernel fields.

    ``attention``: a * wg + (1 - a) * wt, with the attention value of a pixel
    broadcast over its k*k weights. ``product`` and ``sum`` are the
    attention-free fusions used by ablation variants.
    """
    if wg.shape != wt.shape:
        raise ValueError(f"kernel fields differ in shape: {wg.shape} vs {wt.shape}")
    if mode == "product":
        return mul(wg, wt)
    if mode == "sum":
        return add(wg, wt)
    if mode != "attention":
        raise ValueError(f"unknown combination mode {mode!r}")
    n, _, h, w = wg.shape
    if a.shape != (n, 1, h, w):
        raise ValueError(f"attention map shape {a.shape} does not match kernel grid {(n, 1, h, w)}")
    return add(mul(a, wg), mul(1.0 - a, wt))


def normalize_kernels(w):
    """Scale each pixel's kernel to sum to one (optional, off by default in the network)."""
    s = w.data.sum(axis=1, keepdims=True)
    s = np.where(np.abs(s) < 1e-12, 1e-12, s)
    inv = 1.0 / s

    def bw(g):
        # d(w/s)/dw = (g - sum(g*w/s)) / s
        y = w.data * inv
        return ((g - (g * y).sum(axis=1, keepdims=True)) * inv,)

    return _result(w.data * inv, (w,), bw)


def apply_kernel_field(f, w):
    """Filter every channel of ``f`` with the per-pixel kernels in ``w``.

    out[n, c, u, v] = sum_{x,y} W[n, u, v](x, y) * f[n, c, u - x, v - y],
    x, y in [-k//2, k//2], zero outside the image. The same kernel is shared
    by all channels at a pixel.
    """
    n, c, h, wd = f.shape
    if w.ndim != 4 or w.shape[0] != n or w.shape[2:] != (h, wd):
        raise ValueError(f"kernel field {w.shape} does not match features {f.shape}")
    k = kernel_size(w)
    s = k // 2
    fp = np.pad(f.data, ((0, 0), (0, 0), (s, s), (s, s)))
    wv = w.data
    out = np.zeros(np.broadcast_shapes(f.shape, (n, 1, h, wd)), dtype=np.result_type(f.dtype, w.dtype))
    # offset (x, y) reads f[u - x, v - y] = fp[u - x + s, v - y + s]
    for a in range(k):
        for b in range(k):
            ry, rx = 2 * s - a, 2 * s - b
            out += wv[:, a * k + b][:, None] * fp[:, :, ry:ry + h, rx:rx + wd]

    def bw(g):
        gfp = np.zeros_like(fp, dtype=out.dtype)
        gw = np.empty_like(wv, dtype=out.dtype)
        for a in range(k):
            for b in range(k):
                ry, rx = 2 * s - a, 2 * s - b
                gw[:, a * k + b] = (g * fp[:, :, ry:ry + h, rx:rx + wd]).sum(axis=1)
                gfp[:, :, ry:ry + h, rx:rx + wd] += g * wv[:, a * k + b][:, None]
        return gfp[:, :, s:s + h, s:s + wd].astype(f.dtype), gw.astype(w.dtype)

    return _result(out, (f, w), bw)


def apply_kernel_field_naive(f, w):
    """Literal nested-loop version of ``apply_kernel_field`` on arrays (oracle)."""
    f = f.data if isinstance(f, Tensor) else np.asarray(f)
    w = w.data if isinstance(w, Tensor) else np.asarray(w)
    n, c, h, wd = f.shape
    if w.shape[0] != n or w.shape[2:] != (h, wd):
        raise ValueError(f"kernel field {w.shape} does not match features {f.shape}")
    k = kernel_size(w)
    s = k // 2
    out = np.zeros((n, c, h, wd), dtype=np.float64)
    for i in range(n):
        for u in range(h):
            for v in range(wd):
                for x in range(-s, s + 1):
                    for y in range(-s, s + 1):
                        uu, vv = u - x, v - y
                        if not (0 <= uu < h and 0 <= vv < wd):
                            continue
                        weight = w[i, (x + s) * k + (y + s), u, v]
                        for ch in range(c):
                            out[i, ch, u, v] += weight * f[i, ch, uu, vv]
    return out
