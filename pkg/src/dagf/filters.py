"""Classical guided filters on H x W (x C) float images.

Windows are clipped to the image and renormalised; nothing is padded.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BilateralParams:
    sigma_s: float
    sigma_r: float
    radius: int

    def __post_init__(self):
        if self.sigma_s <= 0 or self.sigma_r <= 0:
            raise ValueError("sigma_s and sigma_r must be positive")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.radius < 2 * self.sigma_s:
            warnings.warn(f"radius {self.radius} < 2*sigma_s truncates the spatial kernel", stacklevel=2)


@dataclass(frozen=True)
class GIFParams:
    radius: int
    epsilon: float

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


def _as_hwc(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[:, :, None], True
    if img.ndim == 3:
        return img, False
    raise ValueError(f"expected an H x W or H x W x C image, got shape {img.shape}")


def _restore(out, squeeze):
    return out[:, :, 0] if squeeze else out


def _check_same_size(t, g):
    if t.shape[:2] != g.shape[:2]:
        raise ValueError(f"target {t.shape[:2]} and guidance {g.shape[:2]} differ in size")


def _box_sum(x, r):
    """Clipped-window sums along both spatial axes via cumulative sums."""
    h, w = x.shape[:2]
    c = np.cumsum(np.pad(x, ((1, 0), (0, 0)) + ((0, 0),) * (x.ndim - 2)), axis=0)
    lo = np.clip(np.arange(h) - r, 0, h)
    hi = np.clip(np.arange(h) + r + 1, 0, h)
    x = c[hi] - c[lo]
    c = np.cumsum(np.pad(x, ((0, 0), (1, 0)) + ((0, 0),) * (x.ndim - 2)), axis=1)
    lo = np.clip(np.arange(w) - r, 0, w)
    hi = np.clip(np.arange(w) + r + 1, 0, w)
    return c[:, hi] - c[:, lo]


def _window_count(h, w, r):
    rows = np.minimum(np.arange(h) + r, h - 1) - np.maximum(np.arange(h) - r, 0) + 1
    cols = np.minimum(np.arange(w) + r, w - 1) - np.maximum(np.arange(w) - r, 0) + 1
    return np.outer(rows, cols).astype(np.float64)


def box_filter(img, radius):
    """Mean over the (2r+1)^2 window clipped to the image, in O(1) per pixel."""
    x, squeeze = _as_hwc(img)
    h, w = x.shape[:2]
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if radius >= min(h, w):
        raise ValueError(f"radius {radius} must be smaller than the image size {h}x{w}")
    out = _box_sum(x, radius) / _window_count(h, w, radius)[:, :, None]
    return _restore(out, squeeze)


FLAT_TOL = 1e-12


def _gif_single(t, g, r, eps):
    """Guided filter with one guidance channel; t is H x W x C."""
    h, w = g.shape
    n = _window_count(h, w, r)
    mean = lambda a: _box_sum(a, r) / (n if a.ndim == 2 else n[:, :, None])  # noqa: E731
    mu_g = mean(g)
    var_g = mean(g * g) - mu_g * mu_g
    # flat guidance windows (only reachable with eps = 0) take the eps -> 0+ limit a = 0
    flat = (var_g <= FLAT_TOL * np.maximum(1.0, mu_g * mu_g)) if eps == 0 else np.zeros(var_g.shape, bool)
    denom = np.where(flat, 1.0, var_g + eps)
    mu_t = mean(t)
    cov = mean(g[:, :, None] * t) - mu_g[:, :, None] * mu_t
    a = np.where(flat[:, :, None], 0.0, cov / denom[:, :, None])
    b = mu_t - a * mu_g[:, :, None]
    return mean(a) * g[:, :, None] + mean(b)


def guided_image_filter(t, g, p):
    """He et al. guided filter in linear-model form.

    Multi-channel guidance is handled by filtering once per guidance channel
    and averaging the results.
    """
    tt, squeeze = _as_hwc(t)
    gg, _ = _as_hwc(g)
    _check_same_size(tt, gg)
    if p.radius >= min(tt.shape[:2]):
        raise ValueError(f"radius {p.radius} must be smaller than the image size")
    out = sum(_gif_single(tt, gg[:, :, c], p.radius, p.epsilon) for c in range(gg.shape[2]))
    return _restore(out / gg.shape[2], squeeze)


def _shift_views(a, dy, dx):
    """Slices selecting pixel i and its neighbour i + (dy, dx), both in-bounds."""
    h, w = a.shape[:2]
    ys, yd = slice(max(0, -dy), h - max(0, dy)), slice(max(0, dy), h + min(0, dy))
    xs, xd = slice(max(0, -dx), w - max(0, dx)), slice(max(0, dx), w + min(0, dx))
    return (ys, xs), (yd, xd)


def bilateral_filter(t, g, p):
    """Joint bilateral filter: Gaussian spatial weight times Gaussian range weight on g."""
    tt, squeeze = _as_hwc(t)
    gg, _ = _as_hwc(g)
    _check_same_size(tt, gg)
    r = p.radius
    num = np.zeros_like(tt)
    den = np.zeros(tt.shape[:2])
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ws = np.exp(-(dy * dy + dx * dx) / (2 * p.sigma_s ** 2))
            here, there = _shift_views(tt, dy, dx)
            d2 = ((gg[here] - gg[there]) ** 2).sum(axis=2)
            wgt = ws * np.exp(-d2 / (2 * p.sigma_r ** 2))
            num[here] += wgt[:, :, None] * tt[there]
            den[here] += wgt
    return _restore(num / den[:, :, None], squeeze)


def joint_bilateral_upsample(t_lr, g_hr, p, scale):
    """Joint bilateral upsampling of a low-resolution target.

    High-res pixel p sits at low-res coordinate p / scale; low-res sample q is
    taken to live at high-res position q * scale (the nearest-downsampling
    representative). Spatial weights use low-res distances, range weights
    compare guidance at p and at q * scale.
    """
    tl, squeeze = _as_hwc(t_lr)
    gh, _ = _as_hwc(g_hr)
    if scale < 1:
        raise ValueError("scale must be >= 1")
    h, w = tl.shape[:2]
    if gh.shape[:2] != (h * scale, w * scale):
        raise ValueError(f"guidance {gh.shape[:2]} is not {scale}x the target {h}x{w}")
    H, W = gh.shape[:2]
    r = p.radius
    py = np.arange(H) / scale
    px = np.arange(W) / scale
    cy = np.arange(H) // scale
    cx = np.arange(W) // scale
    num = np.zeros((H, W, tl.shape[2]))
    den = np.zeros((H, W))
    for dy in range(-r, r + 1):
        qy = cy + dy
        vy = (qy >= 0) & (qy < h)
        qyc = np.clip(qy, 0, h - 1)
        for dx in range(-r, r + 1):
            qx = cx + dx
            vx = (qx >= 0) & (qx < w)
            qxc = np.clip(qx, 0, w - 1)
            valid = vy[:, None] & vx[None, :]
            dist2 = (py - qyc)[:, None] ** 2 + (px - qxc)[None, :] ** 2
            gq = gh[(qyc * scale)[:, None], (qxc * scale)[None, :]]
            d2 = ((gh - gq) ** 2).sum(axis=2)
            wgt = np.exp(-dist2 / (2 * p.sigma_s ** 2) - d2 / (2 * p.sigma_r ** 2)) * valid
            num += wgt[:, :, None] * tl[qyc[:, None], qxc[None, :]]
            den += wgt
    return _restore(num / den[:, :, None], squeeze)
