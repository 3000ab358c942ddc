"""Slow, literal reference implementations used as test oracles."""
import numpy as np


def box_mean_loop(img, r):
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = img[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1].mean()
    return out


def window_membership(h, w, r):
    """Dense 0/1 matrix A (windows x pixels): A[k, i] = 1 iff pixel i lies in window N_k."""
    idx = np.arange(h * w).reshape(h, w)
    A = np.zeros((h * w, h * w))
    for ky in range(h):
        for kx in range(w):
            A[ky * w + kx, idx[max(0, ky - r):ky + r + 1, max(0, kx - r):kx + r + 1].ravel()] = 1.0
    return A


def gif_kernel_matrix(g, r, eps):
    """Explicit guided-filter weight matrix W (pixels x pixels), summed over windows.

    Each window N_k adds (1 + (g_i - mu_k)(g_j - mu_k) / (var_k + eps)) / |N_k| to
    W[i, j] for i, j in N_k; row i is then divided by the number of windows
    covering i. In the image interior this is the textbook 1/|N|^2 weight.
    The window sum is written as A^T diag(.) A over the membership matrix A.
    """
    h, w = g.shape
    A = window_membership(h, w, r)
    gv = g.ravel()
    size = A.sum(1)
    mu = A @ gv / size
    var = A @ (gv * gv) / size - mu * mu
    D = A * (gv[None, :] - mu[:, None])
    W = A.T @ (A / size[:, None]) + D.T @ (D / (size * (var + eps))[:, None])
    return W / A.sum(0)[:, None]


def gif_direct(t, g, r, eps):
    return (gif_kernel_matrix(g, r, eps) @ t.ravel()).reshape(t.shape)


def bilateral_loop(t, g, sigma_s, sigma_r, radius):
    h, w = t.shape
    g = g if g.ndim == 3 else g[:, :, None]
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            num = den = 0.0
            for yy in range(max(0, y - radius), min(h, y + radius + 1)):
                for xx in range(max(0, x - radius), min(w, x + radius + 1)):
                    ws = np.exp(-((y - yy) ** 2 + (x - xx) ** 2) / (2 * sigma_s ** 2))
                    wr = np.exp(-np.sum((g[y, x] - g[yy, xx]) ** 2) / (2 * sigma_r ** 2))
                    num += ws * wr * t[yy, xx]
                    den += ws * wr
            out[y, x] = num / den
    return out


def jbu_loop(t_lr, g_hr, sigma_s, sigma_r, radius, scale):
    h, w = t_lr.shape
    H, W = g_hr.shape[:2]
    g = g_hr if g_hr.ndim == 3 else g_hr[:, :, None]
    out = np.zeros((H, W))
    for py in range(H):
        for px in range(W):
            cy, cx = py // scale, px // scale
            num = den = 0.0
            for qy in range(max(0, cy - radius), min(h, cy + radius + 1)):
                for qx in range(max(0, cx - radius), min(w, cx + radius + 1)):
                    d2 = (py / scale - qy) ** 2 + (px / scale - qx) ** 2
                    r2 = np.sum((g[py, px] - g[qy * scale, qx * scale]) ** 2)
                    wgt = np.exp(-d2 / (2 * sigma_s ** 2)) * np.exp(-r2 / (2 * sigma_r ** 2))
                    num += wgt * t_lr[qy, qx]
                    den += wgt
            out[py, px] = num / den
    return out


def sobel_loop(img):
    """Sobel x/y on an H x W image with edge-replicated borders."""
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    ky = kx.T
    h, w = img.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    v = img[min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)]
                    gx[y, x] += kx[dy + 1, dx + 1] * v
                    gy[y, x] += ky[dy + 1, dx + 1] * v
    return gx, gy
