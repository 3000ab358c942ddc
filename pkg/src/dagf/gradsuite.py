"""Module-by-module finite-difference gradient suite (64-bit, toy sizes).

Each check builds a scalar by projecting an op's output onto a fixed random
tensor, so every output element contributes to the checked gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gradcheck import grad_check
from .kernels import apply_kernel_field, combine_kernels
from .losses import LossWeights, boundary_aware_loss, boundary_mask, l1_loss, multi_stage_loss, total_loss
from .network import (DagfConfig, akl_generate, extract_pyramid, filter_stage, forward, fuse_outputs,
                      init_params)
from .tensor import Tensor

PRIMITIVE_TOL = 1e-6
BLOCK_TOL = 1e-6
END_TO_END_TOL = 1e-3
# large steps may straddle a PReLU kink, small ones drown tiny derivatives in roundoff
STEPS = (1e-3, 1e-4, 1e-5)
DEEP_STEPS = (1e-3, 1e-5, 1e-7)


@dataclass
class GradResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error <= self.tolerance


def _leaf(rng, *shape, offset=0.0):
    data = rng.normal(size=shape)
    # keep entries away from the kinks of abs/PReLU
    data = data + np.sign(data) * offset
    return Tensor(data, requires_grad=True)


def _projected(fn, rng):
    proj = {}

    def loss():
        out = fn()
        if "r" not in proj:
            proj["r"] = rng.normal(size=out.shape)
        return (out * proj["r"]).sum()

    return loss


def _check(name, fn, params, rng, tol, eps=STEPS, max_entries=None, project=True):
    loss = _projected(fn, rng) if project else fn
    return GradResult(name, grad_check(loss, params, eps=eps, max_entries=max_entries), tol)


def primitive_checks(rng):
    x = _leaf(rng, 2, 3, 6, 5, offset=0.05)
    b = _leaf(rng, 1, 3, 1, 5)
    w = _leaf(rng, 4, 3, 3, 3)
    bias = _leaf(rng, 4)
    slope = Tensor(np.array([0.25, 0.1, -0.3]), requires_grad=True)
    y = _leaf(rng, 2, 2, 6, 5)
    ps = _leaf(rng, 1, 8, 3, 4)
    f = _leaf(rng, 1, 2, 5, 6)
    kf = _leaf(rng, 1, 9, 5, 6)
    wg, wt = _leaf(rng, 1, 9, 4, 4), _leaf(rng, 1, 9, 4, 4)
    a = Tensor(rng.uniform(0.1, 0.9, size=(1, 1, 4, 4)), requires_grad=True)
    P = PRIMITIVE_TOL
    out = [
        _check("add (broadcast)", lambda: x + b, {"x": x, "b": b}, rng, P),
        _check("mul (broadcast)", lambda: x * b, {"x": x, "b": b}, rng, P),
        _check("neg", lambda: -x, {"x": x}, rng, P),
        _check("abs", lambda: T.tabs(x), {"x": x}, rng, P),
        _check("mean", lambda: T.mean(x * x), {"x": x}, rng, P),
        _check("sigmoid", lambda: T.sigmoid(x), {"x": x}, rng, P),
        _check("prelu", lambda: T.prelu(x, slope), {"x": x, "slope": slope}, rng, P),
        _check("concat", lambda: T.concat([x, y]), {"x": x, "y": y}, rng, P),
        _check("conv2d", lambda: T.conv2d(x, w, bias, padding=1), {"x": x, "w": w, "bias": bias}, rng, P),
        _check("conv2d stride 2", lambda: T.conv2d(x, w, bias, stride=2, padding=1),
               {"x": x, "w": w, "bias": bias}, rng, P),
        _check("pixel_shuffle", lambda: T.pixel_shuffle(ps, 2), {"x": ps}, rng, P),
    ]
    sq = _leaf(rng, 1, 2, 4, 6)
    out.append(_check("inv_pixel_shuffle", lambda: T.inv_pixel_shuffle(sq, 2), {"x": sq}, rng, P))
    for mode in ("nearest", "bilinear", "bicubic"):
        out.append(_check(f"resize {mode}", lambda mode=mode: T.resize(f, 9, 4, mode), {"f": f}, rng, P))
    out.append(_check("apply_kernel_field", lambda: apply_kernel_field(f, kf), {"f": f, "w": kf}, rng, P))
    out.append(_check("combine_kernels", lambda: combine_kernels(wg, wt, a),
                      {"wg": wg, "wt": wt, "a": a}, rng, P))
    return out


def _both_outputs(params, cfg, feats, targets):
    coarse, fine = fuse_outputs(params, cfg, feats, targets)[1]
    return fine + T.resize(coarse, fine.shape[2], fine.shape[3], "nearest")


def block_checks(rng):
    cfg = DagfConfig(m=2, k=3, channels=2)
    params = init_params(cfg, seed=int(rng.integers(1 << 31)), dtype=np.float64)
    for name in params:
        if name.startswith("lambda"):
            params[name].data[...] = 0.3
    sub = lambda prefix: {n: p for n, p in params.items() if n.startswith(prefix)}  # noqa: E731
    img = Tensor(rng.random((1, 1, 8, 8)), requires_grad=True)
    ft, fg = _leaf(rng, 1, 2, 6, 6), _leaf(rng, 1, 2, 6, 6)
    prev, tgt = _leaf(rng, 1, 2, 3, 3), Tensor(rng.random((1, 1, 6, 6)), requires_grad=True)
    kf = Tensor(rng.normal(size=(1, 9, 6, 6)) * 0.3, requires_grad=True)
    feats = [_leaf(rng, 1, 2, 3, 3), _leaf(rng, 1, 2, 6, 6)]
    targets = [Tensor(rng.random((1, 1, 3, 3))), Tensor(rng.random((1, 1, 6, 6)))]
    B = BLOCK_TOL
    down = {**sub("enc.target.down1"), "img": img}
    return [
        _check("down-sample block", lambda: extract_pyramid(img, "target", params, cfg)[1], down, rng, B,
               max_entries=20),
        _check("attentional kernel learning", lambda: akl_generate(params, cfg, 0, ft, fg).w,
               {**sub("akl0."), "ft": ft, "fg": fg}, rng, B, max_entries=20),
        _check("filter stage", lambda: filter_stage(params, cfg, 1, prev, tgt, kf),
               {**sub("stage1."), "prev": prev, "target": tgt, "w": kf}, rng, B, max_entries=20),
        _check("fusion head", lambda: _both_outputs(params, cfg, feats, targets),
               {**sub("fuse"), **sub("out"), **sub("lambda"), "f0": feats[0], "f1": feats[1]}, rng, B,
               max_entries=20),
    ]


def loss_checks(rng):
    pred = Tensor(rng.random((1, 1, 8, 8)), requires_grad=True)
    inter = Tensor(rng.random((1, 1, 4, 4)), requires_grad=True)
    gt = rng.random((1, 1, 8, 8))
    mask = boundary_mask(pred, gt)
    P = PRIMITIVE_TOL
    return [
        _check("l1 loss", lambda: l1_loss(pred, gt), {"pred": pred}, rng, P, project=False),
        _check("multi-stage loss", lambda: multi_stage_loss([inter, pred], gt), {"inter": inter}, rng, P,
               project=False),
        _check("boundary-aware loss", lambda: boundary_aware_loss(pred, gt, mask=mask), {"pred": pred}, rng, P,
               project=False),
    ]


def model_checks(rng):
    cfg = DagfConfig(m=2, k=3, channels=4)
    params = init_params(cfg, seed=int(rng.integers(1 << 31)), dtype=np.float64)
    for name in params:
        if name.startswith("lambda"):
            params[name].data[...] = 0.3
    t, g, gt = rng.random((1, 1, 16, 16)), rng.random((1, 3, 16, 16)), rng.random((1, 1, 16, 16))
    with T.no_grad():
        mask = boundary_mask(forward(params, cfg, t, g).final, gt)
    weights = LossWeights(1.0, 0.5, 1.0)

    def loss():
        return total_loss(forward(params, cfg, t, g).outputs, gt, weights, mask=mask)[0]

    return [_check("full model + total loss (m=2, k=3, channels=4, 16x16)", loss, params, rng,
                   END_TO_END_TOL, eps=DEEP_STEPS, max_entries=2, project=False)]


def run_suite(seed=0, include_model=True):
    """Run every check; returns a list of GradResult."""
    rng = np.random.default_rng(seed)
    results = primitive_checks(rng) + block_checks(rng) + loss_checks(rng)
    if include_model:
        results += model_checks(rng)
    return results
