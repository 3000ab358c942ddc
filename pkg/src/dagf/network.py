"""Deep attentional guided filtering network.

Parameters live in a flat ``{name: Tensor}`` dict; every block is a plain
function reading its weights by name prefix. Pyramid level ``j`` of the
encoders is at resolution H / 2**j; filtering stage ``i`` runs coarse to
fine and uses the kernels of level ``m - 1 - i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .kernels import apply_kernel_field, combine_kernels, normalize_kernels
from .tensor import Tensor

VARIANTS = ("Model1", "Model2", "Model3", "Model4", "Model5", "Model6", "Model7")
UNET_LEVELS = 5
RES_BLOCKS = 3
PRELU_INIT = 0.25


@dataclass(frozen=True)
class DagfConfig:
    m: int = 3
    k: int = 3
    channels: int = 32
    variant: str = "Model7"
    lambda_init: float = 0.0
    target_channels: int = 1
    guidance_channels: int = 3
    normalize_kernels: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError("k must be a positive odd integer")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def variant_id(self):
        return VARIANTS.index(self.variant) + 1

    @property
    def kernel_mode(self):
        """How the two kernel sets are fused: target, guidance, product, sum or attention."""
        return {"Model1": "target", "Model2": "guidance", "Model3": "product",
                "Model4": "sum"}.get(self.variant, "attention")

    @property
    def uses_target_kernels(self):
        return self.kernel_mode != "guidance"

    @property
    def uses_guidance_kernels(self):
        return self.kernel_mode != "target"


@dataclass
class AklResult:
    wt: Tensor | None
    wg: Tensor | None
    attention: Tensor | None
    w: Tensor


@dataclass
class DagfOutputs:
    outputs: list
    fused: list
    stage_features: list
    kernels: list = field(default_factory=list)

    @property
    def final(self):
        return self.outputs[-1]

    @property
    def attention_maps(self):
        return [r.attention for r in self.kernels]


# parameter layout ----------------------------------------------------------
def _conv(spec, name, cin, cout, k=3, act=True):
    spec.append((f"{name}.weight", (cout, cin, k, k), "conv"))
    spec.append((f"{name}.bias", (cout,), "zero"))
    if act:
        spec.append((f"{name}.slope", (cout,), "slope"))


def unet_widths(c):
    return [c * 2 ** level for level in range(UNET_LEVELS)]


def param_spec(cfg):
    """Ordered list of (name, shape, init kind) for a configuration."""
    c, kk, spec = cfg.channels, cfg.k * cfg.k, []
    branches = []
    if cfg.uses_target_kernels:
        branches.append(("target", cfg.target_channels, "kt"))
    if cfg.uses_guidance_kernels:
        branches.append(("guidance", cfg.guidance_channels, "kg"))
    for branch, cin, _ in branches:
        _conv(spec, f"enc.{branch}.head.conv1", cin, c)
        _conv(spec, f"enc.{branch}.head.conv2", c, c)
        for j in range(1, cfg.m):
            _conv(spec, f"enc.{branch}.down{j}.conv1", c, c)
            _conv(spec, f"enc.{branch}.down{j}.conv2", c, c)
            _conv(spec, f"enc.{branch}.down{j}.reduce", 4 * c, c, k=1, act=False)
    for j in range(cfg.m):
        for _, _, head in branches:
            _conv(spec, f"akl{j}.{head}.conv1", c, c)
            _conv(spec, f"akl{j}.{head}.conv2", c, kk, act=False)
        if cfg.kernel_mode == "attention":
            widths = unet_widths(c)
            _conv(spec, f"akl{j}.att.enc0", 2 * c, widths[0])
            for lv in range(1, UNET_LEVELS):
                _conv(spec, f"akl{j}.att.enc{lv}", widths[lv - 1], widths[lv])
            for lv in range(UNET_LEVELS - 2, -1, -1):
                _conv(spec, f"akl{j}.att.dec{lv}", widths[lv + 1] + widths[lv], widths[lv])
            _conv(spec, f"akl{j}.att.out", widths[0], 1, k=1, act=False)
    for i in range(cfg.m):
        _conv(spec, f"stage{i}.embed", cfg.target_channels, c)
        if i > 0:
            _conv(spec, f"stage{i}.reduce", 2 * c, c, k=1, act=False)
        for b in range(RES_BLOCKS):
            _conv(spec, f"stage{i}.res{b}.conv1", c, c)
            _conv(spec, f"stage{i}.res{b}.conv2", c, c, act=False)
        _conv(spec, f"fuse{i}.conv", c, c, act=False)
        _conv(spec, f"out{i}.conv", c, cfg.target_channels, act=False)
    for i in range(cfg.m - 1):
        spec.append((f"lambda{i}", (1,), "lambda"))
    return spec


def init_params(cfg, seed=0, dtype=np.float32):
    """Kaiming-uniform conv weights, zero biases, PReLU slopes 0.25, lambdas at ``lambda_init``."""
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0 / (1.0 + PRELU_INIT ** 2))
    params = {}
    for name, shape, kind in param_spec(cfg):
        if kind == "conv":
            fan_in = int(np.prod(shape[1:]))
            bound = gain * np.sqrt(3.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "zero":
            data = np.zeros(shape)
        elif kind == "slope":
            data = np.full(shape, PRELU_INIT)
        else:
            data = np.full(shape, cfg.lambda_init)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def cast_params(params, dtype):
    return {n: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad) for n, p in params.items()}


# blocks -----------------------------------------------------------------------
def conv(params, name, x, stride=1, act=True):
    w = params[f"{name}.weight"]
    y = T.conv2d(x, w, params[f"{name}.bias"], stride=stride, padding=w.shape[-1] // 2)
    return T.prelu(y, params[f"{name}.slope"]) if act else y


def upsample2x(x):
    return T.resize(x, x.shape[2] * 2, x.shape[3] * 2, "bilinear")


def extract_pyramid(img, branch, params, cfg):
    """Feature pyramid of one encoder branch: level j is at 1/2**j resolution."""
    h, w = img.shape[2:]
    step = 2 ** (cfg.m - 1)
    if h % step or w % step:
        raise ValueError(f"input {h}x{w} must be divisible by {step} for m={cfg.m}; pad or crop it first")
    p = f"enc.{branch}"
    feat = conv(params, f"{p}.head.conv2", conv(params, f"{p}.head.conv1", img))
    levels = [feat]
    for j in range(1, cfg.m):
        x = conv(params, f"{p}.down{j}.conv2", conv(params, f"{p}.down{j}.conv1", levels[-1]))
        x = T.inv_pixel_shuffle(x, 2)
        levels.append(conv(params, f"{p}.down{j}.reduce", x, act=False))
    return levels


def attention_unet(params, prefix, x):
    """Five-level U-net ending in a sigmoid; returns an (N, 1, H, W) map in (0, 1)."""
    skips = [conv(params, f"{prefix}.enc0", x)]
    for lv in range(1, UNET_LEVELS):
        skips.append(conv(params, f"{prefix}.enc{lv}", skips[-1], stride=2))
    y = skips[-1]
    for lv in range(UNET_LEVELS - 2, -1, -1):
        skip = skips[lv]
        y = T.resize(y, skip.shape[2], skip.shape[3], "bilinear")
        y = conv(params, f"{prefix}.dec{lv}", T.concat([y, skip]))
    return T.sigmoid(conv(params, f"{prefix}.out", y, act=False))


def kernel_head(params, prefix, feat):
    return conv(params, f"{prefix}.conv2", conv(params, f"{prefix}.conv1", feat), act=False)


def akl_generate(params, cfg, level, ft, fg):
    """Dual kernel generation and their combination at one pyramid level."""
    mode = cfg.kernel_mode
    wt = kernel_head(params, f"akl{level}.kt", ft) if cfg.uses_target_kernels else None
    wg = kernel_head(params, f"akl{level}.kg", fg) if cfg.uses_guidance_kernels else None
    a = None
    if mode == "target":
        w = wt
    elif mode == "guidance":
        w = wg
    elif mode == "attention":
        if ft.shape != fg.shape:
            raise ValueError(f"feature shapes differ: {ft.shape} vs {fg.shape}")
        a = attention_unet(params, f"akl{level}.att", T.concat([ft, fg]))
        w = combine_kernels(wg, wt, a)
    else:
        w = combine_kernels(wg, wt, None, mode=mode)
    if cfg.normalize_kernels:
        w = normalize_kernels(w)
    return AklResult(wt=wt, wg=wg, attention=a, w=w)


def residual_block(params, prefix, x):
    y = conv(params, f"{prefix}.conv2", conv(params, f"{prefix}.conv1", x), act=False)
    return x + y


def filter_stage(params, cfg, stage, prev, target, w):
    """Kernel-field filtering of the embedded target (plus upsampled previous stage)."""
    x = conv(params, f"stage{stage}.embed", target)
    if prev is not None:
        up = upsample2x(prev)
        if up.shape[2:] != x.shape[2:]:
            raise ValueError(f"upsampled previous stage {up.shape[2:]} != target embedding {x.shape[2:]}")
        x = conv(params, f"stage{stage}.reduce", T.concat([up, x]), act=False)
    if w.shape[2:] != x.shape[2:]:
        raise ValueError(f"kernel field {w.shape[2:]} does not match stage resolution {x.shape[2:]}")
    x = apply_kernel_field(x, w)
    for b in range(RES_BLOCKS):
        x = residual_block(params, f"stage{stage}.res{b}", x)
    return x


def fuse_outputs(params, cfg, stage_feats, resized_targets):
    """Multi-scale fusion with learnable lambdas and residual output heads."""
    if len(stage_feats) != cfg.m or len(resized_targets) != cfg.m:
        raise ValueError(f"expected {cfg.m} stage features and targets")
    fused, outputs = [], []
    for i, feat in enumerate(stage_feats):
        f_hat = conv(params, f"fuse{i}.conv", feat, act=False)
        if i > 0:
            f_hat = f_hat + params[f"lambda{i - 1}"] * upsample2x(fused[-1])
        fused.append(f_hat)
        outputs.append(conv(params, f"out{i}.conv", f_hat, act=False) + resized_targets[i])
    return fused, outputs


def forward(params, cfg, t, g):
    """Run the network on a pre-upsampled target ``t`` and guidance ``g`` (N,C,H,W)."""
    t = t if isinstance(t, Tensor) else Tensor(t)
    g = g if isinstance(g, Tensor) else Tensor(g)
    if t.shape[2:] != g.shape[2:] or t.shape[0] != g.shape[0]:
        raise ValueError(f"target {t.shape} and guidance {g.shape} differ in batch or size")
    if t.shape[1] != cfg.target_channels or g.shape[1] != cfg.guidance_channels:
        raise ValueError(f"expected {cfg.target_channels}-channel target and "
                         f"{cfg.guidance_channels}-channel guidance, got {t.shape[1]} and {g.shape[1]}")
    h, w = t.shape[2:]
    feats_t = extract_pyramid(t, "target", params, cfg) if cfg.uses_target_kernels else [None] * cfg.m
    feats_g = extract_pyramid(g, "guidance", params, cfg) if cfg.uses_guidance_kernels else [None] * cfg.m
    kernels = [akl_generate(params, cfg, j, feats_t[j], feats_g[j]) for j in range(cfg.m)]
    stage_feats, targets, prev = [], [], None
    for i in range(cfg.m):
        j = cfg.m - 1 - i
        t_i = T.resize(t, h >> j, w >> j, "bicubic")
        prev = filter_stage(params, cfg, i, prev, t_i, kernels[j].w)
        stage_feats.append(prev)
        targets.append(t_i)
    fused, outputs = fuse_outputs(params, cfg, stage_feats, targets)
    return DagfOutputs(outputs=outputs, fused=fused, stage_features=stage_feats,
                       kernels=kernels[::-1])


class DagfModel:
    """Configuration plus parameters, callable on H x W (x C) numpy images."""

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    @classmethod
    def initialize(cls, cfg, seed=0, dtype=np.float32):
        return cls(cfg, init_params(cfg, seed, dtype))

    def run(self, t, g):
        """Forward on (N, C, H, W) arrays without recording a graph."""
        with T.no_grad():
            return forward(self.params, self.cfg, t, g)

    def __call__(self, t, g):
        """Filter a full-resolution target ``t`` guided by ``g``; returns an H x W (x C) array.

        Inputs are edge-padded to a multiple of 2**(m-1) and the result cropped back.
        """
        t = np.asarray(t)
        g = np.asarray(g)
        squeeze = t.ndim == 2
        t3 = t[:, :, None] if squeeze else t
        g3 = g[:, :, None] if g.ndim == 2 else g
        h, w = t3.shape[:2]
        step = 2 ** (self.cfg.m - 1)
        ph, pw = (-h) % step, (-w) % step
        pad = ((0, ph), (0, pw), (0, 0))
        dtype = next(iter(self.params.values())).dtype
        tt = np.pad(t3, pad, mode="edge").transpose(2, 0, 1)[None].astype(dtype)
        gg = np.pad(g3, pad, mode="edge").transpose(2, 0, 1)[None].astype(dtype)
        out = self.run(tt, gg).final.data[0].transpose(1, 2, 0)[:h, :w]
        return out[:, :, 0] if squeeze else out
