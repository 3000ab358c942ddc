"""Degradation, metrics, augmentation, synthetic data and the training loop.

Images are numpy arrays, H x W or H x W x C, with values in [0, 1] unless
stated otherwise.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .losses import DEFAULT_WEIGHTS, LossWeights, total_loss, variant_weights
from .network import forward, init_params
from .optim import OptimizerState, adam_step, step_lr

log = logging.getLogger(__name__)

SCALES = (1, 2, 4, 8, 16)


@dataclass
class SamplePair:
    guidance: np.ndarray
    target_gt: np.ndarray
    target_degraded: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalProtocol:
    rmse_convention: str = "byte-range"
    border_crop: int = 0
    value_scale: float = 1.0  # multiplies stored values to reach centimetres

    def __post_init__(self):
        if self.rmse_convention not in ("centimeters", "byte-range"):
            raise ValueError(f"unknown RMSE convention {self.rmse_convention!r}")
        if self.border_crop < 0:
            raise ValueError("border_crop must be >= 0")


class TrainingDivergedError(RuntimeError):
    pass


def resize_image(img, out_h, out_w, mode):
    a = np.asarray(img)
    if a.ndim == 2:
        src = a[None]
    else:
        src = np.moveaxis(a, 2, 0)
    with T.no_grad():
        out = T.resize(T.Tensor(src), out_h, out_w, mode).data
    return out[0] if a.ndim == 2 else np.moveaxis(out, 0, 2)


def degrade(gt, scale, mode="nearest", noise_sigma=0.0, rng=None, data_range=1.0,
            noise_is_variance=False):
    """Downsample by ``scale`` then add Gaussian noise given on the [0, 255] scale.

    ``noise_sigma`` is a standard deviation unless ``noise_is_variance``.
    The result is clipped to [0, data_range].
    """
    gt = np.asarray(gt)
    h, w = gt.shape[:2]
    if scale < 1 or h % scale or w % scale:
        raise ValueError(f"image {h}x{w} is not divisible by scale {scale}")
    if mode not in ("nearest", "bicubic"):
        raise ValueError(f"unknown degradation mode {mode!r}")
    lr = resize_image(gt, h // scale, w // scale, mode)
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noisy degradation needs an explicit rng")
        sigma = math.sqrt(noise_sigma) if noise_is_variance else noise_sigma
        lr = lr + rng.normal(0.0, sigma * data_range / 255.0, size=lr.shape)
        lr = np.clip(lr, 0.0, data_range)
    return lr.astype(gt.dtype) if gt.dtype.kind == "f" else lr


def upsample_input(lr, scale):
    """Bicubic upsampling; also the bicubic baseline."""
    lr = np.asarray(lr)
    return resize_image(lr, lr.shape[0] * scale, lr.shape[1] * scale, "bicubic")


def rmse(pred, gt, proto=EvalProtocol()):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    c = proto.border_crop
    if c:
        pred, gt = pred[c:-c, c:-c], gt[c:-c, c:-c]
    if proto.rmse_convention == "centimeters":
        diff = (pred - gt) * proto.value_scale
    else:
        lo, hi = gt.min(), gt.max()
        span = hi - lo if hi > lo else 1.0
        diff = (pred - gt) * (255.0 / span)
    return float(np.sqrt(np.mean(diff * diff)))


# augmentation ---------------------------------------------------------------
def dihedral(img, flip_h, flip_v, rot):
    out = np.asarray(img)
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1]
    return np.ascontiguousarray(np.rot90(out, rot, axes=(0, 1)))


def augment(pair, rng):
    """Same random flip/rotation applied to guidance, ground truth and degraded target."""
    flip_h, flip_v = bool(rng.integers(2)), bool(rng.integers(2))
    rot = int(rng.integers(4))
    return apply_dihedral(pair, flip_h, flip_v, rot)


def apply_dihedral(pair, flip_h, flip_v, rot):
    deg = pair.target_degraded
    return SamplePair(
        guidance=dihedral(pair.guidance, flip_h, flip_v, rot),
        target_gt=dihedral(pair.target_gt, flip_h, flip_v, rot),
        target_degraded=None if deg is None else dihedral(deg, flip_h, flip_v, rot),
        metadata=dict(pair.metadata),
    )


def crop_patches(pair, size, rng, scale=1):
    """Aligned random crop; the degraded target (if any) is cropped at 1/scale."""
    h, w = pair.target_gt.shape[:2]
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds image {h}x{w}")
    if size % scale:
        raise ValueError(f"crop size {size} must be divisible by scale {scale}")
    y = int(rng.integers((h - size) // scale + 1)) * scale
    x = int(rng.integers((w - size) // scale + 1)) * scale
    deg = pair.target_degraded
    if deg is not None:
        s = size // scale
        deg = deg[y // scale:y // scale + s, x // scale:x // scale + s]
    return SamplePair(
        guidance=pair.guidance[y:y + size, x:x + size],
        target_gt=pair.target_gt[y:y + size, x:x + size],
        target_degraded=deg,
        metadata={**pair.metadata, "crop": (y, x)},
    )


def guidance_expand(g):
    """Replicate a single-channel guidance into three identical planes."""
    g = np.asarray(g)
    if g.ndim == 2:
        g = g[:, :, None]
    if g.shape[2] == 3:
        return g
    if g.shape[2] != 1:
        raise ValueError(f"guidance must have 1 or 3 channels, got {g.shape[2]}")
    return np.repeat(g, 3, axis=2)


def per_channel_apply(model, t, g):
    """Run a single-channel model once per target channel and restack."""
    t = np.asarray(t)
    g = guidance_expand(g)
    if t.ndim == 2:
        return model(t, g)
    if t.shape[2] not in (1, 3):
        raise ValueError(f"target must have 1 or 3 channels, got {t.shape[2]}")
    return np.stack([model(t[:, :, c], g) for c in range(t.shape[2])], axis=2)


def texture_remove(img, model, iterations=4, on_iteration=None):
    """Iterative self-guided filtering; the textured input stays the guidance.

    ``on_iteration(i, result)`` is called after pass ``i`` (1-based).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    guide = guidance_expand(img)
    cur = np.asarray(img)
    for i in range(1, iterations + 1):
        cur = per_channel_apply(model, cur, guide)
        if on_iteration is not None:
            on_iteration(i, cur)
    return cur


# synthetic data -----------------------------------------------------------------
def _shape_mask(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    kind = rng.integers(3)
    cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
    size = rng.uniform(0.12, 0.35) * min(h, w)
    if kind == 0:
        return (np.abs(yy - cy) < size) & (np.abs(xx - cx) < size * rng.uniform(0.5, 1.5))
    if kind == 1:
        return (yy - cy) ** 2 + (xx - cx) ** 2 < size ** 2
    # half-plane intersection triangle
    ang = rng.uniform(0, 2 * np.pi) + np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
    mask = np.ones((h, w), dtype=bool)
    for a in ang:
        mask &= (yy - cy) * np.sin(a) + (xx - cx) * np.cos(a) < size * 0.6
    return mask


def synthetic_pair(rng, size=64, n_shapes=4, texture=True):
    """Piecewise-constant depth with an RGB rendering sharing its edges.

    The RGB image also carries guidance-only stripes that have no depth edge.
    """
    h = w = size
    depth = np.full((h, w), rng.uniform(0.6, 0.9))
    color = np.empty((h, w, 3))
    color[:] = rng.uniform(0.2, 0.8, size=3)
    for _ in range(n_shapes):
        mask = _shape_mask(rng, h, w)
        depth[mask] = rng.uniform(0.1, 0.9)
        color[mask] = rng.uniform(0.0, 1.0, size=3)
    if texture:
        yy, xx = np.mgrid[0:h, 0:w]
        period = int(rng.integers(6, 12))
        stripes = ((xx + yy) // period) % 2 == 0
        region = _shape_mask(rng, h, w)
        color[stripes & region] *= 0.6
    color += rng.normal(0, 0.01, size=color.shape)
    return np.clip(color, 0, 1).astype(np.float32), depth.astype(np.float32)


def synthetic_dataset(n, size=64, seed=0, texture=True):
    rng = np.random.default_rng(seed)
    return [synthetic_pair(rng, size, texture=texture) for _ in range(n)]


# training -----------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    halve_every: int = 80
    epochs: int = 100
    batch_size: int = 32
    patch_size: int = 256
    scale: int = 16
    mode: str = "nearest"
    noise_sigma: float = 0.0
    seed: int = 0
    iterations: int | None = None
    augment: bool = True
    weights: LossWeights = DEFAULT_WEIGHTS


@dataclass
class TrainResult:
    params: dict
    optimizer: OptimizerState
    history: list
    epoch: int


def make_training_sample(guidance, gt, hyper, rng):
    """augment -> crop -> degrade -> bicubic upsample; returns (t, g, gt) as C x H x W."""
    pair = SamplePair(guidance=guidance_expand(guidance), target_gt=np.asarray(gt))
    if hyper.augment:
        pair = augment(pair, rng)
    size = min(hyper.patch_size, *pair.target_gt.shape[:2])
    size -= size % hyper.scale
    pair = crop_patches(pair, size, rng)
    lr = degrade(pair.target_gt, hyper.scale, hyper.mode, hyper.noise_sigma, rng=rng)
    t = upsample_input(lr, hyper.scale)
    chw = lambda a: (a[None] if a.ndim == 2 else np.moveaxis(a, 2, 0)).astype(np.float32)  # noqa: E731
    return chw(t), chw(pair.guidance), chw(pair.target_gt)


def batches_per_epoch(n, batch_size):
    return max(1, math.ceil(n / batch_size))


def total_epochs(n, hyper):
    if hyper.iterations is None:
        return hyper.epochs
    return math.ceil(hyper.iterations / batches_per_epoch(n, hyper.batch_size))


def train(dataset, cfg, hyper=TrainConfig(), params=None, optimizer=None, start_epoch=0,
          on_epoch=None):
    """Adam training on (guidance, ground-truth target) pairs.

    Learning rate halves every ``hyper.halve_every`` epochs; omega3 decays
    linearly to zero at the final epoch. Loss weights follow the ablation
    variant in ``cfg``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    n_epochs = total_epochs(len(dataset), hyper)
    weights = variant_weights(cfg.variant, replace(hyper.weights, start_epoch=0,
                                                   end_epoch=max(n_epochs - 1, 1)))
    rng = np.random.default_rng(hyper.seed)
    if params is None:
        params = init_params(cfg, hyper.seed)
    state = optimizer if optimizer is not None else OptimizerState(learning_rate=hyper.lr)
    history, steps = [], state.step_count
    max_steps = hyper.iterations
    last_epoch = n_epochs
    if max_steps is not None:
        # iteration budgets count total optimizer steps, including those before a resume
        remaining = max(max_steps - steps, 0)
        last_epoch = max(n_epochs, start_epoch + math.ceil(remaining / batches_per_epoch(len(dataset),
                                                                                         hyper.batch_size)))
    epoch = start_epoch - 1
    for epoch in range(start_epoch, last_epoch):
        if max_steps is not None and steps >= max_steps:
            epoch -= 1
            break
        state.learning_rate = step_lr(hyper.lr, epoch, hyper.halve_every)
        order = rng.permutation(len(dataset))
        sums, count = {}, 0
        for b, start in enumerate(range(0, len(order), hyper.batch_size)):
            samples = [make_training_sample(*dataset[i], hyper, rng)
                       for i in order[start:start + hyper.batch_size]]
            t, g, gt = (np.stack(x) for x in zip(*samples))
            out = forward(params, cfg, t, g)
            loss, terms = total_loss(out.outputs, gt, weights, epoch)
            if not np.isfinite(terms["total"]):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}: {terms}")
            grads = T.backward(loss, params)
            adam_step(params, grads, state)
            for key, val in terms.items():
                sums[key] = sums.get(key, 0.0) + val
            count += 1
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        row = {"epoch": epoch, **{k: v / count for k, v in sums.items()}, "lr": state.learning_rate}
        history.append(row)
        log.debug("epoch %d: %s", epoch, row)
        if on_epoch is not None:
            on_epoch(row)
        if max_steps is not None and steps >= max_steps:
            break
    return TrainResult(params=params, optimizer=state, history=history, epoch=epoch + 1)


LOSS_CSV_FIELDS = ("epoch", "l1", "ba", "ms", "omega3", "total")


def write_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOSS_CSV_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow(row)


def dataset_l1(model, dataset, hyper):
    """Mean L1 of the model's final output over a dataset, without augmentation."""
    total = 0.0
    for guidance, gt in dataset:
        lr = degrade(gt, hyper.scale, hyper.mode)
        pred = model(upsample_input(lr, hyper.scale), guidance_expand(guidance))
        total += float(np.mean(np.abs(pred - gt)))
    return total / len(dataset)


def predict_sr(model, guidance, lr, scale):
    """Super-resolve a low-resolution target with a trained model."""
    return per_channel_apply(model, upsample_input(lr, scale), guidance)

