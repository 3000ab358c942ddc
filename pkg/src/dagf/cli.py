"""``dagf`` command line: filter, train, eval, texture, gradcheck, synth.

Exit codes: 0 success, 2 validation error, 3 runtime or numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, read_checkpoint, save_checkpoint
from .data import (EvalProtocol, TrainConfig, TrainingDivergedError, degrade, guidance_expand,
                   per_channel_apply, resize_image, rmse, synthetic_dataset, texture_remove, train,
                   upsample_input, write_loss_csv)
from .fileio import read_image, read_manifest, write_fimg, write_image, write_kernel_field, write_manifest
from .filters import BilateralParams, GIFParams, bilateral_filter, guided_image_filter, joint_bilateral_upsample
from .losses import LossWeights
from .network import VARIANTS, DagfConfig, DagfModel
from .gradsuite import run_suite

log = logging.getLogger("dagf")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
FILTERS = ("bilateral", "gif", "jbu", "dagf")
EVAL_METHODS = ("bicubic", "nearest", "gif", "jbu", "bilateral", "dagf")


class ValidationError(Exception):
    pass


# helpers --------------------------------------------------------------------------
def _thread_limits(strict):
    """Cap BLAS threads: one thread in strict mode, else DAGF_NUM_THREADS if set."""
    env = os.environ.get("DAGF_NUM_THREADS")
    limit = 1 if strict else None
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"DAGF_NUM_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValidationError("DAGF_NUM_THREADS must be >= 1")
        limit = n if limit is None else min(limit, n)
    if limit is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=limit)


def _require_file(path, what):
    if path is None:
        raise ValidationError(f"--{what} is required")
    if not Path(path).is_file():
        raise ValidationError(f"{what} file not found: {path}")
    return Path(path)


def _model_config(args, target_channels=1):
    try:
        return DagfConfig(m=args.levels, k=args.kernel_size, channels=args.channels, variant=args.variant,
                          target_channels=target_channels)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _load_model(path):
    try:
        ckpt = read_checkpoint(_require_file(path, "checkpoint"))
    except CheckpointError as exc:
        raise ValidationError(f"cannot load checkpoint: {exc}") from None
    return DagfModel(ckpt.cfg, ckpt.params), ckpt


def _luminance(g):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 2:
        return g
    if g.shape[2] == 1:
        return g[:, :, 0]
    return g[:, :, :3] @ np.array([0.299, 0.587, 0.114])


def _classical_params(args, name):
    try:
        if name == "gif":
            return GIFParams(args.radius, args.epsilon)
        return BilateralParams(args.sigma_s, args.sigma_r, args.radius)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _echo(args, extra=None):
    """Log seed and every numeric setting in effect."""
    skip = {"func", "command"}
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    if extra:
        settings.update(extra)
    log.info("dagf %s %s: %s", __version__, args.command, " ".join(f"{k}={v}" for k, v in settings.items()))


# filter -------------------------------------------------------------------------------
def _dump_kernels(model, t, g, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    step = 2 ** (model.cfg.m - 1)
    h, w = t.shape[:2]
    ph, pw = (-h) % step, (-w) % step
    t3 = t[:, :, None] if t.ndim == 2 else t
    pad = ((0, ph), (0, pw), (0, 0))
    dtype = next(iter(model.params.values())).dtype
    tt = np.pad(t3[:, :, :1], pad, mode="edge").transpose(2, 0, 1)[None].astype(dtype)
    gg = np.pad(guidance_expand(g), pad, mode="edge").transpose(2, 0, 1)[None].astype(dtype)
    out = model.run(tt, gg)
    written = []
    for i, res in enumerate(out.kernels):
        for tag, field in (("w", res.w), ("wt", res.wt), ("wg", res.wg)):
            if field is not None:
                path = directory / f"stage{i}_{tag}.fimg"
                write_kernel_field(path, field.data[0])
                written.append(path)
        if res.attention is not None:
            path = directory / f"stage{i}_attention.fimg"
            write_fimg(path, res.attention.data[0, 0])
            written.append(path)
    for path in written:
        log.info("kernel dump: %s", path)


def cmd_filter(args):
    t_path = _require_file(args.target, "target")
    g_path = _require_file(args.guidance, "guidance")
    if args.out is None:
        raise ValidationError("--out is required")
    if args.filter == "dagf":
        model, _ = _load_model(args.checkpoint)
    elif args.filter in ("gif", "bilateral", "jbu"):
        params = _classical_params(args, args.filter)
    if args.scale < 1:
        raise ValidationError("--scale must be >= 1")
    t = read_image(t_path).astype(np.float64)
    g = read_image(g_path).astype(np.float64)
    h, w = g.shape[:2]
    if args.filter == "jbu" or args.scale > 1:
        if t.shape[:2] != (h // args.scale, w // args.scale) or h % args.scale or w % args.scale:
            raise ValidationError(f"target {t.shape[:2]} is not guidance {h}x{w} divided by scale {args.scale}")
    elif t.shape[:2] != (h, w):
        raise ValidationError(f"target {t.shape[:2]} and guidance {(h, w)} differ in size")
    _echo(args)

    if args.filter == "jbu":
        out = joint_bilateral_upsample(t, _luminance(g), params, args.scale)
    else:
        if args.scale > 1:
            t = upsample_input(t, args.scale)
        if args.filter == "gif":
            out = guided_image_filter(t, g, params)
        elif args.filter == "bilateral":
            out = bilateral_filter(t, _luminance(g), params)
        else:
            out = per_channel_apply(model, t, g)
            if args.dump_kernels:
                _dump_kernels(model, t, g, args.dump_kernels)
    write_image(args.out, out, bits=args.bits)
    log.info("wrote %s", args.out)


# train --------------------------------------------------------------------------------
def _dataset_hash(pairs):
    h = hashlib.sha256()
    for g, t in pairs:
        h.update(np.ascontiguousarray(g).tobytes())
        h.update(np.ascontiguousarray(t).tobytes())
    return h.hexdigest()


def _load_pairs(manifest):
    pairs = read_manifest(manifest)
    missing = [p for pair in pairs for p in pair if not Path(p).is_file()]
    if missing:
        raise ValidationError("missing files:\n  " + "\n  ".join(missing))
    if not pairs:
        raise ValidationError(f"manifest {manifest} lists no pairs")
    return pairs


def _read_pair(g_path, t_path):
    g = read_image(g_path).astype(np.float32)
    t = read_image(t_path).astype(np.float32)
    if t.ndim == 3:
        t = t[:, :, 0]
    if g.shape[:2] != t.shape[:2]:
        raise ValidationError(f"{g_path} and {t_path} differ in size")
    return g, t


def _loss_weights(args):
    try:
        return LossWeights(args.omega1, args.omega2, args.omega3, args.omega3_schedule)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmd_train(args):
    if args.out is None:
        raise ValidationError("--out (output directory) is required")
    if args.manifest is None and args.synthetic is None:
        raise ValidationError("give --manifest or --synthetic N")
    paths = None
    if args.manifest is not None:
        paths = _load_pairs(_require_file(args.manifest, "manifest"))
    resume = None
    if args.checkpoint is not None:
        _, resume = _load_model(args.checkpoint)
        cfg = resume.cfg
    else:
        cfg = _model_config(args)
    weights = _loss_weights(args)
    if args.scale not in (1, 2, 4, 8, 16):
        raise ValidationError("--scale must be one of 1, 2, 4, 8, 16")
    for name in ("lr", "epochs", "batch_size", "patch_size"):
        if getattr(args, name) <= 0:
            raise ValidationError(f"--{name.replace('_', '-')} must be positive")
    if args.iterations is not None and args.iterations < 1:
        raise ValidationError("--iterations must be >= 1")
    step = max(args.scale, 2 ** (cfg.m - 1))
    if args.patch_size % step:
        raise ValidationError(f"--patch-size must be divisible by {step}")
    hyper = TrainConfig(lr=args.lr, halve_every=args.halve_every, epochs=args.epochs,
                        batch_size=args.batch_size, patch_size=args.patch_size, scale=args.scale,
                        mode=args.mode, noise_sigma=args.noise_sigma, seed=args.seed,
                        iterations=args.iterations, weights=weights)
    _echo(args, {"levels": cfg.m, "kernel_size": cfg.k, "channels": cfg.channels, "variant": cfg.variant,
                 "resume_epoch": resume.epoch if resume else 0})

    if paths is not None:
        dataset = [_read_pair(g, t) for g, t in paths]
    else:
        dataset = synthetic_dataset(args.synthetic, args.synthetic_size, seed=args.seed)
    smallest = min(min(t.shape[:2]) for _, t in dataset)
    if smallest < step:
        raise ValidationError(f"images must be at least {step} pixels on each side")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None and resume.optimizer is not None and args.iterations is not None:
        # --iterations counts new steps; the loop compares against the running step count
        hyper = replace(hyper, iterations=resume.optimizer.step_count + args.iterations)
    result = train(dataset, cfg, hyper,
                   params=resume.params if resume else None,
                   optimizer=resume.optimizer if resume else None,
                   start_epoch=resume.epoch if resume else 0,
                   on_epoch=lambda row: log.info("epoch %d l1=%.5f total=%.5f lr=%.2e",
                                                 row["epoch"], row["l1"], row["total"], row["lr"]))
    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(result.params, cfg, ckpt_path, optimizer=result.optimizer, epoch=result.epoch)
    write_loss_csv(out_dir / "loss.csv", result.history)
    manifest = {
        "seed": args.seed,
        "model": asdict(cfg),
        "train": {k: v for k, v in asdict(hyper).items() if k != "weights"},
        "loss_weights": asdict(weights),
        "dataset": {"source": str(args.manifest) if paths is not None else f"synthetic:{args.synthetic}",
                    "pairs": len(dataset), "sha256": _dataset_hash(dataset)},
        "steps": result.optimizer.step_count,
        "epochs_completed": result.epoch,
        "strict": args.strict,
        "version": __version__,
    }
    (out_dir / "run.json").write_text(json.dumps(manifest, indent=2))
    for name in ("model.ckpt", "loss.csv", "run.json"):
        log.info("wrote %s", out_dir / name)


# eval ---------------------------------------------------------------------------------
def super_resolve(method, lr, guidance, scale, args, model=None):
    """Upsample ``lr`` by ``scale`` with one of the comparison methods."""
    h, w = lr.shape[0] * scale, lr.shape[1] * scale
    if method == "nearest":
        return resize_image(lr, h, w, "nearest")
    if method == "bicubic":
        return upsample_input(lr, scale)
    if method == "jbu":
        return joint_bilateral_upsample(lr, _luminance(guidance), _classical_params(args, "jbu"), scale)
    up = upsample_input(lr, scale)
    if method == "gif":
        return guided_image_filter(up, _luminance(guidance), _classical_params(args, "gif"))
    if method == "bilateral":
        return bilateral_filter(up, _luminance(guidance), _classical_params(args, "bilateral"))
    return per_channel_apply(model, up, guidance)


def cmd_eval(args):
    manifest = _require_file(args.manifest, "manifest")
    if args.out is None:
        raise ValidationError("--out (metrics CSV) is required")
    pairs = _load_pairs(manifest)
    model = None
    if "dagf" in args.methods:
        model, _ = _load_model(args.checkpoint)
    for m in args.methods:
        if m in ("gif", "jbu", "bilateral"):
            _classical_params(args, "gif" if m == "gif" else "bilateral")
    try:
        proto = EvalProtocol(args.convention, args.border_crop, args.value_scale)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    scales = args.scales or [args.scale]
    if any(s < 1 for s in scales):
        raise ValidationError("scales must be >= 1")
    _echo(args)
    rng = np.random.default_rng(args.seed)
    rows = []
    for scale in scales:
        for method in args.methods:
            errors = []
            for g_path, t_path in pairs:
                g, gt = _read_pair(g_path, t_path)
                gt = gt.astype(np.float64)
                hh, ww = (gt.shape[0] // scale) * scale, (gt.shape[1] // scale) * scale
                gt, g = gt[:hh, :ww], g[:hh, :ww]
                lr = degrade(gt, scale, args.mode, args.noise_sigma, rng=rng)
                pred = super_resolve(method, lr, g, scale, args, model)
                err = rmse(pred, gt, proto)
                errors.append(err)
                rows.append({"dataset": manifest.stem, "image": Path(t_path).name, "scale": scale,
                             "mode": args.mode, "method": method, "rmse": f"{err:.6f}"})
            mean = float(np.mean(errors))
            rows.append({"dataset": manifest.stem, "image": "average", "scale": scale, "mode": args.mode,
                         "method": method, "rmse": f"{mean:.6f}"})
            log.info("%s x%d %s: average RMSE %.4f over %d images", method, scale, args.mode, mean, len(errors))
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["dataset", "image", "scale", "mode", "method", "rmse"])
        writer.writeheader()
        writer.writerows(rows)
    log.info("wrote %s", args.out)


# texture / gradcheck / synth ---------------------------------------------------------------------
def cmd_texture(args):
    path = _require_file(args.input, "input")
    if args.out is None:
        raise ValidationError("--out is required")
    iterations = 4 if args.iterations is None else args.iterations
    if iterations < 1:
        raise ValidationError("--iterations must be >= 1")
    model, _ = _load_model(args.checkpoint)
    img = read_image(path).astype(np.float64)
    _echo(args, {"iterations": iterations})
    out = Path(args.out)

    def save_step(i, result):
        step_path = out.with_name(f"{out.stem}_iter{i}{out.suffix}")
        write_image(step_path, result)
        log.info("iteration %d: %s", i, step_path)

    write_image(out, texture_remove(img, model, iterations, on_iteration=save_step))
    log.info("wrote %s", out)


def cmd_gradcheck(args):
    _echo(args)
    results = run_suite(seed=args.seed, include_model=not args.skip_model)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  max rel err {r.error:.3e}  (tol {r.tolerance:.0e})  "
              f"{'ok' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise RuntimeError(f"gradient check failed for: {', '.join(failed)}")


def cmd_synth(args):
    if args.out is None:
        raise ValidationError("--out (directory) is required")
    if args.count < 1 or args.size < 8:
        raise ValidationError("--count must be >= 1 and --size >= 8")
    _echo(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (color, depth) in enumerate(synthetic_dataset(args.count, args.size, seed=args.seed)):
        g_name, t_name = f"rgb_{i:03d}.png", f"depth_{i:03d}.png"
        write_image(out / g_name, color)
        write_image(out / t_name, depth, bits=16)
        entries.append((g_name, t_name))
    write_manifest(out / "manifest.tsv", entries)
    log.info("wrote %d pairs and %s", len(entries), out / "manifest.tsv")


# parser -----------------------------------------------------------------------------------
def _add_model_flags(p):
    p.add_argument("--levels", type=int, default=3, help="pyramid levels m (default 3)")
    p.add_argument("--kernel-size", type=int, default=3, help="odd kernel size k (default 3)")
    p.add_argument("--channels", type=int, default=32, help="feature width (default 32)")
    p.add_argument("--variant", choices=VARIANTS, default="Model7", help="ablation variant (default Model7)")


def _add_classical_flags(p):
    p.add_argument("--radius", type=int, default=2, help="filter window radius (default 2)")
    p.add_argument("--epsilon", type=float, default=1e-2, help="guided filter regulariser (default 1e-2)")
    p.add_argument("--sigma-s", type=float, default=1.0, help="bilateral spatial sigma (default 1.0)")
    p.add_argument("--sigma-r", type=float, default=0.1, help="bilateral range sigma (default 0.1)")


def _add_degradation_flags(p, scale_default=16):
    p.add_argument("--scale", type=int, default=scale_default, help=f"upsampling factor (default {scale_default})")
    p.add_argument("--mode", choices=("nearest", "bicubic"), default="nearest", help="downsampling operator")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="Gaussian noise std on the 0-255 scale")


def build_parser():
    parser = argparse.ArgumentParser(prog="dagf", description="Deep attentional guided filtering toolkit")
    parser.add_argument("--version", action="version", version=f"dagf {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--strict", action="store_true", help="single-threaded, bit-reproducible run")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", parents=[common], help="filter one target image with a guidance image")
    p.add_argument("--filter", choices=FILTERS, required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--guidance", required=True)
    p.add_argument("--scale", type=int, default=1, help="target is this many times smaller than the guidance")
    p.add_argument("--checkpoint", help="DAGF checkpoint (for --filter dagf)")
    p.add_argument("--dump-kernels", metavar="DIR", help="write per-stage kernel fields and attention maps")
    p.add_argument("--bits", type=int, choices=(8, 16), default=8, help="PNG bit depth of the output")
    _add_classical_flags(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", parents=[common], help="train a DAGF model")
    p.add_argument("--manifest", help="tab-separated (guidance, target) list")
    p.add_argument("--synthetic", type=int, help="train on N generated synthetic pairs instead")
    p.add_argument("--synthetic-size", type=int, default=64)
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    _add_model_flags(p)
    _add_degradation_flags(p)
    p.add_argument("--lr", type=float, default=1e-4, help="initial learning rate (default 1e-4)")
    p.add_argument("--halve-every", type=int, default=80, help="halve the learning rate every N epochs")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--iterations", type=int, help="stop after this many optimizer steps")
    p.add_argument("--omega1", type=float, default=1.0)
    p.add_argument("--omega2", type=float, default=0.001)
    p.add_argument("--omega3", type=float, default=1.0)
    p.add_argument("--omega3-schedule", choices=("linear", "constant"), default="linear")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="RMSE of super-resolution methods on a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", nargs="+", choices=EVAL_METHODS, default=["bicubic"])
    p.add_argument("--checkpoint", help="DAGF checkpoint (for the dagf method)")
    _add_degradation_flags(p)
    p.add_argument("--scales", type=int, nargs="+", help="evaluate several scales (overrides --scale)")
    p.add_argument("--convention", choices=("byte-range", "centimeters"), default="byte-range")
    p.add_argument("--border-crop", type=int, default=0)
    p.add_argument("--value-scale", type=float, default=1.0,
                   help="multiplier from stored [0, 1] values to centimetres")
    _add_classical_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("texture", parents=[common], help="iterative self-guided texture removal")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--iterations", type=int, help="number of passes (default 4)")
    p.set_defaults(func=cmd_texture)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--skip-model", action="store_true", help="skip the end-to-end model check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic RGB-D dataset and manifest")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="dagf: %(message)s", stream=sys.stderr, force=True)
    try:
        with _thread_limits(args.strict):
            args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (TrainingDivergedError, FloatingPointError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
