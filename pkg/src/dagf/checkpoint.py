"""Binary checkpoint archive.

Layout (little-endian)::

    b"DAGF"  u32 version
    metadata: u32 m, u32 k, u32 channels, u32 variant id, f64 lambda_init,
              u32 target channels, u32 guidance channels, u32 normalize flag
    records until EOF: u32 name length, utf-8 name, u8 dtype tag, u32 rank,
                       u32 dims[rank], raw payload

Optimizer moments are stored as extra records under ``__adam__.m.``/``__adam__.v.``
so training can resume.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .network import VARIANTS, DagfConfig, param_spec
from .optim import OptimizerState
from .tensor import Tensor

MAGIC = b"DAGF"
VERSION = 1
_META = struct.Struct("<IIIIdIII")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}
_ADAM = "__adam__."


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: dict
    cfg: DagfConfig
    optimizer: OptimizerState | None = None
    epoch: int = 0


def _record(name, arr):
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _TAGS:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<BI", _TAGS[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(_DTYPES[_TAGS[arr.dtype]]).tobytes()


def save_checkpoint(params, cfg, path, optimizer=None, epoch=0):
    meta = _META.pack(cfg.m, cfg.k, cfg.channels, cfg.variant_id, cfg.lambda_init,
                      cfg.target_channels, cfg.guidance_channels, int(cfg.normalize_kernels))
    chunks = [MAGIC, struct.pack("<I", VERSION), meta]
    for name, p in params.items():
        chunks.append(_record(name, p.data))
    if optimizer is not None:
        chunks.append(_record(_ADAM + "hyper", np.array(
            [optimizer.learning_rate, optimizer.beta1, optimizer.beta2, optimizer.eps])))
        chunks.append(_record(_ADAM + "counters", np.array([optimizer.step_count, epoch], dtype=np.int64)))
        for name in optimizer.m:
            chunks.append(_record(_ADAM + "m." + name, optimizer.m[name]))
            chunks.append(_record(_ADAM + "v." + name, optimizer.v[name]))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def _read(buf, pos, fmt):
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise CorruptCheckpointError("checkpoint truncated")
    return struct.unpack_from(fmt, buf, pos), pos + size


def read_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a DAGF checkpoint")
    (version,), pos = _read(buf, 4, "<I")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    (m, k, c, vid, lam, tc, gc, norm), pos = _read(buf, pos, _META.format)
    if not 1 <= vid <= len(VARIANTS):
        raise CorruptCheckpointError(f"{path}: unknown variant id {vid}")
    try:
        cfg = DagfConfig(m=m, k=k, channels=c, variant=VARIANTS[vid - 1], lambda_init=lam,
                         target_channels=tc, guidance_channels=gc, normalize_kernels=bool(norm))
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: invalid metadata ({exc})") from exc
    records = {}
    while pos < len(buf):
        (n,), pos = _read(buf, pos, "<I")
        if pos + n > len(buf):
            raise CorruptCheckpointError("checkpoint truncated")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (tag, rank), pos = _read(buf, pos, "<BI")
        if tag not in _DTYPES:
            raise CorruptCheckpointError(f"unknown dtype tag {tag} for {name!r}")
        dims, pos = _read(buf, pos, f"<{rank}I")
        dt = _DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(buf):
            raise CorruptCheckpointError(f"payload of {name!r} truncated")
        records[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos) \
            .reshape(dims).astype(dt.newbyteorder("="))
        pos += nbytes

    expected = {name: shape for name, shape, _ in param_spec(cfg)}
    params = {}
    for name, shape in expected.items():
        if name not in records:
            raise CorruptCheckpointError(f"{path}: missing parameter {name!r}")
        if records[name].shape != tuple(shape):
            raise CorruptCheckpointError(f"{path}: {name!r} has shape {records[name].shape}, expected {shape}")
        params[name] = Tensor(records[name], requires_grad=True)
    extra = [n for n in records if n not in expected and not n.startswith(_ADAM)]
    if extra:
        raise CorruptCheckpointError(f"{path}: unexpected records {extra[:3]}")

    optimizer, epoch = None, 0
    if _ADAM + "hyper" in records:
        lr, b1, b2, eps = records[_ADAM + "hyper"].tolist()
        step, epoch = (int(v) for v in records[_ADAM + "counters"])
        optimizer = OptimizerState(learning_rate=lr, beta1=b1, beta2=b2, eps=eps, step_count=step)
        for name in expected:
            if _ADAM + "m." + name in records:
                optimizer.m[name] = records[_ADAM + "m." + name]
                optimizer.v[name] = records[_ADAM + "v." + name]
    return Checkpoint(params=params, cfg=cfg, optimizer=optimizer, epoch=epoch)


def load_checkpoint(path, expected_cfg=None):
    """Load ``(params, cfg)``; raise ConfigMismatchError if ``expected_cfg`` differs."""
    ckpt = read_checkpoint(path)
    if expected_cfg is not None and expected_cfg != ckpt.cfg:
        raise ConfigMismatchError(f"{path}: checkpoint config {ckpt.cfg} != expected {expected_cfg}")
    return ckpt.params, ckpt.cfg
