"""Image and kernel-field files: PNG (8/16-bit) and the raw ``FIMG`` float format.

FIMG layout: b"FIMG", u32 height, u32 width, u32 channels, then
height*width*channels little-endian float32 values in H, W, C order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

FIMG_MAGIC = b"FIMG"


def write_fimg(path, img):
    arr = np.asarray(img, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(FIMG_MAGIC + struct.pack("<III", h, w, c) + np.ascontiguousarray(arr).tobytes())


def read_fimg(path):
    buf = Path(path).read_bytes()
    if buf[:4] != FIMG_MAGIC or len(buf) < 16:
        raise ValueError(f"{path}: not a FIMG file")
    h, w, c = struct.unpack_from("<III", buf, 4)
    if len(buf) != 16 + 4 * h * w * c:
        raise ValueError(f"{path}: payload size does not match header {h}x{w}x{c}")
    arr = np.frombuffer(buf, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float32)
    return arr[:, :, 0] if c == 1 else arr


def read_png(path):
    """Return (array, max_value); 16-bit grayscale keeps its integer scale."""
    with PILImage.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.asarray(im, dtype=np.float64), 65535.0
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float64), 255.0


def write_png(path, img, bits=8):
    """Write a [0, 1] image as 8-bit (gray or RGB) or 16-bit grayscale PNG."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if bits == 16:
        if arr.ndim != 2:
            raise ValueError("16-bit PNG output supports grayscale only")
        PILImage.fromarray(np.round(arr * 65535).astype(np.uint16)).save(path)
    else:
        PILImage.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


def read_image(path):
    """Read PNG or FIMG; PNG values are scaled to [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in (".fimg", ".raw"):
        return read_fimg(path)
    arr, peak = read_png(path)
    return arr / peak


def write_image(path, img, bits=8):
    path = Path(path)
    if path.suffix.lower() in (".fimg", ".raw"):
        write_fimg(path, img)
    else:
        write_png(path, img, bits=bits)


def write_kernel_field(path, w):
    """Dump a (k*k, H, W) kernel field as FIMG with a JSON sidecar holding k."""
    w = np.asarray(w)
    kk = w.shape[0]
    k = int(round(kk ** 0.5))
    write_fimg(path, np.transpose(w, (1, 2, 0)))
    Path(str(path) + ".json").write_text(json.dumps({"k": k}))


def read_kernel_field(path):
    k = json.loads(Path(str(path) + ".json").read_text())["k"]
    arr = read_fimg(path)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] != k * k:
        raise ValueError(f"{path}: {arr.shape[2]} channels but sidecar says k={k}")
    return np.transpose(arr, (2, 0, 1))


def read_manifest(path):
    """Tab-separated (guidance path, target path) pairs, relative to the manifest."""
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 tab-separated paths")
        pairs.append(tuple(p if Path(p).is_absolute() else str(path.parent / p) for p in parts))
    return pairs


def write_manifest(path, pairs):
    Path(path).write_text("".join(f"{g}\t{t}\n" for g, t in pairs))
