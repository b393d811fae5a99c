"""Image and saliency-map file formats.

PNG covers 8- and 16-bit grayscale/RGB interchange; precise saliency maps
travel in the "SMAP" binary: magic "SMAP", u32 width, u32 height, then
float32 little-endian values row-major.  All writes are atomic
(temp file + rename).
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np
from PIL import Image

from .errors import ShapeError

SMAP_MAGIC = b"SMAP"


def _atomic_write(path, data: bytes):
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_image(path) -> np.ndarray:
    """Load a PNG as float (C, H, W) in [0, 1]; C is 1 or 3."""
    img = Image.open(path)
    if img.mode in ("I", "I;16"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
        return arr[None]
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64)[None] / 255.0
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return rgb.transpose(2, 0, 1)


def write_image(path, pixels: np.ndarray, bit_depth: int = 8):
    """Write float (C, H, W) pixels in [0, 1] as an 8- or 16-bit PNG."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 2:
        pixels = pixels[None]
    if pixels.ndim != 3 or pixels.shape[0] not in (1, 3):
        raise ShapeError(f"expected (1|3, H, W) pixels, got {pixels.shape}")
    clipped = np.clip(pixels, 0.0, 1.0)
    if bit_depth == 8:
        quant = np.rint(clipped * 255.0).astype(np.uint8)
        if quant.shape[0] == 1:
            img = Image.fromarray(quant[0], mode="L")
        else:
            img = Image.fromarray(quant.transpose(1, 2, 0), mode="RGB")
    elif bit_depth == 16:
        if clipped.shape[0] != 1:
            raise ShapeError("16-bit PNG output supports grayscale only")
        quant = np.rint(clipped[0] * 65535.0).astype(np.uint16)
        img = Image.fromarray(quant)
    else:
        raise ShapeError(f"bit_depth must be 8 or 16, got {bit_depth}")
    import io as _io
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    _atomic_write(path, buf.getvalue())


def write_smap(path, values: np.ndarray):
    values = np.ascontiguousarray(np.asarray(values, dtype="<f4"))
    if values.ndim != 2:
        raise ShapeError(f"SMAP stores a 2-D map, got {values.shape}")
    h, w = values.shape
    _atomic_write(path, SMAP_MAGIC + struct.pack("<II", w, h)
                  + values.tobytes())


def read_smap(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SMAP_MAGIC:
        raise ShapeError(f"{path}: bad SMAP magic {blob[:4]!r}")
    w, h = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * w * h
    if len(blob) != expected:
        raise ShapeError(f"{path}: expected {expected} bytes, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(h, w).copy()
