"""Parameter checkpoints: "MRGW" binary container of named float32 arrays.

Layout (all integers u32 little-endian):
    magic "MRGW" | format version | array count
    per array: name length | UTF-8 name | rank | extents... | float32 payload

Arrays are written in insertion order so identical parameter dicts always
serialize to identical bytes.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Dict, Mapping, Union

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor

MAGIC = b"MRGW"
VERSION = 1


def _as_array(value) -> np.ndarray:
    if isinstance(value, Tensor):
        value = value.data
    return np.ascontiguousarray(np.asarray(value, dtype="<f4"))


def save_checkpoint(path: Union[str, os.PathLike],
                    arrays: Mapping[str, Union[np.ndarray, Tensor]]):
    """Atomically write a checkpoint (temp file + rename)."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        data = _as_array(value)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    payload = b"".join(chunks)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: Union[str, os.PathLike]) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    offset = 12
    arrays: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            extents = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            n = int(np.prod(extents)) if rank else 1
            data = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
            arrays[name] = data.reshape(extents).copy()
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from exc
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return arrays
