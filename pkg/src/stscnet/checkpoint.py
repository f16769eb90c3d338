"""Named-array checkpoint files.

Little-endian layout: magic "STSP", u32 version, u32 entry count, then per
entry {u32 name length, UTF-8 name bytes, u32 rank, u32 dims[rank],
row-major 32-bit float data}. Entry order is preserved round-trip.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .errors import CorruptInput, IOFailure

__all__ = ["save_checkpoint", "load_checkpoint", "CKPT_MAGIC", "CKPT_VERSION"]

CKPT_MAGIC = b"STSP"
CKPT_VERSION = 1
_MAX_RANK = 8


def save_checkpoint(path: str, arrays: dict[str, np.ndarray]) -> None:
    blob = io.BytesIO()
    blob.write(CKPT_MAGIC)
    blob.write(struct.pack("<II", CKPT_VERSION, len(arrays)))
    for name, arr in arrays.items():
        # asarray keeps rank 0; ascontiguousarray would promote it to rank 1
        data = np.asarray(arr, dtype="<f4", order="C")
        raw_name = name.encode("utf-8")
        blob.write(struct.pack("<I", len(raw_name)))
        blob.write(raw_name)
        blob.write(struct.pack("<I", data.ndim))
        blob.write(struct.pack(f"<{data.ndim}I", *data.shape))
        blob.write(data.tobytes(order="C"))
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(blob.getvalue())
        os.replace(tmp, path)
    except OSError as e:
        raise IOFailure(f"save_checkpoint: cannot write {path}: {e}") from e


def _take(buf: io.BytesIO, n: int, path: str, what: str) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise CorruptInput(f"load_checkpoint: {path} truncated reading {what}")
    return raw


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    if not os.path.isfile(path):
        raise IOFailure(f"load_checkpoint: missing file {path}")
    try:
        with open(path, "rb") as f:
            buf = io.BytesIO(f.read())
    except OSError as e:
        raise IOFailure(f"load_checkpoint: cannot read {path}: {e}") from e
    if _take(buf, 4, path, "magic") != CKPT_MAGIC:
        raise CorruptInput(f"load_checkpoint: {path} is not a checkpoint")
    version, count = struct.unpack("<II", _take(buf, 8, path, "header"))
    if version != CKPT_VERSION:
        raise CorruptInput(f"load_checkpoint: {path} has unsupported version {version}")
    arrays: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", _take(buf, 4, path, f"entry {i} name length"))
        if name_len == 0 or name_len > 4096:
            raise CorruptInput(f"load_checkpoint: {path} entry {i} has bad name length")
        name = _take(buf, name_len, path, f"entry {i} name").decode("utf-8")
        (rank,) = struct.unpack("<I", _take(buf, 4, path, f"{name} rank"))
        if rank > _MAX_RANK:
            raise CorruptInput(f"load_checkpoint: {path} entry {name} has rank {rank}")
        dims = struct.unpack(f"<{rank}I", _take(buf, 4 * rank, path, f"{name} dims"))
        n_elem = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = _take(buf, 4 * n_elem, path, f"{name} data")
        if name in arrays:
            raise CorruptInput(f"load_checkpoint: {path} repeats entry {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if buf.read(1):
        raise CorruptInput(f"load_checkpoint: {path} has trailing bytes")
    return arrays
