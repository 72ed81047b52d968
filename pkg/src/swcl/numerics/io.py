"""On-disk formats: F32T tensors, checkpoints, JSON-lines, provenance sidecars.

Tensor layout: ``b"F32T"``, little-endian u32 ndim, ndim u32 extents, then a
row-major little-endian float32 payload.  A checkpoint is a u32 entry count
followed by ``(u32 name length, UTF-8 name, F32T tensor)`` entries in
lexicographic name order.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"F32T"


class FormatError(ValueError):
    pass


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_exact(buf: io.BufferedIOBase, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise FormatError(f"truncated tensor data: wanted {n} bytes, got {len(data)}")
    return data


def read_tensor_from(buf) -> np.ndarray:
    if _read_exact(buf, 4) != MAGIC:
        raise FormatError("bad magic, expected F32T")
    (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
    shape = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim))
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(buf, 4 * count)
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)


def decode_tensor(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    arr = read_tensor_from(buf)
    if buf.read(1):
        raise FormatError("trailing bytes after tensor payload")
    return arr


def encode_checkpoint(params: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(params))]
    for name in sorted(params):
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, encode_tensor(params[name])]
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    buf = io.BytesIO(data)
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    params = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", _read_exact(buf, 4))
        name = _read_exact(buf, n).decode("utf-8")
        if name in params:
            raise FormatError(f"duplicate checkpoint entry {name!r}")
        params[name] = read_tensor_from(buf)
    if buf.read(1):
        raise FormatError("trailing bytes after checkpoint")
    return params


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_tensor(path, arr) -> None:
    atomic_write_bytes(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_checkpoint(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


def dumps_jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def write_jsonl(path, rows) -> None:
    atomic_write_text(path, dumps_jsonl(rows))


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_sidecar(path, *, seed: int, config: dict, stage: str) -> None:
    """Provenance record ``<path>.meta.json`` next to an artifact."""
    meta = {"seed": seed, "config_hash": config_hash(config), "stage": stage, "config": config}
    atomic_write_text(f"{path}.meta.json", json.dumps(meta, sort_keys=True, indent=2, default=str) + "\n")
