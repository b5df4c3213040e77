"""Deterministic binary checkpoints and canonical config hashing.

File layout: 8-byte magic, uint32 format version, uint64 metadata length,
UTF-8 JSON metadata (sorted keys), then the raw little-endian float64 data of
every array in the order listed by ``metadata["arrays"]``. Nothing in the file
depends on wall-clock time, so identical state gives identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"METANAV\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IQ")


class CheckpointError(ValueError):
    pass


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj: Any) -> str:
    """Short sha256 digest of the canonical JSON form of a config mapping."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def encode_checkpoint(arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> bytes:
    specs = []
    chunks = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        specs.append({"name": name, "shape": list(a.shape)})
        chunks.append(a.tobytes())
    head = dict(meta)
    head["arrays"] = specs
    blob = canonical_json(head).encode()
    return b"".join([MAGIC, _HEADER.pack(FORMAT_VERSION, len(blob)), blob, *chunks])


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    off = len(MAGIC)
    version, n = _HEADER.unpack_from(data, off)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off += _HEADER.size
    meta = json.loads(data[off:off + n].decode())
    off += n
    arrays: dict[str, np.ndarray] = {}
    for spec in meta.pop("arrays"):
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(data):
            raise CheckpointError("truncated checkpoint")
        arrays[spec["name"]] = np.frombuffer(data[off:end], dtype="<f8").reshape(shape).copy()
        off = end
    if off != len(data):
        raise CheckpointError("trailing bytes after checkpoint data")
    return arrays, meta


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray],
                    meta: Mapping[str, Any]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(arrays, meta))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return decode_checkpoint(Path(path).read_bytes())
