"""Single-file, self-describing checkpoint of named float64 tensors.

Layout (all integers little-endian)::

    8 bytes   magic  b"APCKPT\\x00\\x00"
    uint32    format version
    uint32    header length H, then H bytes of UTF-8 JSON
              {"run_config": {...}, "num_tensors": n, "metadata": {...}}
    n records:
      uint32  name length, name (UTF-8)
      uint32  ndim, then ndim x uint64 dimensions
      prod(dims) x float64 values, row-major

The JSON header is written with sorted keys and no timestamps, so identical
inputs give byte-identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .config import RunConfig
from .errors import APError, CheckpointError
from .model import check_params, param_shapes

MAGIC = b"APCKPT\x00\x00"
FORMAT_VERSION = 1


def encode_checkpoint(
    params: Mapping[str, np.ndarray], config: RunConfig, metadata: Optional[dict] = None
) -> bytes:
    order = list(param_shapes(config.model))
    names = order + sorted(k for k in params if k not in order)
    header = json.dumps(
        {"run_config": config.to_dict(), "num_tensors": len(names), "metadata": metadata or {}},
        sort_keys=True,
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(header)), header]
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, params: Mapping[str, np.ndarray], config: RunConfig,
                    metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    data = encode_checkpoint(params, config, metadata)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as exc:
        raise OSError(f"{path}: cannot write checkpoint ({exc.strerror})") from exc
    return path


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated while reading {field}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, field: str) -> int:
        return struct.unpack("<I", self.take(4, field))[0]


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Tuple[Dict[str, np.ndarray], RunConfig, dict]:
    r = _Reader(data, source)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file (bad magic)")
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: format version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        header = json.loads(r.take(r.u32("header length"), "header").decode("utf-8"))
        config = RunConfig.from_dict(header["run_config"])
        count = int(header["num_tensors"])
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError, APError) as exc:
        raise CheckpointError(f"{source}: invalid header: {exc}") from exc
    params: Dict[str, np.ndarray] = {}
    for i in range(count):
        name = r.take(r.u32(f"tensor {i} name length"), f"tensor {i} name").decode("utf-8")
        ndim = r.u32(f"ndim of {name}")
        if ndim > 8:
            raise CheckpointError(f"{source}: tensor {name}: implausible ndim {ndim}")
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim, f"shape of {name}"))
        n = int(np.prod(shape, dtype=np.uint64)) if ndim else 1
        raw = r.take(8 * n, f"values of {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} unexpected trailing bytes")
    try:
        check_params(params, config.model)
    except APError as exc:
        raise CheckpointError(f"{source}: {exc}") from exc
    return params, config, header.get("metadata", {})


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], RunConfig, dict]:
    """Read a checkpoint and validate every tensor against the stored architecture."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    return decode_checkpoint(data, str(path))
