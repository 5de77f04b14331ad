"""Named-tensor container (safetensors layout).

Layout::

    u64 little-endian header length N
    N bytes of UTF-8 JSON: {name: {"dtype": "f32", "shape": [...],
                                   "data_offsets": [begin, end]}, ...}
    raw little-endian float32 payload

Offsets are relative to the first payload byte. An optional
``"__metadata__"`` entry maps strings to strings. The dtype tag is
matched case-insensitively so files written by the ``safetensors``
library ("F32") load unchanged.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

_HEADER_LEN = struct.Struct("<Q")
_MAX_HEADER = 100 * 1024 * 1024


def read_tensors(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Read every tensor in ``path``. Returns ``(tensors, metadata)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from exc
    if len(raw) < _HEADER_LEN.size:
        raise DataError(f"{path}: truncated header")
    (n,) = _HEADER_LEN.unpack_from(raw, 0)
    if n > _MAX_HEADER or _HEADER_LEN.size + n > len(raw):
        raise DataError(f"{path}: header length {n} out of range")
    try:
        header = json.loads(raw[_HEADER_LEN.size : _HEADER_LEN.size + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise DataError(f"{path}: header is not a JSON object")

    payload = memoryview(raw)[_HEADER_LEN.size + n :]
    metadata = header.pop("__metadata__", None) or {}
    tensors: dict[str, np.ndarray] = {}
    for name, info in header.items():
        try:
            dtype = str(info["dtype"]).lower()
            shape = tuple(int(s) for s in info["shape"])
            begin, end = (int(o) for o in info["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad header entry for tensor {name!r}") from exc
        if dtype != "f32":
            raise DataError(f"{path}: tensor {name!r} has dtype {info['dtype']!r}, expected f32")
        count = int(np.prod(shape, dtype=np.int64))
        if not (0 <= begin <= end <= len(payload)) or end - begin != 4 * count:
            raise DataError(f"{path}: tensor {name!r} offsets [{begin}, {end}) do not match shape {list(shape)}")
        arr = np.frombuffer(payload[begin:end], dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float32)
    return tensors, dict(metadata)


def write_tensors(
    path: str | os.PathLike,
    tensors: Mapping[str, np.ndarray],
    metadata: Mapping[str, str] | None = None,
) -> None:
    """Write ``tensors`` as f32 in sorted-name order (byte-stable output)."""
    header: dict[str, object] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
        header[name] = {
            "dtype": "f32",
            "shape": list(np.shape(tensors[name])),
            "data_offsets": [offset, offset + len(data)],
        }
        chunks.append(data)
        offset += len(data)
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    # pad so the payload starts 8-byte aligned
    blob += b" " * (-len(blob) % 8)
    with open(path, "wb") as fh:
        fh.write(_HEADER_LEN.pack(len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)
