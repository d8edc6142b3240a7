"""Self-describing binary tensor container and the on-disk dataset layout.

Container layout (all integers little-endian):

    offset  size  field
    0       4     magic  b"RFTC"
    4       2     format version (currently 1)
    6       2     dtype code (see DTYPE_CODES)
    8       2     rank
    10      2     reserved, must be 0
    12      8*r   dims, uint64 each
    ...           payload, row-major (C order), little-endian

A dataset directory holds one container per event sequence plus a JSON
sidecar with the event metadata (dataset_id, cadence_minutes, native_range):

    events/
      event_0000.rft
      event_0000.json
      event_0001.rft
      ...
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RFTC"
VERSION = 1

DTYPE_CODES = {
    np.dtype("float32"): 1,
    np.dtype("float64"): 2,
    np.dtype("uint8"): 3,
    np.dtype("int64"): 4,
    np.dtype("int32"): 5,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}

_HEADER = struct.Struct("<4sHHHH")


class ContainerError(ValueError):
    """Raised when a tensor container is malformed or unsupported."""


def save_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype not in DTYPE_CODES:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_CODES[arr.dtype], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    Path(path).write_bytes(header + dims + payload)


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContainerError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, dtype_code, rank, reserved = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    if reserved != 0:
        raise ContainerError(f"{path}: nonzero reserved field {reserved}")
    if dtype_code not in CODE_DTYPES:
        raise ContainerError(f"{path}: unknown dtype code {dtype_code}")
    dims_end = _HEADER.size + 8 * rank
    if len(raw) < dims_end:
        raise ContainerError(f"{path}: truncated dimension list")
    shape = struct.unpack(f"<{rank}Q", raw[_HEADER.size:dims_end]) if rank else ()
    dtype = CODE_DTYPES[dtype_code].newbyteorder("<")
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = dims_end + count * dtype.itemsize
    if len(raw) != expected:
        raise ContainerError(
            f"{path}: payload size {len(raw) - dims_end}, expected {expected - dims_end}"
        )
    arr = np.frombuffer(raw[dims_end:], dtype=dtype, count=count).reshape(shape)
    return arr.astype(CODE_DTYPES[dtype_code], copy=True)


def write_event(directory, index: int, frames: np.ndarray, metadata: dict) -> Path:
    """Store one event sequence (T, H, W) with its metadata sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = directory / f"event_{index:04d}"
    save_tensor(stem.with_suffix(".rft"), frames)
    stem.with_suffix(".json").write_text(json.dumps(metadata, sort_keys=True, indent=2))
    return stem.with_suffix(".rft")


def read_event(path):
    """Load a container plus its sidecar; returns (frames, metadata)."""
    path = Path(path)
    frames = load_tensor(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    return frames, meta


def list_events(directory):
    return sorted(Path(directory).glob("event_*.rft"))
