"""Binary checkpoint container: one JSON metadata blob plus named arrays.

Layout (all integers little-endian):

    bytes 0..7    magic "B2DCHKPT"
    u32           format version (currently 1)
    u32           metadata length in bytes
    bytes         metadata: UTF-8 JSON object, keys sorted
    u32           number of array records
    per record:
        u16       name length, then that many UTF-8 bytes
        u8        dtype code (0=float32, 1=float64, 2=uint8, 3=int64)
        u8        number of dimensions
        u32 * nd  dimension sizes
        bytes     raw C-order little-endian array data

Writing the same metadata and arrays twice produces identical bytes, which
is what makes run-level determinism checkable at the file level.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"B2DCHKPT"
VERSION = 1

_DTYPE_CODES: dict[int, np.dtype] = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i8"),
}
_CODE_FOR_KIND = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2, ("i", 8): 3}


class CheckpointError(Exception):
    """Checkpoint file is missing, truncated, or not ours."""


def write_checkpoint(path: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Serialize metadata and named arrays. Array order is preserved."""
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_blob)), meta_blob,
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        key = (arr.dtype.kind, arr.dtype.itemsize)
        if key not in _CODE_FOR_KIND:
            raise ValueError(f"array {name!r} has unsupported dtype {arr.dtype}")
        code = _CODE_FOR_KIND[key]
        arr = np.ascontiguousarray(arr).astype(_DTYPE_CODES[code], copy=False)
        name_blob = name.encode("utf-8")
        if len(name_blob) > 0xFFFF:
            raise ValueError(f"array name too long: {name!r}")
        parts.append(struct.pack("<H", len(name_blob)))
        parts.append(name_blob)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint back; arrays come out in their stored order."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise CheckpointError(f"no checkpoint at {path}") from exc

    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    pos = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if pos + meta_len > len(blob):
        raise CheckpointError(f"{path}: truncated metadata")
    try:
        meta = json.loads(blob[pos : pos + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata") from exc
    pos += meta_len

    if pos + 4 > len(blob):
        raise CheckpointError(f"{path}: truncated record count")
    (n_arrays,) = struct.unpack_from("<I", blob, pos)
    pos += 4

    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        if pos + 2 > len(blob):
            raise CheckpointError(f"{path}: truncated record header")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 2 > len(blob):
            raise CheckpointError(f"{path}: truncated record header for {name!r}")
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
        if pos + 4 * ndim > len(blob):
            raise CheckpointError(f"{path}: truncated dims for {name!r}")
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        dtype = _DTYPE_CODES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if pos + n_bytes > len(blob):
            raise CheckpointError(f"{path}: truncated data for {name!r}")
        arrays[name] = np.frombuffer(
            blob[pos : pos + n_bytes], dtype=dtype
        ).reshape(shape).copy()
        pos += n_bytes
    return meta, arrays
