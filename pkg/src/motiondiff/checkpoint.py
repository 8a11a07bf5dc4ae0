"""Versioned binary checkpoint container.

Layout: magic, format version, a JSON manifest describing named arrays
(shape, dtype, byte offset), then one raw little-endian data blob. The
round trip is bit-exact, which the resume-determinism guarantees rely on.
Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MDCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(path: Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if not arr.flags.c_contiguous:
            # ascontiguousarray would also flatten 0-d arrays to 1-d,
            # so only call it when actually needed
            arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta, "arrays": entries}).encode()

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", FORMAT_VERSION))
            f.write(struct.pack("<Q", len(manifest)))
            f.write(manifest)
            for raw in blobs:
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_arrays(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack("<I", data[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (mlen,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16 : 16 + mlen].decode())
    base = 16 + mlen
    arrays = {}
    for e in manifest["arrays"]:
        start = base + e["offset"]
        raw = data[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path} truncated at array {e['name']}")
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        arrays[e["name"]] = (
            np.frombuffer(raw, dtype=dtype)
            .reshape(e["shape"])
            .astype(np.dtype(e["dtype"]))
        )
    return arrays, manifest["meta"]
