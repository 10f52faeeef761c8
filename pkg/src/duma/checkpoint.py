"""Byte-exact binary container for named float64 arrays plus JSON metadata.

Plain zip-based formats stamp timestamps into the file, which breaks the
byte-identical-reruns guarantee, so this rolls a minimal container: magic,
length-prefixed canonical JSON header, then raw array bytes in sorted name
order. Identical inputs always serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DCKPT1\n"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(arrays)
    header = {
        "meta": meta if meta is not None else {},
        "arrays": [[n, list(np.asarray(arrays[n]).shape)] for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            a = np.ascontiguousarray(np.asarray(arrays[n], dtype=np.float64))
            f.write(a.tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    off = len(MAGIC)
    (blob_len,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off:off + blob_len].decode("utf-8"))
    off += blob_len
    arrays = {}
    for name, shape in header["arrays"]:
        n_bytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = raw[off:off + n_bytes]
        if len(chunk) != n_bytes:
            raise ValueError(f"{path}: truncated array data for {name!r}")
        arrays[name] = np.frombuffer(chunk, dtype=np.float64).reshape(shape).copy()
        off += n_bytes
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes after arrays")
    return arrays, header["meta"]
