"""JSON-header + raw f32 blob container used for all weight files.

Layout: ``u32 header_len`` (little-endian), UTF-8 JSON header, then the
blobs back to back as little-endian f32. The header carries caller metadata
plus a ``blobs`` list of ``{name, shape, offset}`` and a ``checksums`` map
of per-blob sha256 digests.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np


def f32(a) -> np.ndarray:
    """Round to the nearest f32 value, returned as float64.

    Weights are generated through this so a save/load cycle is exact.
    """
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def write_blobs(path, meta: dict, blobs: dict[str, np.ndarray]) -> None:
    entries = []
    checksums = {}
    chunks = []
    offset = 0
    for name, arr in blobs.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(np.shape(arr)),
                "offset": offset,
            }
        )
        checksums[name] = hashlib.sha256(raw).hexdigest()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({**meta, "blobs": entries, "checksums": checksums}, sort_keys=True).encode()
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for c in chunks:
                fh.write(c)
    except OSError as exc:
        raise OSError(f"cannot write weights file {path}: {exc.strerror or exc}") from exc


def read_blobs(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read weights file {path}: {exc.strerror or exc}") from exc
    (n,) = struct.unpack_from("<I", raw)
    meta = json.loads(raw[4:4 + n].decode())
    base = 4 + n
    blobs = {}
    checksums = meta.pop("checksums")
    for e in meta.pop("blobs"):
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        chunk = raw[start:start + 4 * count]
        if hashlib.sha256(chunk).hexdigest() != checksums[e["name"]]:
            raise ValueError(f"{path}: checksum mismatch for blob {e['name']!r}")
        blobs[e["name"]] = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(e["shape"])
    return meta, blobs
