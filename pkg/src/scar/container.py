"""Versioned binary container for parameter arrays.

Layout: 8-byte magic, uint32 header length, UTF-8 JSON header, then the raw
C-order float64/int64 bytes of each array at the offsets the header records.
Writing the same content twice produces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import FormatError

MAGIC = b"SCARBIN1"
VERSION = 1


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": VERSION, "meta": meta, "arrays": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}", offset=0)
    header_len = int(np.frombuffer(raw[8:12], dtype=np.uint32)[0])
    header_end = 12 + header_len
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    header = json.loads(raw[12:header_end].decode("utf-8"))
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported container version {header.get('version')}")
    arrays = {}
    for entry in header["arrays"]:
        start = header_end + entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(raw):
            raise FormatError(f"{path}: truncated array {entry['name']!r}", offset=len(raw))
        arrays[entry["name"]] = np.frombuffer(
            raw[start:stop], dtype=np.dtype(entry["dtype"])
        ).reshape(entry["shape"]).copy()
    return header["meta"], arrays
