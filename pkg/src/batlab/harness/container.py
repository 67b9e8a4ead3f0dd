"""The tensor container file: exact binary data plane for weights and stacks.

Layout:
    bytes 0..3    magic "BATL"
    bytes 4..7    format version, u32 little-endian (currently 1)
    bytes 8..11   header length in bytes, u32 little-endian
    header        JSON: named entries {dtype, shape, offset, nbytes} plus a
                  sha256 of the payload (truncation/corruption check)
    payload       raw little-endian float payloads at the stated offsets

Entries are written in sorted name order; offsets are contiguous and
non-overlapping, so identical arrays always serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..errors import CheckpointError

MAGIC = b"BATL"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def write_container(path, arrays: dict, meta: dict | None = None) -> None:
    entries = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype == np.float32:
            code = "<f4"
        elif arr.dtype == np.float64:
            code = "<f8"
        else:
            raise CheckpointError(f"container stores real tensors only; {name!r} is {arr.dtype}")
        raw = arr.astype(_DTYPES[code]).tobytes()
        entries[name] = {"dtype": code, "shape": list(arr.shape), "offset": offset,
                         "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {"entries": entries, "payload_sha256": hashlib.sha256(payload).hexdigest(),
              "meta": meta or {}}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        fh.write(payload)


def read_container(path) -> dict:
    arrays, _ = read_container_full(path)
    return arrays


def read_container_full(path) -> tuple[dict, dict]:
    """Return (arrays, header meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a BATL tensor container")
    version = int.from_bytes(blob[4:8], "little")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    header_len = int.from_bytes(blob[8:12], "little")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt container header") from exc
    payload = blob[12 + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch (truncated or corrupt)")

    out = {}
    last_end = 0
    for name in sorted(header["entries"]):
        entry = header["entries"][name]
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype {entry['dtype']!r} for {name!r}")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if count * dtype.itemsize != entry["nbytes"]:
            raise CheckpointError(f"{path}: shape/byte-length mismatch for {name!r}")
        if entry["offset"] < last_end:
            raise CheckpointError(f"{path}: overlapping payload entries at {name!r}")
        last_end = entry["offset"] + entry["nbytes"]
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return out, header.get("meta", {})
