"""Tensor container I/O, independent of the detection engine.

This is the same on-disk format the engine consumes:

    bytes 0..3    magic b"KAIR"
    bytes 4..7    uint32 format version (currently 1)
    bytes 8..15   uint64 header length in bytes
    header        UTF-8 JSON: {"metadata": {str: str}, "entries": [...]}
    payload       raw float32 little-endian tensor data

Entries are sorted by name, each holds {"name", "shape", "offset",
"length"} with the offset relative to the end of the header and padded
to 8 bytes, and the JSON is compact with sorted keys. Writing the same
tensors and metadata twice therefore produces byte-identical files,
and files written here are byte-identical to ones the engine writes.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Mapping

import numpy as np

from .errors import ContainerError

MAGIC = b"KAIR"
FORMAT_VERSION = 1

_PREFIX_LEN = 16


def _align8(n: int) -> int:
    return (n + 7) & ~7


def write_container(tensors: Mapping[str, np.ndarray], metadata: Mapping[str, str], path) -> None:
    """Serialise float32 arrays plus string metadata to `path`, atomically."""
    for name in tensors:
        if not isinstance(name, str) or not name:
            raise ContainerError(f"tensor names must be non-empty strings, got {name!r}")
    for key, value in metadata.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise ContainerError(f"metadata must map strings to strings, got {key!r}: {value!r}")

    ordered = sorted(tensors.items())
    entries = []
    offset = 0
    for name, array in ordered:
        length = 4 * int(np.prod(array.shape))
        entries.append({"name": name, "shape": list(array.shape), "offset": offset, "length": length})
        offset = _align8(offset + length)

    header_obj = {"metadata": dict(sorted(metadata.items())), "entries": entries}
    header_bytes = json.dumps(
        header_obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-container-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(FORMAT_VERSION.to_bytes(4, "little"))
            fh.write(len(header_bytes).to_bytes(8, "little"))
            fh.write(header_bytes)
            written = 0
            for name, array in ordered:
                data = np.ascontiguousarray(array, dtype="<f4").tobytes()
                fh.write(data)
                written += len(data)
                pad = _align8(written) - written
                if pad:
                    fh.write(b"\x00" * pad)
                    written += pad
        os.replace(tmp_path, path)
    except BaseException:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


def read_container(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Load a container, returning (float32 arrays by name, metadata)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _PREFIX_LEN:
        raise ContainerError(f"file too short for a container header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise ContainerError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version = int.from_bytes(buf[4:8], "little")
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported format version {version}")
    header_len = int.from_bytes(buf[8:16], "little")
    payload_start = _PREFIX_LEN + header_len
    if payload_start > len(buf):
        raise ContainerError(f"declared header length {header_len} exceeds file size {len(buf)}")
    try:
        header = json.loads(buf[_PREFIX_LEN:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise ContainerError("header must be a JSON object")
    metadata = header.get("metadata")
    raw_entries = header.get("entries")
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise ContainerError("header 'metadata' must map strings to strings")
    if not isinstance(raw_entries, list):
        raise ContainerError("header 'entries' must be a list")

    payload_size = len(buf) - payload_start
    tensors: dict[str, np.ndarray] = {}
    for item in raw_entries:
        if not isinstance(item, dict):
            raise ContainerError(f"entry is not an object: {item!r}")
        name = item.get("name")
        shape = item.get("shape")
        offset = item.get("offset")
        length = item.get("length")
        if not isinstance(name, str) or not name or name in tensors:
            raise ContainerError(f"bad or duplicate entry name {name!r}")
        if not isinstance(shape, list) or not all(
            isinstance(e, int) and not isinstance(e, bool) and e >= 1 for e in shape
        ):
            raise ContainerError(f"entry {name!r} has invalid shape {shape!r}")
        count = int(np.prod(shape)) if shape else 0
        if not isinstance(offset, int) or offset < 0 or offset % 8:
            raise ContainerError(f"entry {name!r} has invalid offset {offset!r}")
        if length != 4 * count:
            raise ContainerError(f"entry {name!r} length {length!r} does not match shape {shape}")
        if offset + length > payload_size:
            raise ContainerError(f"entry {name!r} extends past end of payload")
        data = np.frombuffer(buf, dtype="<f4", count=count, offset=payload_start + offset)
        tensors[name] = data.astype(np.float32).reshape(shape)
    return tensors, dict(metadata)
