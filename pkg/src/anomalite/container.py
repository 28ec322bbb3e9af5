"""Binary tensor container: the on-disk format for weights and embeddings.

Layout, all integers little-endian:

    bytes 0..3    magic b"KAIR"
    bytes 4..7    uint32 format version (currently 1)
    bytes 8..15   uint64 header length in bytes
    header        UTF-8 JSON: {"metadata": {str: str}, "entries": [...]}
    payload       raw float32 tensor data

Each header entry is {"name", "shape", "offset", "length"}; offsets are
relative to the end of the header, each a multiple of 8 (entries are
zero-padded to 8-byte alignment), and entries appear sorted by name.
The JSON is serialised compactly with sorted keys, so writing the same
tensors and metadata twice produces byte-identical files.

Writes go to a temporary file in the target directory followed by an
atomic rename, so a crash never leaves a half-written container behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError
from .tensor import Tensor

MAGIC = b"KAIR"
FORMAT_VERSION = 1

_HEADER_PREFIX_LEN = 16


@dataclass(frozen=True)
class ContainerEntry:
    name: str
    shape: tuple[int, ...]
    offset: int
    length: int


@dataclass(frozen=True)
class ContainerInfo:
    """Parsed header of a container file, without any payload."""

    format_version: int
    metadata: dict[str, str]
    entries: tuple[ContainerEntry, ...]


def _align8(n: int) -> int:
    return (n + 7) & ~7


def write_container(tensors: Mapping[str, Tensor], metadata: Mapping[str, str], path) -> None:
    """Serialise `tensors` (name -> Tensor) plus string metadata to `path`."""
    for name in tensors:
        if not isinstance(name, str) or not name:
            raise ConfigError(f"tensor names must be non-empty strings, got {name!r}")
    for key, value in metadata.items():
        if not isinstance(key, str) or not isinstance(value, str):
            raise ConfigError(f"metadata must map strings to strings, got {key!r}: {value!r}")

    ordered = sorted(tensors.items())
    entries = []
    offset = 0
    for name, tensor in ordered:
        length = 4 * tensor.size
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "length": length})
        offset = _align8(offset + length)

    header_obj = {"metadata": dict(sorted(metadata.items())), "entries": entries}
    header = json.dumps(header_obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    header_bytes = header.encode("utf-8")

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
            for name, tensor in ordered:
                data = np.ascontiguousarray(tensor.array, dtype="<f4").tobytes()
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


def _parse_header(buf: bytes) -> tuple[ContainerInfo, int]:
    if len(buf) < _HEADER_PREFIX_LEN:
        raise CorruptionError(f"file too short for a container header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version = int.from_bytes(buf[4:8], "little")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}, expected {FORMAT_VERSION}")
    header_len = int.from_bytes(buf[8:16], "little")
    payload_start = _HEADER_PREFIX_LEN + header_len
    if payload_start > len(buf):
        raise CorruptionError(
            f"declared header length {header_len} exceeds file size {len(buf)}"
        )
    try:
        header = json.loads(buf[_HEADER_PREFIX_LEN:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}") from None

    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    metadata = header.get("metadata")
    raw_entries = header.get("entries")
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise FormatError("header 'metadata' must be an object mapping strings to strings")
    if not isinstance(raw_entries, list):
        raise FormatError("header 'entries' must be a list")

    payload_size = len(buf) - payload_start
    entries = []
    seen = set()
    for item in raw_entries:
        if not isinstance(item, dict):
            raise FormatError(f"entry is not an object: {item!r}")
        name = item.get("name")
        shape = item.get("shape")
        entry_offset = item.get("offset")
        length = item.get("length")
        if not isinstance(name, str) or not name:
            raise FormatError(f"entry name must be a non-empty string, got {name!r}")
        if name in seen:
            raise FormatError(f"duplicate entry name {name!r}")
        seen.add(name)
        if (
            not isinstance(shape, list)
            or not shape
            or not all(isinstance(e, int) and not isinstance(e, bool) and e >= 1 for e in shape)
        ):
            raise FormatError(f"entry {name!r} has invalid shape {shape!r}")
        if not isinstance(entry_offset, int) or isinstance(entry_offset, bool) or entry_offset < 0:
            raise FormatError(f"entry {name!r} has invalid offset {entry_offset!r}")
        if entry_offset % 8 != 0:
            raise FormatError(f"entry {name!r} offset {entry_offset} is not 8-byte aligned")
        if not isinstance(length, int) or isinstance(length, bool) or length < 0:
            raise FormatError(f"entry {name!r} has invalid length {length!r}")
        element_count = 1
        for extent in shape:
            element_count *= extent
        if length != 4 * element_count:
            raise FormatError(
                f"entry {name!r} length {length} does not match shape {shape} "
                f"({4 * element_count} bytes expected)"
            )
        if entry_offset + length > payload_size:
            raise CorruptionError(
                f"entry {name!r} extends to byte {entry_offset + length} "
                f"but payload holds only {payload_size}"
            )
        entries.append(ContainerEntry(name, tuple(shape), entry_offset, length))

    by_offset = sorted(entries, key=lambda e: e.offset)
    for prev, nxt in zip(by_offset, by_offset[1:]):
        if nxt.offset < prev.offset + prev.length:
            raise FormatError(f"entries {prev.name!r} and {nxt.name!r} overlap")

    info = ContainerInfo(version, dict(metadata), tuple(entries))
    return info, payload_start


def read_container_info(path) -> ContainerInfo:
    """Parse and validate a container header without loading tensor data."""
    with open(path, "rb") as fh:
        buf = fh.read()
    info, _ = _parse_header(buf)
    return info


def read_container(path) -> tuple[dict[str, Tensor], dict[str, str]]:
    """Load a container, returning (tensors by name, metadata).

    Every structural field is validated before any payload is touched;
    malformed files raise FormatError (or CorruptionError when declared
    payload is missing), never a crash or an unbounded allocation.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    info, payload_start = _parse_header(buf)
    tensors = {}
    for entry in info.entries:
        start = payload_start + entry.offset
        data = np.frombuffer(buf, dtype="<f4", count=entry.length // 4, offset=start)
        tensors[entry.name] = Tensor._wrap(data.astype(np.float32).reshape(entry.shape))
    return tensors, info.metadata
