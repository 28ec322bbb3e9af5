"""Checkpoint to container conversion.

Values are copied verbatim as float32; nothing is folded, fused, or
re-laid-out, so a converted container holds bit-identical copies of
the checkpoint tensors under the engine's names.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from .architecture import Architecture
from .container import write_container
from .errors import ConvertError
from .mapping import generate_mapping, partition_checkpoint_keys


@dataclass(frozen=True)
class ExportManifest:
    output_path: str
    tensor_count: int
    parameter_count: int
    ignored_keys: int
    source_sha256: str


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_checkpoint_tensors(path) -> dict[str, torch.Tensor]:
    """Load a checkpoint state_dict, unwrapping common nesting conventions."""
    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ConvertError(f"cannot load checkpoint {path}: {exc}") from None
    if isinstance(obj, dict):
        for key in ("model", "state_dict"):
            inner = obj.get(key)
            if isinstance(inner, dict) and inner and all(
                isinstance(v, torch.Tensor) for v in inner.values()
            ):
                obj = inner
                break
    if not isinstance(obj, dict) or not obj or not all(
        isinstance(k, str) and isinstance(v, torch.Tensor) for k, v in obj.items()
    ):
        raise ConvertError(f"checkpoint {path} does not hold a state_dict of tensors")
    return dict(obj)


def convert_checkpoint(checkpoint_path, arch: Architecture, out_path) -> ExportManifest:
    """Convert a pretrained checkpoint into an engine weight container.

    The checkpoint must cover the architecture exactly: any missing or
    unrecognised encoder key aborts the conversion with a ConvertError
    naming the offenders. Container metadata records the architecture
    config (as the engine parses it) and the checkpoint's SHA-256.
    """
    raw = load_checkpoint_tensors(checkpoint_path)
    available, ignored = partition_checkpoint_keys(raw.keys())
    mapping = generate_mapping(arch)

    expected = {entry.source for entry in mapping}
    missing = sorted(expected - set(available))
    unexpected = sorted(set(available) - expected)
    if missing or unexpected:
        parts = []
        if missing:
            parts.append(f"missing {len(missing)} keys, e.g. {missing[:8]}")
        if unexpected:
            parts.append(f"unrecognised {len(unexpected)} keys, e.g. {unexpected[:8]}")
        raise ConvertError(f"checkpoint does not match {arch.name!r}: " + "; ".join(parts))

    tensors: dict[str, np.ndarray] = {}
    total = 0
    for entry in mapping:
        value = raw[available[entry.source]]
        if tuple(value.shape) != entry.shape:
            raise ConvertError(
                f"{entry.source} has shape {tuple(value.shape)}, expected {entry.shape}"
            )
        tensors[entry.target] = value.detach().to(torch.float32).cpu().numpy()
        total += value.numel()

    source_hash = _sha256_file(checkpoint_path)
    metadata = {
        "encoder_config": arch.to_config_json(),
        "source_sha256": source_hash,
    }
    write_container(tensors, metadata, out_path)
    return ExportManifest(
        output_path=str(out_path),
        tensor_count=len(tensors),
        parameter_count=total,
        ignored_keys=len(ignored),
        source_sha256=source_hash,
    )
