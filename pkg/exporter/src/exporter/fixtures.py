"""Reference feature-map fixtures for cross-implementation checks.

`emit_fixtures` loads a weight container back into the torch model,
runs it on deterministic synthetic inputs, and stores input/feature
pairs in a second container. Another implementation of the encoder can
then replay the inputs and compare feature maps without torch
installed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .architecture import Architecture
from .container import read_container, write_container
from .errors import ConvertError
from .mapping import generate_mapping
from .model import ImageEncoder


@dataclass(frozen=True)
class FixtureManifest:
    output_path: str
    count: int
    seed: int
    feature_shape: tuple[int, ...]


def load_model(weights_path) -> tuple[ImageEncoder, Architecture, dict[str, str]]:
    """Rebuild the torch reference model from a converted container."""
    tensors, metadata = read_container(weights_path)
    config_json = metadata.get("encoder_config")
    if config_json is None:
        raise ConvertError(f"{weights_path} has no encoder_config metadata")
    arch = Architecture.from_config_json(config_json)

    state: dict[str, torch.Tensor] = {}
    for entry in generate_mapping(arch):
        value = tensors.pop(entry.target, None)
        if value is None:
            raise ConvertError(f"container is missing tensor {entry.target!r}")
        if tuple(value.shape) != entry.shape:
            raise ConvertError(
                f"tensor {entry.target!r} has shape {tuple(value.shape)}, expected {entry.shape}"
            )
        state[entry.source] = torch.from_numpy(np.ascontiguousarray(value))
        if entry.source.endswith(".bn.running_var"):
            # containers do not carry the step counter; zero keeps load_state_dict strict
            counter = entry.source[: -len("running_var")] + "num_batches_tracked"
            state[counter] = torch.zeros((), dtype=torch.long)
    if tensors:
        raise ConvertError(f"container holds unrecognised tensors: {sorted(tensors)[:8]}")

    model = ImageEncoder(arch)
    model.load_state_dict(state)
    model.eval()
    return model, arch, metadata


def emit_fixtures(weights_path, out_path, count: int = 3, seed: int = 0) -> FixtureManifest:
    """Write `count` input/feature pairs for the container at `weights_path`.

    Inputs are uniform in [-2, 2), roughly the range of a normalized
    image, drawn from a PCG64 stream so reruns produce byte-identical
    fixture files.
    """
    if count < 1:
        raise ConvertError(f"fixture count must be >= 1, got {count}")
    model, arch, metadata = load_model(weights_path)
    rng = np.random.Generator(np.random.PCG64(seed))
    side = arch.input_resolution
    tensors: dict[str, np.ndarray] = {}
    feature_shape: tuple[int, ...] = ()
    with torch.no_grad():
        for i in range(count):
            image = rng.uniform(-2.0, 2.0, size=(3, side, side)).astype(np.float32)
            features = model(torch.from_numpy(image)[None])[0].numpy().astype(np.float32)
            tensors[f"input.{i}"] = image
            tensors[f"features.{i}"] = features
            feature_shape = tuple(features.shape)
    out_metadata = {
        "count": str(count),
        "seed": str(seed),
        "encoder_config": metadata["encoder_config"],
    }
    write_container(tensors, out_metadata, out_path)
    return FixtureManifest(
        output_path=str(out_path), count=count, seed=seed, feature_shape=feature_shape
    )
