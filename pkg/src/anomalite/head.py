"""Trainable scoring head: a small fully-connected stack over embeddings.

The head maps an embedding vector to a single raw logit. Layers are
affine with ReLU between them and no activation after the last layer;
probabilities come from applying the sigmoid downstream (the loss works
on logits directly, which is both cheaper and numerically safer).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, WeightValidationError
from .rng import unit_uniforms
from .tensor import Tensor, linear, relu

__all__ = [
    "HeadConfig",
    "HeadWeights",
    "AnomalyScore",
    "head_init",
    "head_forward",
]


@dataclass(frozen=True)
class HeadConfig:
    """Shape of the scoring head.

    `hidden_dims` lists the widths between input and the final scalar;
    the layer count is len(hidden_dims) + 1.
    """

    input_dim: int
    hidden_dims: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(d < 1 for d in self.hidden_dims):
            raise ConfigError(f"hidden dims must all be >= 1, got {self.hidden_dims}")

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, 1)

    @classmethod
    def with_default_hidden(cls, input_dim: int, n_layers: int) -> "HeadConfig":
        """Default widths: 1 layer has none, 2 keeps the input width,
        3 adds a half-width layer. Deeper stacks must be given explicitly."""
        if n_layers == 1:
            hidden: tuple[int, ...] = ()
        elif n_layers == 2:
            hidden = (input_dim,)
        elif n_layers == 3:
            hidden = (input_dim, max(input_dim // 2, 1))
        else:
            raise ConfigError(
                f"no default hidden widths for {n_layers} layers; pass hidden_dims explicitly"
            )
        return cls(input_dim=input_dim, hidden_dims=hidden)

    def to_json(self) -> str:
        return json.dumps(
            {"input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims)},
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "HeadConfig":
        try:
            obj = json.loads(text)
            return cls(input_dim=int(obj["input_dim"]), hidden_dims=tuple(obj["hidden_dims"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"head config is malformed: {exc!r}") from None


@dataclass(frozen=True)
class HeadWeights:
    """Per-layer (weight, bias) pairs; weight i is (dims[i+1], dims[i])."""

    layers: tuple[tuple[Tensor, Tensor], ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple((w, b) for w, b in self.layers))
        if not self.layers:
            raise ConfigError("head needs at least one layer")
        for idx, (w, b) in enumerate(self.layers):
            if w.rank != 2 or b.rank != 1 or b.shape[0] != w.shape[0]:
                raise WeightValidationError(
                    f"layer {idx} weight {w.shape} and bias {b.shape} are inconsistent"
                )
            if idx > 0 and w.shape[1] != self.layers[idx - 1][0].shape[0]:
                raise WeightValidationError(
                    f"layer {idx} expects {w.shape[1]} inputs, "
                    f"previous layer emits {self.layers[idx - 1][0].shape[0]}"
                )
        if self.layers[-1][0].shape[0] != 1:
            raise WeightValidationError(
                f"final layer must emit one logit, got {self.layers[-1][0].shape[0]}"
            )

    @property
    def config(self) -> HeadConfig:
        dims = [w.shape[1] for w, _ in self.layers]
        return HeadConfig(input_dim=dims[0], hidden_dims=tuple(dims[1:]))

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def to_mapping(self, prefix: str = "head.") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}layer{i}.weight"] = w
            out[f"{prefix}layer{i}.bias"] = b
        return out

    @classmethod
    def from_mapping(cls, tensors: Mapping[str, Tensor], prefix: str = "head.") -> "HeadWeights":
        layers = []
        for i in range(len(tensors)):
            w_name = f"{prefix}layer{i}.weight"
            b_name = f"{prefix}layer{i}.bias"
            if w_name not in tensors:
                break
            if b_name not in tensors:
                raise WeightValidationError(f"missing tensor {b_name!r}")
            layers.append((tensors[w_name], tensors[b_name]))
        if not layers:
            raise WeightValidationError(f"no head layers found under prefix {prefix!r}")
        expected = {f"{prefix}layer{i}.{leaf}" for i in range(len(layers)) for leaf in ("weight", "bias")}
        extras = sorted(k for k in tensors if k.startswith(prefix) and k not in expected)
        if extras:
            raise WeightValidationError(f"unexpected head tensors: {extras[:8]}")
        return cls(layers=tuple(layers))


def head_init(config: HeadConfig, seed: int = 0) -> HeadWeights:
    """Uniform +-sqrt(1/fan_in) weights, zero biases, from one seeded stream."""
    dims = config.dims
    total = sum(dims[i + 1] * dims[i] for i in range(len(dims) - 1))
    uniforms = unit_uniforms(seed, total)
    cursor = 0
    layers = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = math.sqrt(1.0 / fan_in)
        count = fan_out * fan_in
        draw = uniforms[cursor : cursor + count]
        cursor += count
        w = ((2.0 * draw - 1.0) * bound).reshape(fan_out, fan_in).astype(np.float32)
        layers.append((Tensor(w), Tensor.zeros((fan_out,))))
    return HeadWeights(layers=tuple(layers))


def _as_batch(embeddings) -> tuple[np.ndarray, bool]:
    if isinstance(embeddings, Tensor):
        arr = embeddings.array
    else:
        arr = np.asarray(embeddings, dtype=np.float32)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise DimensionError(f"embeddings must be rank 1 or 2, got rank {arr.ndim}")


def head_forward(embeddings, weights: HeadWeights) -> Tensor:
    """Logits for a batch of embeddings: (N, d) -> (N,), or (d,) -> (1,)."""
    batch, _ = _as_batch(embeddings)
    if batch.shape[1] != weights.layers[0][0].shape[1]:
        raise DimensionError(
            f"embedding width {batch.shape[1]} does not match head input "
            f"{weights.layers[0][0].shape[1]}"
        )
    h = Tensor._wrap(np.ascontiguousarray(batch))
    last = len(weights.layers) - 1
    for i, (w, b) in enumerate(weights.layers):
        h = linear(h, w, b)
        if i < last:
            h = relu(h)
    return Tensor._wrap(h.array.reshape(-1))


def _stable_sigmoid(value: float) -> float:
    if value >= 0:
        e = math.exp(-value)
        return 1.0 / (1.0 + e)
    e = math.exp(value)
    return e / (1.0 + e)


@dataclass(frozen=True)
class AnomalyScore:
    """A raw logit and its sigmoid probability for one image."""

    logit: float
    probability: float

    @classmethod
    def from_logit(cls, logit: float) -> "AnomalyScore":
        return cls(logit=float(logit), probability=_stable_sigmoid(float(logit)))

    def predicted_label(self, threshold: float = 0.5) -> int:
        return 1 if self.probability >= threshold else 0
