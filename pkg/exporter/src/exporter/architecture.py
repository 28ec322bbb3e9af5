"""Encoder architecture descriptions and their JSON form.

The JSON emitted by `Architecture.to_config_json` is the exact config
string the detection engine stores in container metadata and parses
back with its own loader, byte for byte: compact separators, sorted
keys, conv stages carrying `expand_ratio` and attention stages
carrying `heads`/`window`/`mlp_ratio`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ArchitectureError

_DEFAULT_MEAN = (123.675, 116.28, 103.53)
_DEFAULT_STD = (58.395, 57.12, 57.375)


@dataclass(frozen=True)
class StageSpec:
    kind: str
    dim: int
    blocks: int
    expand_ratio: float = 4.0
    heads: int = 0
    window: int = 0
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.kind not in ("conv", "attention"):
            raise ArchitectureError(f"stage kind must be 'conv' or 'attention', got {self.kind!r}")
        if self.dim < 1 or self.blocks < 1:
            raise ArchitectureError(f"stage needs dim >= 1 and blocks >= 1, got {self.dim}/{self.blocks}")
        if self.kind == "attention":
            if self.heads < 1 or self.dim % self.heads != 0:
                raise ArchitectureError(f"dim {self.dim} not divisible by heads {self.heads}")
            if self.window < 1:
                raise ArchitectureError(f"attention stage needs window >= 1, got {self.window}")


@dataclass(frozen=True)
class Architecture:
    """Shape of one hybrid conv/transformer encoder.

    The converter only supports the checkpoint family it was written
    for: a single conv stage first, attention stages after it.
    """

    name: str
    input_resolution: int
    stages: tuple[StageSpec, ...]
    downsample_strides: tuple[int, ...]
    output_channels: int
    mean: tuple[float, float, float] = _DEFAULT_MEAN
    std: tuple[float, float, float] = _DEFAULT_STD
    bn_epsilon: float = 1e-5
    ln_epsilon: float = 1e-5
    neck_epsilon: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "downsample_strides", tuple(self.downsample_strides))
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if not self.stages or self.stages[0].kind != "conv":
            raise ArchitectureError("first stage must be a conv stage")
        if any(s.kind != "attention" for s in self.stages[1:]):
            raise ArchitectureError("stages after the first must be attention stages")
        if len(self.downsample_strides) != len(self.stages) - 1:
            raise ArchitectureError(
                f"{len(self.stages)} stages need {len(self.stages) - 1} strides, "
                f"got {len(self.downsample_strides)}"
            )
        if any(s not in (1, 2) for s in self.downsample_strides):
            raise ArchitectureError(f"downsample strides must be 1 or 2, got {self.downsample_strides}")
        if self.stages[0].dim % 2 != 0:
            raise ArchitectureError(f"first stage dim must be even, got {self.stages[0].dim}")
        if self.input_resolution < 4 or self.input_resolution % 4 != 0:
            raise ArchitectureError(f"input_resolution must be a multiple of 4, got {self.input_resolution}")
        res = self.input_resolution // 4
        for stride in self.downsample_strides:
            if stride == 2 and res % 2 != 0:
                raise ArchitectureError(f"resolution {res} is odd at a stride-2 transition")
            res //= stride

    def stage_resolutions(self) -> tuple[int, ...]:
        res = [self.input_resolution // 4]
        for stride in self.downsample_strides:
            res.append(res[-1] // stride)
        return tuple(res)

    @property
    def grid(self) -> int:
        return self.stage_resolutions()[-1]

    def to_config_json(self) -> str:
        stages = []
        for s in self.stages:
            if s.kind == "conv":
                stages.append(
                    {"kind": s.kind, "dim": s.dim, "blocks": s.blocks, "expand_ratio": s.expand_ratio}
                )
            else:
                stages.append(
                    {
                        "kind": s.kind,
                        "dim": s.dim,
                        "blocks": s.blocks,
                        "heads": s.heads,
                        "window": s.window,
                        "mlp_ratio": s.mlp_ratio,
                    }
                )
        obj = {
            "name": self.name,
            "input_resolution": self.input_resolution,
            "stages": stages,
            "downsample_strides": list(self.downsample_strides),
            "output_channels": self.output_channels,
            "normalization": {"mean": list(self.mean), "std": list(self.std)},
            "bn_epsilon": self.bn_epsilon,
            "ln_epsilon": self.ln_epsilon,
            "neck_epsilon": self.neck_epsilon,
        }
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_config_json(cls, text: str) -> "Architecture":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArchitectureError(f"config is not valid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ArchitectureError("config must be a JSON object")
        try:
            stages = tuple(
                StageSpec(
                    kind=s["kind"],
                    dim=int(s["dim"]),
                    blocks=int(s["blocks"]),
                    expand_ratio=float(s.get("expand_ratio", 4.0)),
                    heads=int(s.get("heads", 0)),
                    window=int(s.get("window", 0)),
                    mlp_ratio=float(s.get("mlp_ratio", 4.0)),
                )
                for s in obj["stages"]
            )
            norm = obj.get("normalization", {})
            return cls(
                name=str(obj["name"]),
                input_resolution=int(obj["input_resolution"]),
                stages=stages,
                downsample_strides=tuple(int(v) for v in obj["downsample_strides"]),
                output_channels=int(obj["output_channels"]),
                mean=tuple(norm.get("mean", _DEFAULT_MEAN)),
                std=tuple(norm.get("std", _DEFAULT_STD)),
                bn_epsilon=float(obj.get("bn_epsilon", 1e-5)),
                ln_epsilon=float(obj.get("ln_epsilon", 1e-5)),
                neck_epsilon=float(obj.get("neck_epsilon", 1e-6)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ArchitectureError(f"config is malformed: {exc!r}") from None


def _mobilesam_v1() -> Architecture:
    return Architecture(
        name="mobilesam-v1",
        input_resolution=1024,
        stages=(
            StageSpec(kind="conv", dim=64, blocks=2, expand_ratio=4.0),
            StageSpec(kind="attention", dim=128, blocks=2, heads=4, window=7, mlp_ratio=4.0),
            StageSpec(kind="attention", dim=160, blocks=6, heads=5, window=14, mlp_ratio=4.0),
            StageSpec(kind="attention", dim=320, blocks=2, heads=10, window=7, mlp_ratio=4.0),
        ),
        downsample_strides=(2, 2, 1),
        output_channels=256,
    )


def _tiny_parity() -> Architecture:
    # Small enough to run in tests; window 3 on 8x8 and 4x4 grids forces
    # the attention padding path on both sides of a conversion.
    return Architecture(
        name="tiny-parity",
        input_resolution=64,
        stages=(
            StageSpec(kind="conv", dim=8, blocks=2, expand_ratio=4.0),
            StageSpec(kind="attention", dim=16, blocks=1, heads=2, window=3, mlp_ratio=2.0),
            StageSpec(kind="attention", dim=24, blocks=1, heads=3, window=3, mlp_ratio=2.0),
        ),
        downsample_strides=(2, 2),
        output_channels=32,
    )


_NAMED = {"mobilesam-v1": _mobilesam_v1, "tiny-parity": _tiny_parity}


def available_architectures() -> tuple[str, ...]:
    return tuple(sorted(_NAMED))


def named_architecture(name: str) -> Architecture:
    try:
        return _NAMED[name]()
    except KeyError:
        raise ArchitectureError(
            f"unknown architecture {name!r}, available: {available_architectures()}"
        )
