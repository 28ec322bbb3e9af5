"""Frozen image encoder: a hybrid convolutional / windowed-attention network.

The graph is a stem of two stride-2 convolutions, a first stage of
inverted-residual conv blocks, further stages of window-attention
transformer blocks, stride-2 (or stride-1) merge transitions between
stages, and a two-convolution neck that projects to the embedding
width. Total spatial reduction is 4 * product(downsample strides); the
reference setup reduces by 16.

The encoder itself holds no state: `encode(x, config, weights)` is a
pure function of its inputs. Weights travel as a flat name -> Tensor
mapping whose exact names and shapes are fixed by `weight_spec`, which
is also the contract for weight files produced by external converters.
Batch norm statistics are stored verbatim in that mapping and folded
into the preceding convolution at call time, so stored weights stay a
lossless copy of their source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, DimensionError, WeightValidationError
from .rng import unit_uniforms
from .tensor import (
    Tensor,
    conv2d,
    gelu,
    layer_norm,
    linear,
    scaled_dot_product_attention,
)

__all__ = [
    "StageConfig",
    "EncoderConfig",
    "named_config",
    "available_configs",
    "weight_spec",
    "init_encoder_weights",
    "validate_weights",
    "preprocess_image",
    "encode",
    "pool_embedding",
]

# ImageNet-range channel statistics on the 0..255 scale, the defaults the
# reference weights were trained with.
_DEFAULT_MEAN = (123.675, 116.28, 103.53)
_DEFAULT_STD = (58.395, 57.12, 57.375)

_BN_FIELDS = ("gamma", "beta", "mean", "var")


@dataclass(frozen=True)
class StageConfig:
    """One stage of the encoder trunk.

    kind "conv" uses `expand_ratio` (inverted-residual hidden width);
    kind "attention" uses `heads`, `window`, and `mlp_ratio`.
    """

    kind: str
    dim: int
    blocks: int
    expand_ratio: float = 4.0
    heads: int = 0
    window: int = 0
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.kind not in ("conv", "attention"):
            raise ConfigError(f"stage kind must be 'conv' or 'attention', got {self.kind!r}")
        if self.dim < 1:
            raise ConfigError(f"stage dim must be >= 1, got {self.dim}")
        if self.blocks < 1:
            raise ConfigError(f"stage needs at least one block, got {self.blocks}")
        if self.kind == "conv":
            if int(self.dim * self.expand_ratio) < 1:
                raise ConfigError(f"expand_ratio {self.expand_ratio} collapses dim {self.dim}")
        else:
            if self.heads < 1:
                raise ConfigError(f"attention stage needs heads >= 1, got {self.heads}")
            if self.dim % self.heads != 0:
                raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
            if self.window < 1:
                raise ConfigError(f"attention stage needs window >= 1, got {self.window}")
            if int(self.dim * self.mlp_ratio) < 1:
                raise ConfigError(f"mlp_ratio {self.mlp_ratio} collapses dim {self.dim}")


@dataclass(frozen=True)
class EncoderConfig:
    name: str
    input_resolution: int
    stages: tuple[StageConfig, ...]
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
        if not self.stages:
            raise ConfigError("encoder needs at least one stage")
        if len(self.downsample_strides) != len(self.stages) - 1:
            raise ConfigError(
                f"{len(self.stages)} stages need {len(self.stages) - 1} downsample "
                f"strides, got {len(self.downsample_strides)}"
            )
        if any(s not in (1, 2) for s in self.downsample_strides):
            raise ConfigError(f"downsample strides must be 1 or 2, got {self.downsample_strides}")
        has_attention = any(s.kind == "attention" for s in self.stages)
        if has_attention:
            first_attn = next(i for i, s in enumerate(self.stages) if s.kind == "attention")
            if not any(s.kind == "conv" for s in self.stages[:first_attn]):
                raise ConfigError("a conv stage must precede the first attention stage")
        if self.stages[0].dim % 2 != 0:
            raise ConfigError(f"first stage dim must be even for the stem, got {self.stages[0].dim}")
        if self.output_channels < 1:
            raise ConfigError(f"output_channels must be >= 1, got {self.output_channels}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("normalization mean and std must have three channel entries")
        if any(v == 0.0 for v in self.std):
            raise ConfigError("normalization std must be non-zero in every channel")
        for eps_name in ("bn_epsilon", "ln_epsilon", "neck_epsilon"):
            if getattr(self, eps_name) <= 0:
                raise ConfigError(f"{eps_name} must be positive")
        if self.input_resolution < 4 or self.input_resolution % 4 != 0:
            raise ConfigError(f"input_resolution must be a positive multiple of 4, got {self.input_resolution}")
        # Each stride-2 transition must see an even resolution so the grid
        # size equals input_resolution / reduction exactly.
        res = self.input_resolution // 4
        for stride in self.downsample_strides:
            if stride == 2:
                if res % 2 != 0:
                    raise ConfigError(
                        f"resolution {res} is odd at a stride-2 transition; "
                        f"input_resolution {self.input_resolution} is incompatible"
                    )
                res //= 2

    @property
    def reduction(self) -> int:
        r = 4
        for stride in self.downsample_strides:
            r *= stride
        return r

    @property
    def grid(self) -> int:
        return self.input_resolution // self.reduction

    @property
    def stem_channels(self) -> tuple[int, int]:
        return self.stages[0].dim // 2, self.stages[0].dim

    def stage_resolutions(self) -> tuple[int, ...]:
        """Feature-map side length at the input of each stage."""
        res = [self.input_resolution // 4]
        for stride in self.downsample_strides:
            res.append(res[-1] // stride)
        return tuple(res)

    def to_json(self) -> str:
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
    def from_json(cls, text: str) -> "EncoderConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"encoder config is not valid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError("encoder config must be a JSON object")
        try:
            stages = tuple(
                StageConfig(
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
            raise ConfigError(f"encoder config is malformed: {exc!r}") from None


def _tiny_test() -> EncoderConfig:
    return EncoderConfig(
        name="tiny-test",
        input_resolution=64,
        stages=(
            StageConfig(kind="conv", dim=8, blocks=2, expand_ratio=4.0),
            StageConfig(kind="attention", dim=16, blocks=1, heads=2, window=4, mlp_ratio=2.0),
            StageConfig(kind="attention", dim=24, blocks=1, heads=3, window=4, mlp_ratio=2.0),
        ),
        downsample_strides=(2, 2),
        output_channels=32,
    )


def _mobilesam_v1() -> EncoderConfig:
    return EncoderConfig(
        name="mobilesam-v1",
        input_resolution=1024,
        stages=(
            StageConfig(kind="conv", dim=64, blocks=2, expand_ratio=4.0),
            StageConfig(kind="attention", dim=128, blocks=2, heads=4, window=7, mlp_ratio=4.0),
            StageConfig(kind="attention", dim=160, blocks=6, heads=5, window=14, mlp_ratio=4.0),
            StageConfig(kind="attention", dim=320, blocks=2, heads=10, window=7, mlp_ratio=4.0),
        ),
        downsample_strides=(2, 2, 1),
        output_channels=256,
    )


_NAMED_CONFIGS = {"tiny-test": _tiny_test, "mobilesam-v1": _mobilesam_v1}


def available_configs() -> tuple[str, ...]:
    return tuple(sorted(_NAMED_CONFIGS))


def named_config(name: str) -> EncoderConfig:
    try:
        return _NAMED_CONFIGS[name]()
    except KeyError:
        raise ConfigError(f"unknown encoder config {name!r}, available: {available_configs()}")


def _bn_shapes(prefix: str, channels: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.bn.{f}", (channels,)) for f in _BN_FIELDS]


def _conv_bn_shapes(prefix, out_ch, in_ch, k) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.weight", (out_ch, in_ch, k, k))] + _bn_shapes(prefix, out_ch)


def weight_spec(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Required weight names and shapes, in graph order.

    Every name is prefixed "encoder."; batch-norm parameters appear as
    <conv>.bn.{gamma,beta,mean,var}. This mapping is the full contract
    for weight containers: no extra names, nothing optional.
    """
    items: list[tuple[str, tuple[int, ...]]] = []
    c_half, c_full = config.stem_channels
    items += _conv_bn_shapes("encoder.stem.conv0", c_half, 3, 3)
    items += _conv_bn_shapes("encoder.stem.conv1", c_full, c_half, 3)

    for i, stage in enumerate(config.stages):
        d = stage.dim
        for j in range(stage.blocks):
            base = f"encoder.stage{i}.block{j}"
            if stage.kind == "conv":
                hidden = int(d * stage.expand_ratio)
                items += _conv_bn_shapes(f"{base}.expand", hidden, d, 1)
                items += [(f"{base}.depth.weight", (hidden, 1, 3, 3))] + _bn_shapes(f"{base}.depth", hidden)
                items += _conv_bn_shapes(f"{base}.project", d, hidden, 1)
            else:
                hidden = int(d * stage.mlp_ratio)
                items += [
                    (f"{base}.attn.norm.gamma", (d,)),
                    (f"{base}.attn.norm.beta", (d,)),
                    (f"{base}.attn.qkv.weight", (3 * d, d)),
                    (f"{base}.attn.qkv.bias", (3 * d,)),
                    (f"{base}.attn.bias_table", (stage.heads, stage.window * stage.window)),
                    (f"{base}.attn.proj.weight", (d, d)),
                    (f"{base}.attn.proj.bias", (d,)),
                    (f"{base}.local.weight", (d, 1, 3, 3)),
                ]
                items += _bn_shapes(f"{base}.local", d)
                items += [
                    (f"{base}.mlp.norm.gamma", (d,)),
                    (f"{base}.mlp.norm.beta", (d,)),
                    (f"{base}.mlp.fc1.weight", (hidden, d)),
                    (f"{base}.mlp.fc1.bias", (hidden,)),
                    (f"{base}.mlp.fc2.weight", (d, hidden)),
                    (f"{base}.mlp.fc2.bias", (d,)),
                ]
        if i < len(config.stages) - 1:
            d_next = config.stages[i + 1].dim
            base = f"encoder.stage{i}.down"
            items += _conv_bn_shapes(f"{base}.expand", d_next, d, 1)
            items += [(f"{base}.depth.weight", (d_next, 1, 3, 3))] + _bn_shapes(f"{base}.depth", d_next)
            items += _conv_bn_shapes(f"{base}.project", d_next, d_next, 1)

    d_last = config.stages[-1].dim
    c_out = config.output_channels
    items += [
        ("encoder.neck.conv0.weight", (c_out, d_last, 1, 1)),
        ("encoder.neck.norm0.gamma", (c_out,)),
        ("encoder.neck.norm0.beta", (c_out,)),
        ("encoder.neck.conv1.weight", (c_out, c_out, 3, 3)),
        ("encoder.neck.norm1.gamma", (c_out,)),
        ("encoder.neck.norm1.beta", (c_out,)),
    ]
    return dict(items)


def init_encoder_weights(config: EncoderConfig, seed: int = 0) -> dict[str, Tensor]:
    """Random weights matching `weight_spec`.

    Conv and linear weights draw uniform +-sqrt(1/fan_in) from a single
    splitmix64 stream consumed in spec order; norm scales start at one,
    shifts at zero, batch-norm statistics at mean 0 / var 1, attention
    bias tables at zero. Deterministic in (config, seed).
    """
    spec = weight_spec(config)
    total = sum(int(np.prod(shape)) for shape in spec.values())
    uniforms = unit_uniforms(seed, total)
    cursor = 0
    out: dict[str, Tensor] = {}
    for name, shape in spec.items():
        count = int(np.prod(shape))
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith(".bn.gamma") or leaf == "gamma" or name.endswith(".bn.var") or leaf == "var":
            values = np.ones(shape, dtype=np.float32)
        elif leaf in ("beta", "mean", "bias") or leaf == "bias_table":
            values = np.zeros(shape, dtype=np.float32)
        elif leaf == "weight":
            fan_in = int(np.prod(shape[1:]))
            bound = float(np.sqrt(1.0 / fan_in))
            draw = uniforms[cursor : cursor + count]
            cursor += count
            values = ((2.0 * draw - 1.0) * bound).reshape(shape).astype(np.float32)
        else:
            raise ConfigError(f"unhandled weight kind for {name!r}")
        out[name] = Tensor(values)
    return out


def validate_weights(config: EncoderConfig, weights: Mapping[str, Tensor]) -> None:
    """Check a weight mapping against `weight_spec`: names and shapes, no extras."""
    spec = weight_spec(config)
    for name, shape in spec.items():
        if name not in weights:
            raise WeightValidationError(f"missing tensor {name!r}")
        got = weights[name].shape
        if got != shape:
            raise WeightValidationError(f"tensor {name!r} has shape {got}, expected {shape}")
    extras = sorted(set(weights) - set(spec))
    if extras:
        raise WeightValidationError(f"unexpected tensors: {extras[:8]}")


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel sample centres and clamped edges."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    rows = img[y0] * (1.0 - fy) + img[y1] * fy
    return rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx


def preprocess_image(sample, resolution: int, mean=None, std=None) -> Tensor:
    """Decode-side preprocessing: resize, channel-replicate, normalise.

    `sample` is anything with an `.image` attribute or a numpy array of
    shape (H, W), (H, W, 1) or (H, W, 3). Arithmetic runs in float64 and
    rounds once to float32; output shape is (1, 3, resolution, resolution).
    """
    mean = _DEFAULT_MEAN if mean is None else tuple(float(v) for v in mean)
    std = _DEFAULT_STD if std is None else tuple(float(v) for v in std)
    if len(mean) != 3 or len(std) != 3:
        raise ConfigError("mean and std must each have three entries")
    if any(v == 0.0 for v in std):
        raise ConfigError("std must be non-zero in every channel")
    if resolution < 1:
        raise ConfigError(f"resolution must be >= 1, got {resolution}")

    img = np.asarray(getattr(sample, "image", sample))
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise DimensionError(f"expected an (H, W, 1|3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError(f"image has an empty spatial axis: {img.shape}")

    data = _bilinear_resize(img.astype(np.float64), resolution, resolution)
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    data = (data - np.asarray(mean)) / np.asarray(std)
    chw = data.transpose(2, 0, 1)[None].astype(np.float32)
    return Tensor._wrap(chw)


def pool_embedding(features: Tensor, mode: str = "mean") -> Tensor:
    """Collapse an encoder feature map (C, H, W) to an embedding vector."""
    if features.rank != 3:
        raise DimensionError(f"expected a rank-3 feature map, got rank {features.rank}")
    if mode == "mean":
        pooled = features.array.astype(np.float64).mean(axis=(1, 2))
        return Tensor._wrap(pooled.astype(np.float32))
    if mode == "flatten":
        return Tensor._wrap(features.array.reshape(-1).copy())
    raise ConfigError(f"unknown pooling mode {mode!r}, expected 'mean' or 'flatten'")


# --- forward graph -----------------------------------------------------------


def _fold_bn(weights, prefix: str, eps: float) -> tuple[Tensor, Tensor]:
    # Fold stored batch-norm stats into the conv: y = scale*(conv) + shift.
    w = weights[f"{prefix}.weight"].array.astype(np.float64)
    gamma = weights[f"{prefix}.bn.gamma"].array.astype(np.float64)
    beta = weights[f"{prefix}.bn.beta"].array.astype(np.float64)
    mean = weights[f"{prefix}.bn.mean"].array.astype(np.float64)
    var = weights[f"{prefix}.bn.var"].array.astype(np.float64)
    scale = gamma / np.sqrt(var + eps)
    folded_w = (w * scale[:, None, None, None]).astype(np.float32)
    folded_b = (beta - mean * scale).astype(np.float32)
    return Tensor._wrap(folded_w), Tensor._wrap(folded_b)


def _conv_bn(x: Tensor, weights, prefix: str, eps: float, stride=1, padding=0, groups=1) -> Tensor:
    w, b = _fold_bn(weights, prefix, eps)
    return conv2d(x, w, b, stride=stride, padding=padding, groups=groups)


def _mbconv(x: Tensor, weights, base: str, hidden: int, eps: float) -> Tensor:
    h = gelu(_conv_bn(x, weights, f"{base}.expand", eps))
    h = gelu(_conv_bn(h, weights, f"{base}.depth", eps, padding=1, groups=hidden))
    h = _conv_bn(h, weights, f"{base}.project", eps)
    return gelu(Tensor._wrap(x.array + h.array))


def _merge_transition(x: Tensor, weights, base: str, out_dim: int, stride: int, eps: float) -> Tensor:
    h = gelu(_conv_bn(x, weights, f"{base}.expand", eps))
    h = gelu(_conv_bn(h, weights, f"{base}.depth", eps, stride=stride, padding=1, groups=out_dim))
    return _conv_bn(h, weights, f"{base}.project", eps)


def _bias_index(window: int) -> np.ndarray:
    # Relative-offset lookup (|dr|, |dc|) -> dr*window + dc, shape (N, N).
    pos = np.arange(window)
    rows = np.repeat(pos, window)
    cols = np.tile(pos, window)
    dr = np.abs(rows[:, None] - rows[None, :])
    dc = np.abs(cols[:, None] - cols[None, :])
    return dr * window + dc


def _window_partition(grid: np.ndarray, window: int) -> tuple[np.ndarray, int, int]:
    h, w, c = grid.shape
    pad_b = (-h) % window
    pad_r = (-w) % window
    if pad_b or pad_r:
        grid = np.pad(grid, ((0, pad_b), (0, pad_r), (0, 0)))
    ph, pw = h + pad_b, w + pad_r
    nh, nw = ph // window, pw // window
    wins = (
        grid.reshape(nh, window, nw, window, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(nh * nw, window * window, c)
    )
    return wins, ph, pw


def _window_merge(wins: np.ndarray, window: int, ph: int, pw: int, h: int, w: int) -> np.ndarray:
    nh, nw = ph // window, pw // window
    c = wins.shape[-1]
    grid = (
        wins.reshape(nh, nw, window, window, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(ph, pw, c)
    )
    return grid[:h, :w]


def _window_attention(tokens: np.ndarray, h: int, w: int, weights, base: str, stage: StageConfig, eps: float) -> np.ndarray:
    d = stage.dim
    heads = stage.heads
    head_dim = d // heads
    window = stage.window

    wins, ph, pw = _window_partition(tokens.reshape(h, w, d), window)
    n_windows, n_tokens, _ = wins.shape

    flat = Tensor._wrap(wins.reshape(-1, d))
    normed = layer_norm(flat, weights[f"{base}.norm.gamma"], weights[f"{base}.norm.beta"], eps)
    qkv = linear(normed, weights[f"{base}.qkv.weight"], weights[f"{base}.qkv.bias"])
    per_head = qkv.array.reshape(n_windows, n_tokens, heads, 3 * head_dim).transpose(0, 2, 1, 3)
    q = per_head[..., :head_dim].reshape(n_windows * heads, n_tokens, head_dim)
    k = per_head[..., head_dim : 2 * head_dim].reshape(n_windows * heads, n_tokens, head_dim)
    v = per_head[..., 2 * head_dim :].reshape(n_windows * heads, n_tokens, head_dim)

    table = weights[f"{base}.bias_table"].array
    bias = table[:, _bias_index(window)]
    bias = np.broadcast_to(bias[None], (n_windows, heads, n_tokens, n_tokens)).reshape(
        n_windows * heads, n_tokens, n_tokens
    )

    attended = scaled_dot_product_attention(
        Tensor._wrap(np.ascontiguousarray(q)),
        Tensor._wrap(np.ascontiguousarray(k)),
        Tensor._wrap(np.ascontiguousarray(v)),
        Tensor._wrap(np.ascontiguousarray(bias)),
    )
    merged_heads = (
        attended.array.reshape(n_windows, heads, n_tokens, head_dim)
        .transpose(0, 2, 1, 3)
        .reshape(n_windows * n_tokens, d)
    )
    projected = linear(
        Tensor._wrap(np.ascontiguousarray(merged_heads)),
        weights[f"{base}.proj.weight"],
        weights[f"{base}.proj.bias"],
    )
    out_wins = projected.array.reshape(n_windows, n_tokens, d)
    return _window_merge(out_wins, window, ph, pw, h, w).reshape(h * w, d)


def _mlp(tokens: np.ndarray, weights, base: str, eps: float) -> np.ndarray:
    t = Tensor._wrap(tokens)
    normed = layer_norm(t, weights[f"{base}.norm.gamma"], weights[f"{base}.norm.beta"], eps)
    hidden = gelu(linear(normed, weights[f"{base}.fc1.weight"], weights[f"{base}.fc1.bias"]))
    return linear(hidden, weights[f"{base}.fc2.weight"], weights[f"{base}.fc2.bias"]).array


def _attention_block(x: Tensor, weights, base: str, stage: StageConfig, res: int, eps: float, bn_eps: float) -> Tensor:
    d = stage.dim
    tokens = x.array.reshape(d, res * res).T
    tokens = np.ascontiguousarray(tokens)

    tokens = tokens + _window_attention(tokens, res, res, weights, f"{base}.attn", stage, eps)

    spatial = Tensor._wrap(np.ascontiguousarray(tokens.T.reshape(1, d, res, res)))
    spatial = _conv_bn(spatial, weights, f"{base}.local", bn_eps, padding=1, groups=d)
    tokens = np.ascontiguousarray(spatial.array.reshape(d, res * res).T)

    tokens = tokens + _mlp(tokens, weights, f"{base}.mlp", eps)
    return Tensor._wrap(np.ascontiguousarray(tokens.T.reshape(1, d, res, res)))


def _layer_norm_2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    # Normalise across channels at each spatial position.
    _, c, h, w = x.shape
    tokens = Tensor._wrap(np.ascontiguousarray(x.array.reshape(c, h * w).T))
    normed = layer_norm(tokens, gamma, beta, eps)
    return Tensor._wrap(np.ascontiguousarray(normed.array.T.reshape(1, c, h, w)))


def encode(x: Tensor, config: EncoderConfig, weights: Mapping[str, Tensor]) -> Tensor:
    """Run the frozen encoder on one preprocessed image.

    `x` has shape (1, 3, S, S) with S = config.input_resolution; the
    result is the neck feature map of shape (output_channels, S/R, S/R).
    """
    s = config.input_resolution
    if x.shape != (1, 3, s, s):
        raise DimensionError(f"encoder input must be (1, 3, {s}, {s}), got {x.shape}")
    validate_weights(config, weights)

    bn_eps = config.bn_epsilon
    h = gelu(_conv_bn(x, weights, "encoder.stem.conv0", bn_eps, stride=2, padding=1))
    h = _conv_bn(h, weights, "encoder.stem.conv1", bn_eps, stride=2, padding=1)

    resolutions = config.stage_resolutions()
    for i, stage in enumerate(config.stages):
        res = resolutions[i]
        for j in range(stage.blocks):
            base = f"encoder.stage{i}.block{j}"
            if stage.kind == "conv":
                h = _mbconv(h, weights, base, int(stage.dim * stage.expand_ratio), bn_eps)
            else:
                h = _attention_block(h, weights, base, stage, res, config.ln_epsilon, bn_eps)
        if i < len(config.stages) - 1:
            h = _merge_transition(
                h,
                weights,
                f"encoder.stage{i}.down",
                config.stages[i + 1].dim,
                config.downsample_strides[i],
                bn_eps,
            )

    neck = conv2d(h, weights["encoder.neck.conv0.weight"])
    neck = _layer_norm_2d(
        neck, weights["encoder.neck.norm0.gamma"], weights["encoder.neck.norm0.beta"], config.neck_epsilon
    )
    neck = conv2d(neck, weights["encoder.neck.conv1.weight"], padding=1)
    neck = _layer_norm_2d(
        neck, weights["encoder.neck.norm1.gamma"], weights["encoder.neck.norm1.beta"], config.neck_epsilon
    )
    grid = config.grid
    return Tensor._wrap(neck.array.reshape(config.output_channels, grid, grid))
