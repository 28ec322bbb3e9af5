"""Checkpoint-key to container-name mapping.

`generate_mapping` derives every (source key, container name, shape)
triple from an Architecture, in container graph order. The packaged
TSV tables are snapshots of the same generator output, checked in so a
human can audit the correspondence and a test can catch drift.
"""

from __future__ import annotations

from importlib import resources
from typing import Iterable, NamedTuple

from .architecture import Architecture
from .errors import ConvertError

# full-model checkpoints carry the encoder under this prefix
CHECKPOINT_PREFIX = "image_encoder."

# classifier leftovers and other model parts that have no place in a container
IGNORED_PREFIXES = ("norm_head.", "head.")
IGNORED_SUFFIXES = (".num_batches_tracked", ".attention_bias_idxs")

_BN_FIELDS = (
    ("weight", "gamma"),
    ("bias", "beta"),
    ("running_mean", "mean"),
    ("running_var", "var"),
)


class MapEntry(NamedTuple):
    source: str
    target: str
    shape: tuple[int, ...]


def _conv_bn(src: str, dst: str, out_ch: int, in_ch: int, k: int) -> list[MapEntry]:
    rows = [MapEntry(f"{src}.c.weight", f"{dst}.weight", (out_ch, in_ch, k, k))]
    rows += [MapEntry(f"{src}.bn.{a}", f"{dst}.bn.{b}", (out_ch,)) for a, b in _BN_FIELDS]
    return rows


def _depthwise(src: str, dst: str, ch: int) -> list[MapEntry]:
    rows = [MapEntry(f"{src}.c.weight", f"{dst}.weight", (ch, 1, 3, 3))]
    rows += [MapEntry(f"{src}.bn.{a}", f"{dst}.bn.{b}", (ch,)) for a, b in _BN_FIELDS]
    return rows


def generate_mapping(arch: Architecture) -> tuple[MapEntry, ...]:
    rows: list[MapEntry] = []
    full = arch.stages[0].dim
    half = full // 2
    rows += _conv_bn("patch_embed.seq.0", "encoder.stem.conv0", half, 3, 3)
    rows += _conv_bn("patch_embed.seq.2", "encoder.stem.conv1", full, half, 3)

    for i, spec in enumerate(arch.stages):
        d = spec.dim
        for j in range(spec.blocks):
            src = f"layers.{i}.blocks.{j}"
            dst = f"encoder.stage{i}.block{j}"
            if spec.kind == "conv":
                hidden = int(d * spec.expand_ratio)
                rows += _conv_bn(f"{src}.conv1", f"{dst}.expand", hidden, d, 1)
                rows += _depthwise(f"{src}.conv2", f"{dst}.depth", hidden)
                rows += _conv_bn(f"{src}.conv3", f"{dst}.project", d, hidden, 1)
            else:
                hidden = int(d * spec.mlp_ratio)
                rows += [
                    MapEntry(f"{src}.attn.norm.weight", f"{dst}.attn.norm.gamma", (d,)),
                    MapEntry(f"{src}.attn.norm.bias", f"{dst}.attn.norm.beta", (d,)),
                    MapEntry(f"{src}.attn.qkv.weight", f"{dst}.attn.qkv.weight", (3 * d, d)),
                    MapEntry(f"{src}.attn.qkv.bias", f"{dst}.attn.qkv.bias", (3 * d,)),
                    MapEntry(
                        f"{src}.attn.attention_biases",
                        f"{dst}.attn.bias_table",
                        (spec.heads, spec.window * spec.window),
                    ),
                    MapEntry(f"{src}.attn.proj.weight", f"{dst}.attn.proj.weight", (d, d)),
                    MapEntry(f"{src}.attn.proj.bias", f"{dst}.attn.proj.bias", (d,)),
                ]
                rows += _depthwise(f"{src}.local_conv", f"{dst}.local", d)
                rows += [
                    MapEntry(f"{src}.mlp.norm.weight", f"{dst}.mlp.norm.gamma", (d,)),
                    MapEntry(f"{src}.mlp.norm.bias", f"{dst}.mlp.norm.beta", (d,)),
                    MapEntry(f"{src}.mlp.fc1.weight", f"{dst}.mlp.fc1.weight", (hidden, d)),
                    MapEntry(f"{src}.mlp.fc1.bias", f"{dst}.mlp.fc1.bias", (hidden,)),
                    MapEntry(f"{src}.mlp.fc2.weight", f"{dst}.mlp.fc2.weight", (d, hidden)),
                    MapEntry(f"{src}.mlp.fc2.bias", f"{dst}.mlp.fc2.bias", (d,)),
                ]
        if i < len(arch.stages) - 1:
            d_next = arch.stages[i + 1].dim
            src = f"layers.{i}.downsample"
            dst = f"encoder.stage{i}.down"
            rows += _conv_bn(f"{src}.conv1", f"{dst}.expand", d_next, d, 1)
            rows += _depthwise(f"{src}.conv2", f"{dst}.depth", d_next)
            rows += _conv_bn(f"{src}.conv3", f"{dst}.project", d_next, d_next, 1)

    d_last = arch.stages[-1].dim
    out = arch.output_channels
    rows += [
        MapEntry("neck.0.weight", "encoder.neck.conv0.weight", (out, d_last, 1, 1)),
        MapEntry("neck.1.weight", "encoder.neck.norm0.gamma", (out,)),
        MapEntry("neck.1.bias", "encoder.neck.norm0.beta", (out,)),
        MapEntry("neck.2.weight", "encoder.neck.conv1.weight", (out, out, 3, 3)),
        MapEntry("neck.3.weight", "encoder.neck.norm1.gamma", (out,)),
        MapEntry("neck.3.bias", "encoder.neck.norm1.beta", (out,)),
    ]
    return tuple(rows)


def format_table(mapping: Iterable[MapEntry]) -> str:
    lines = [
        f"{e.source}\t{e.target}\t{','.join(str(d) for d in e.shape)}" for e in mapping
    ]
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> tuple[MapEntry, ...]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConvertError(f"mapping table line {lineno} has {len(parts)} columns, expected 3")
        source, target, shape = parts
        rows.append(MapEntry(source, target, tuple(int(d) for d in shape.split(","))))
    return tuple(rows)


def packaged_table(name: str) -> tuple[MapEntry, ...]:
    """Load a checked-in mapping snapshot by architecture name."""
    ref = resources.files("exporter").joinpath(f"tables/{name}.tsv")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConvertError(f"no packaged mapping table for {name!r}") from None
    return parse_table(text)


def partition_checkpoint_keys(keys: Iterable[str]) -> tuple[dict[str, str], list[str]]:
    """Split raw checkpoint keys into (encoder keys, ignored keys).

    Encoder keys come back as {stripped name: original key}, with any
    `image_encoder.` prefix removed from the name. Keys from other
    model parts, classifier heads, and bookkeeping buffers land in the
    ignored list untouched.
    """
    keys = list(keys)
    prefixed = any(k.startswith(CHECKPOINT_PREFIX) for k in keys)
    wanted: dict[str, str] = {}
    ignored: list[str] = []
    for key in keys:
        name = key
        if prefixed:
            if not key.startswith(CHECKPOINT_PREFIX):
                ignored.append(key)
                continue
            name = key[len(CHECKPOINT_PREFIX) :]
        if name.startswith(IGNORED_PREFIXES) or name.endswith(IGNORED_SUFFIXES):
            ignored.append(key)
            continue
        wanted[name] = key
    return wanted, ignored
