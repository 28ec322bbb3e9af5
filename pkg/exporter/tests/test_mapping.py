import numpy as np
import pytest

pytest.importorskip("torch")
pytest.importorskip("anomalite")
# a real submodule, so a stray namespace dir on sys.path cannot satisfy the check
pytest.importorskip("exporter.container")

import anomalite

from exporter import (
    format_table,
    generate_mapping,
    named_architecture,
    packaged_table,
    parse_table,
    partition_checkpoint_keys,
)
from exporter.errors import ConvertError


@pytest.mark.parametrize("name", ["mobilesam-v1", "tiny-parity"])
def test_mapping_is_total_against_engine_spec(name):
    """Targets cover the engine's weight contract exactly, in order."""
    arch = named_architecture(name)
    cfg = anomalite.EncoderConfig.from_json(arch.to_config_json())
    spec = anomalite.weight_spec(cfg)
    mapping = generate_mapping(arch)
    assert [e.target for e in mapping] == list(spec)
    for entry in mapping:
        assert entry.shape == spec[entry.target], entry.target
    sources = [e.source for e in mapping]
    assert len(set(sources)) == len(sources)


def test_mobilesam_parameter_total():
    mapping = generate_mapping(named_architecture("mobilesam-v1"))
    total = sum(int(np.prod(e.shape)) for e in mapping)
    assert total == 5_753_748
    # within one percent of the published 5.78M footprint
    assert abs(total - 5_780_000) <= 57_800


def test_packaged_table_matches_generator():
    """Checked-in snapshot == regenerated mapping; regenerate on drift."""
    mapping = generate_mapping(named_architecture("mobilesam-v1"))
    assert packaged_table("mobilesam-v1") == mapping
    with pytest.raises(ConvertError, match="no packaged mapping"):
        packaged_table("unknown-arch")


def test_table_round_trip():
    mapping = generate_mapping(named_architecture("tiny-parity"))
    assert parse_table(format_table(mapping)) == mapping
    with pytest.raises(ConvertError, match="columns"):
        parse_table("a\tb\n")


def test_partition_strips_prefix_and_drops_bookkeeping():
    keys = [
        "image_encoder.patch_embed.seq.0.c.weight",
        "image_encoder.patch_embed.seq.0.bn.num_batches_tracked",
        "image_encoder.layers.1.blocks.0.attn.attention_bias_idxs",
        "image_encoder.norm_head.weight",
        "image_encoder.head.bias",
        "mask_decoder.iou_token.weight",
        "prompt_encoder.pe_layer.gaussian_matrix",
    ]
    wanted, ignored = partition_checkpoint_keys(keys)
    assert wanted == {"patch_embed.seq.0.c.weight": "image_encoder.patch_embed.seq.0.c.weight"}
    assert len(ignored) == 6


def test_partition_accepts_bare_encoder_state_dict():
    keys = ["neck.0.weight", "layers.0.blocks.0.conv1.bn.num_batches_tracked"]
    wanted, ignored = partition_checkpoint_keys(keys)
    assert wanted == {"neck.0.weight": "neck.0.weight"}
    assert ignored == ["layers.0.blocks.0.conv1.bn.num_batches_tracked"]
