import numpy as np
import pytest

torch = pytest.importorskip("torch")
pytest.importorskip("anomalite")
# a real submodule, so a stray namespace dir on sys.path cannot satisfy the check
pytest.importorskip("exporter.container")

from exporter import (
    ConvertError,
    ImageEncoder,
    convert_checkpoint,
    emit_fixtures,
    load_model,
    named_architecture,
    read_container,
    write_container,
)


@pytest.fixture(scope="module")
def weights_path(tmp_path_factory):
    td = tmp_path_factory.mktemp("fixtures")
    torch.manual_seed(3)
    model = ImageEncoder(named_architecture("tiny-parity"))
    ckpt = td / "tiny.pt"
    torch.save(model.state_dict(), ckpt)
    out = td / "tiny.tensors"
    convert_checkpoint(ckpt, named_architecture("tiny-parity"), out)
    return out


def test_load_model_round_trips_weights(weights_path):
    """Inverse mapping: container tensors land back on the torch keys verbatim."""
    model, arch, meta = load_model(weights_path)
    assert arch.name == "tiny-parity"
    assert not model.training
    tensors, _ = read_container(weights_path)
    state = model.state_dict()
    assert np.array_equal(
        state["patch_embed.seq.0.c.weight"].numpy(), tensors["encoder.stem.conv0.weight"]
    )
    assert np.array_equal(
        state["layers.1.blocks.0.attn.attention_biases"].numpy(),
        tensors["encoder.stage1.block0.attn.bias_table"],
    )
    assert state["patch_embed.seq.0.bn.num_batches_tracked"].item() == 0


def test_load_model_rejects_incomplete_container(weights_path, tmp_path):
    tensors, meta = read_container(weights_path)
    del tensors["encoder.neck.conv0.weight"]
    bad = tmp_path / "incomplete.tensors"
    write_container(tensors, meta, bad)
    with pytest.raises(ConvertError, match="missing tensor.*neck.conv0"):
        load_model(bad)


def test_load_model_rejects_extra_tensors(weights_path, tmp_path):
    tensors, meta = read_container(weights_path)
    tensors["encoder.stage9.block0.weight"] = np.zeros((1, 1), dtype=np.float32)
    bad = tmp_path / "extra.tensors"
    write_container(tensors, meta, bad)
    with pytest.raises(ConvertError, match="unrecognised tensors"):
        load_model(bad)


def test_load_model_requires_config_metadata(weights_path, tmp_path):
    tensors, _ = read_container(weights_path)
    bad = tmp_path / "nometa.tensors"
    write_container(tensors, {}, bad)
    with pytest.raises(ConvertError, match="encoder_config"):
        load_model(bad)


def test_emit_fixtures_contents(weights_path, tmp_path):
    out = tmp_path / "fx.tensors"
    manifest = emit_fixtures(weights_path, out, count=2, seed=9)
    tensors, meta = read_container(out)
    assert sorted(tensors) == ["features.0", "features.1", "input.0", "input.1"]
    assert tensors["input.0"].shape == (3, 64, 64)
    assert tensors["features.0"].shape == (32, 4, 4)
    assert meta["count"] == "2" and meta["seed"] == "9"
    assert "encoder_config" in meta
    assert manifest.feature_shape == (32, 4, 4)
    # different seeds, different inputs
    other = tmp_path / "fx2.tensors"
    emit_fixtures(weights_path, other, count=2, seed=10)
    tensors2, _ = read_container(other)
    assert not np.array_equal(tensors2["input.0"], tensors["input.0"])


def test_emit_fixtures_validates_count(weights_path, tmp_path):
    with pytest.raises(ConvertError, match="count"):
        emit_fixtures(weights_path, tmp_path / "x.tensors", count=0)
