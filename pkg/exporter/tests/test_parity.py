"""Numeric agreement between the torch reference and the engine's encoder.

Converted weights have to mean the same thing on both sides: a forward
pass through the torch model and the engine's own encode must land on
the same feature map to well under the 1e-3 fixture budget. The tiny
architecture uses window 3 on 8x8 and 4x4 token grids, so the window
padding path is exercised, and every batch-norm buffer and bias table
is perturbed away from its neutral default before comparing.
"""

import numpy as np
import pytest

torch = pytest.importorskip("torch")
pytest.importorskip("anomalite")
# a real submodule, so a stray namespace dir on sys.path cannot satisfy the check
pytest.importorskip("exporter.container")

import anomalite

from exporter import ImageEncoder, convert_checkpoint, emit_fixtures, named_architecture


def _perturbed_tiny_model():
    torch.manual_seed(21)
    model = ImageEncoder(named_architecture("tiny-parity"))
    g = torch.Generator().manual_seed(42)
    with torch.no_grad():
        for name, buf in model.named_buffers():
            if name.endswith(".bn.running_mean"):
                buf.uniform_(-0.3, 0.3, generator=g)
            elif name.endswith(".bn.running_var"):
                buf.uniform_(0.6, 1.6, generator=g)
        for name, p in model.named_parameters():
            if name.endswith(".attention_biases"):
                p.uniform_(-0.5, 0.5, generator=g)
            elif name.endswith(".bn.weight"):
                p.uniform_(0.7, 1.3, generator=g)
            elif name.endswith(".bn.bias"):
                p.uniform_(-0.2, 0.2, generator=g)
    model.eval()
    return model


@pytest.fixture(scope="module")
def converted(tmp_path_factory):
    td = tmp_path_factory.mktemp("parity")
    model = _perturbed_tiny_model()
    ckpt = td / "tiny.pt"
    torch.save({"image_encoder." + k: v for k, v in model.state_dict().items()}, ckpt)
    weights_path = td / "tiny.tensors"
    convert_checkpoint(ckpt, named_architecture("tiny-parity"), weights_path)
    return model, weights_path


def test_engine_encode_matches_torch_forward(converted):
    model, weights_path = converted
    weights, meta = anomalite.read_container(weights_path)
    cfg = anomalite.EncoderConfig.from_json(meta["encoder_config"])
    rng = np.random.Generator(np.random.PCG64(7))
    for _ in range(3):
        image = rng.uniform(-2.0, 2.0, size=(1, 3, 64, 64)).astype(np.float32)
        with torch.no_grad():
            want = model(torch.from_numpy(image))[0].numpy()
        got = anomalite.encode(anomalite.Tensor(image), cfg, weights).array
        assert got.shape == want.shape == (32, 4, 4)
        assert want.std() > 0.1  # the comparison is not vacuous
        assert np.abs(got - want).max() <= 1e-3


def test_emitted_fixtures_replay_through_the_engine(converted, tmp_path):
    _, weights_path = converted
    out = tmp_path / "fixtures.tensors"
    manifest = emit_fixtures(weights_path, out, count=3, seed=11)
    assert manifest.count == 3
    assert manifest.feature_shape == (32, 4, 4)

    fixtures, meta = anomalite.read_container(out)
    assert meta["count"] == "3"
    assert meta["seed"] == "11"
    cfg = anomalite.EncoderConfig.from_json(meta["encoder_config"])
    weights, _ = anomalite.read_container(weights_path)
    for i in range(3):
        image = fixtures[f"input.{i}"]
        want = fixtures[f"features.{i}"]
        assert image.shape == (3, 64, 64)
        got = anomalite.encode(
            anomalite.Tensor(image.array.reshape(1, 3, 64, 64)), cfg, weights
        )
        assert np.abs(got.array - want.array).max() <= 1e-3


def test_fixture_emission_is_deterministic(converted, tmp_path):
    _, weights_path = converted
    a = tmp_path / "a.tensors"
    b = tmp_path / "b.tensors"
    emit_fixtures(weights_path, a, count=2, seed=5)
    emit_fixtures(weights_path, b, count=2, seed=5)
    assert a.read_bytes() == b.read_bytes()
