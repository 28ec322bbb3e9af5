"""Scoring head: config defaults, init, forward pass, score wrapper."""

import numpy as np
import pytest

from anomalite import (
    AnomalyScore,
    ConfigError,
    DimensionError,
    HeadConfig,
    HeadWeights,
    Tensor,
    WeightValidationError,
    head_forward,
    head_init,
    linear,
    relu,
)

from oracles import naive_sigmoid


def test_default_hidden_layout():
    assert HeadConfig.with_default_hidden(64, 1).hidden_dims == ()
    assert HeadConfig.with_default_hidden(64, 2).hidden_dims == (64,)
    assert HeadConfig.with_default_hidden(64, 3).hidden_dims == (64, 32)
    assert HeadConfig.with_default_hidden(3, 3).hidden_dims == (3, 1)
    with pytest.raises(ConfigError):
        HeadConfig.with_default_hidden(64, 0)
    with pytest.raises(ConfigError):
        HeadConfig.with_default_hidden(64, 4)


def test_config_dims_and_json():
    cfg = HeadConfig(input_dim=8, hidden_dims=(4, 2))
    assert cfg.n_layers == 3
    assert cfg.dims == (8, 4, 2, 1)
    assert HeadConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigError):
        HeadConfig(input_dim=0, hidden_dims=())
    with pytest.raises(ConfigError):
        HeadConfig(input_dim=8, hidden_dims=(4, 0))


def test_init_deterministic_bounded_zero_bias():
    cfg = HeadConfig(input_dim=16, hidden_dims=(8,))
    a = head_init(cfg, seed=3)
    b = head_init(cfg, seed=3)
    c = head_init(cfg, seed=4)
    for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
        assert np.array_equal(wa.array, wb.array)
        assert np.array_equal(ba.array, bb.array)
    assert any(
        not np.array_equal(x[0].array, y[0].array) for x, y in zip(a.layers, c.layers)
    )
    w0, b0 = a.layers[0]
    assert w0.shape == (8, 16) and b0.shape == (8,)
    assert np.abs(w0.array).max() <= np.sqrt(1.0 / 16)
    assert np.array_equal(b0.array, np.zeros(8, dtype=np.float32))
    w1, _ = a.layers[1]
    assert np.abs(w1.array).max() <= np.sqrt(1.0 / 8)


def test_single_layer_head_is_exactly_linear():
    cfg = HeadConfig(input_dim=12, hidden_dims=())
    weights = head_init(cfg, seed=7)
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((5, 12)).astype(np.float32))
    got = head_forward(x, weights)
    w, b = weights.layers[0]
    want = linear(x, w, b)
    assert np.array_equal(got.array, want.array.reshape(-1))


def test_two_layer_head_matches_kernel_composition():
    cfg = HeadConfig(input_dim=6, hidden_dims=(4,))
    weights = head_init(cfg, seed=1)
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((3, 6)).astype(np.float32))
    got = head_forward(x, weights)
    hidden = relu(linear(x, *weights.layers[0]))
    want = linear(hidden, *weights.layers[1])
    assert np.array_equal(got.array, want.array.reshape(-1))


def test_hand_worked_forward():
    # logit = max(0, [1,-1].e + 0.5) with identity second stage collapsed away:
    # single layer, e = [2, 1] -> 2 - 1 + 0.5 = 1.5
    weights = HeadWeights(
        layers=[(Tensor([[1.0, -1.0]]), Tensor([0.5]))],
    )
    out = head_forward(Tensor([2.0, 1.0]), weights)
    assert out.shape == (1,)
    assert out.array[0] == np.float32(1.5)


def test_forward_accepts_single_vector():
    cfg = HeadConfig(input_dim=5, hidden_dims=(3,))
    weights = head_init(cfg, seed=0)
    vec = Tensor(np.ones(5, dtype=np.float32))
    batch = Tensor(np.ones((1, 5), dtype=np.float32))
    assert np.array_equal(head_forward(vec, weights).array, head_forward(batch, weights).array)
    with pytest.raises(DimensionError):
        head_forward(Tensor(np.ones(4, dtype=np.float32)), weights)


def test_mapping_round_trip_and_errors():
    cfg = HeadConfig(input_dim=10, hidden_dims=(6,))
    weights = head_init(cfg, seed=5)
    mapping = weights.to_mapping()
    assert set(mapping) == {
        "head.layer0.weight",
        "head.layer0.bias",
        "head.layer1.weight",
        "head.layer1.bias",
    }
    again = HeadWeights.from_mapping(mapping)
    assert again.config == cfg
    for (w1, b1), (w2, b2) in zip(weights.layers, again.layers):
        assert np.array_equal(w1.array, w2.array)
        assert np.array_equal(b1.array, b2.array)

    broken = dict(mapping)
    del broken["head.layer1.bias"]
    with pytest.raises(WeightValidationError):
        HeadWeights.from_mapping(broken)
    broken = dict(mapping)
    broken["head.layer9.weight"] = mapping["head.layer0.weight"]
    with pytest.raises(WeightValidationError):
        HeadWeights.from_mapping(broken)


def test_layer_chain_validation():
    with pytest.raises(WeightValidationError):
        HeadWeights(layers=[(Tensor([[1.0, 2.0]]), Tensor([0.0, 0.0]))])  # bias width
    with pytest.raises(WeightValidationError):
        HeadWeights(
            layers=[
                (Tensor(np.ones((4, 8), dtype=np.float32)), Tensor(np.zeros(4, dtype=np.float32))),
                (Tensor(np.ones((1, 5), dtype=np.float32)), Tensor(np.zeros(1, dtype=np.float32))),
            ]
        )  # 4 -> 5 mismatch
    with pytest.raises(WeightValidationError):
        HeadWeights(
            layers=[(Tensor(np.ones((2, 8), dtype=np.float32)), Tensor(np.zeros(2, dtype=np.float32)))]
        )  # final layer must emit one logit


def test_parameter_count():
    cfg = HeadConfig(input_dim=64, hidden_dims=(64, 32))
    weights = head_init(cfg, seed=0)
    # 64*64+64 + 32*64+32 + 1*32+1
    assert weights.parameter_count() == 4160 + 2080 + 33


def test_anomaly_score_wrapper():
    score = AnomalyScore.from_logit(0.0)
    assert score.probability == pytest.approx(0.5)
    assert score.predicted_label() == 1  # p >= threshold counts as anomalous
    assert AnomalyScore.from_logit(-3.0).predicted_label() == 0
    assert AnomalyScore.from_logit(50.0).predicted_label(threshold=0.99) == 1

    rng = np.random.default_rng(11)
    for logit in rng.standard_normal(200) * 30:
        s = AnomalyScore.from_logit(float(logit))
        assert s.probability == pytest.approx(naive_sigmoid(np.array([logit]))[0], abs=1e-12)
        assert 0.0 <= s.probability <= 1.0
    big = AnomalyScore.from_logit(1000.0)
    small = AnomalyScore.from_logit(-1000.0)
    assert big.probability == 1.0 and small.probability == 0.0
