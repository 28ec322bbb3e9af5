"""Generate the converted-weight parity fixtures under tests/fixtures/parity/.

Run from the repository root with both packages installed:

    python3 tools/make_parity_fixtures.py

Needs the exporter package (and torch); the fixtures are committed so
the main test suite replays them without either. The weight container
starts from the engine's deterministic init, then the bias tables and
batch-norm statistics are pushed off their neutral defaults so the
replay would notice a mix-up in any of them.
"""

from pathlib import Path

import numpy as np

from anomalite import EncoderConfig, Tensor, encode, init_encoder_weights, read_container, write_container
from exporter import emit_fixtures, named_architecture

PARITY = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "parity"


_RANGES = {
    ".bias_table": (-0.5, 0.5),
    ".bn.mean": (-0.3, 0.3),
    ".bn.var": (0.6, 1.6),
    ".bn.beta": (-0.2, 0.2),
    ".norm.beta": (-0.2, 0.2),
}


def make_weights(cfg: EncoderConfig, path: Path):
    weights = init_encoder_weights(cfg, seed=2024)
    rng = np.random.default_rng(5)
    for name in list(weights):
        for suffix, (lo, hi) in _RANGES.items():
            if name.endswith(suffix):
                shape = weights[name].shape
                weights[name] = Tensor(rng.uniform(lo, hi, size=shape).astype(np.float32))
                break
    write_container(weights, {"encoder_config": cfg.to_json()}, path)


def main():
    PARITY.mkdir(parents=True, exist_ok=True)
    arch = named_architecture("tiny-parity")
    cfg = EncoderConfig.from_json(arch.to_config_json())

    weights_path = PARITY / "tiny_weights.tensors"
    fixtures_path = PARITY / "tiny_fixtures.tensors"
    make_weights(cfg, weights_path)
    manifest = emit_fixtures(weights_path, fixtures_path, count=3, seed=5)

    # replay through the engine before committing anything
    weights, _ = read_container(weights_path)
    fixtures, meta = read_container(fixtures_path)
    worst = 0.0
    for i in range(int(meta["count"])):
        x = fixtures[f"input.{i}"]
        want = fixtures[f"features.{i}"].array
        got = encode(Tensor(x.array.reshape((1, *x.shape))), cfg, weights).array
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst <= 1e-3, f"replay disagrees with the reference: {worst}"
    print(f"wrote {manifest.count} pairs, features {manifest.feature_shape}, max|diff| {worst:.2e}")


if __name__ == "__main__":
    main()
