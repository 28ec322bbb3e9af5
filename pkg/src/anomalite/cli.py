"""Command-line pipeline: embed -> train -> eval, plus bench.

Every subcommand takes --config <json> with optional --set key=value
dotted overrides and --out <dir>. Outputs are JSON (reports), JSON
lines (training history), and tensor containers (embeddings, head
weights). Exit codes: 0 success, 2 configuration error, 3 data or
dataset error, 4 weight/container error.

Reports are deterministic byte-for-byte across reruns except for fields
listed in their "volatile_fields" key (wall-clock timings), which
consumers should drop before comparing.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container as container_io
from .data import scan_dataset, stratified_split, load_image
from .encoder import (
    EncoderConfig,
    encode,
    named_config,
    pool_embedding,
    preprocess_image,
    validate_weights,
)
from .errors import (
    ConfigError,
    DecodeError,
    DegenerateDataError,
    EngineError,
    FormatError,
    WeightValidationError,
)
from .head import HeadConfig, HeadWeights, head_forward
from .metrics import count_parameters, evaluate_scores, latency_bench
from .tensor import Tensor
from .training import TrainConfig, train_head

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_WEIGHTS = 4

EMBEDDINGS_FILE = "embeddings.tensors"
HEAD_FILE = "head.tensors"
HISTORY_FILE = "train_history.jsonl"
EVAL_REPORT_FILE = "eval_report.json"
BENCH_REPORT_FILE = "bench_report.json"


class CommandFailure(Exception):
    """Internal: carries an exit code and a user-facing message."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset_root: str = ""
    dataset_layout: str = "mvtec"
    encoder_container: str = ""
    encoder_config: str | None = None
    pooling: str = "mean"
    head_layers: int = 2
    head_hidden: tuple[int, ...] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    train_fraction: float = 0.6
    threshold: float = 0.5
    bench_warmup: int = 10
    bench_iterations: int = 100
    output_dir: str = "run-output"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"split.train_fraction must be in (0, 1), got {self.train_fraction}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"eval.threshold must be in (0, 1), got {self.threshold}")
        if self.head_layers < 1:
            raise ConfigError(f"head.layers must be >= 1, got {self.head_layers}")
        if self.bench_warmup < 0 or self.bench_iterations < 1:
            raise ConfigError("bench.warmup must be >= 0 and bench.iterations >= 1")
        if self.pooling not in ("mean", "flatten"):
            raise ConfigError(f"encoder.pooling must be 'mean' or 'flatten', got {self.pooling!r}")


_CONFIG_SCHEMA = {
    "seed": int,
    "output_dir": str,
    "dataset": {"root": str, "layout": str},
    "encoder": {"container": str, "config": str, "pooling": str},
    "head": {"layers": int, "hidden_dims": list},
    "train": {
        "epochs": int,
        "learning_rate": float,
        "batch_size": int,
        "beta1": float,
        "beta2": float,
        "epsilon": float,
        "class_weight_override": float,
    },
    "split": {"train_fraction": float},
    "eval": {"threshold": float},
    "bench": {"warmup": int, "iterations": int},
}


def _check_known_keys(obj: dict, schema: dict, path: str = "") -> None:
    for key, value in obj.items():
        where = f"{path}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _check_known_keys(value, schema[key], f"{where}.")


def _coerce(value, expected, where: str):
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {where!r} must be a number, got {value!r}")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {where!r} must be an integer, got {value!r}")
        return value
    if expected is str and not isinstance(value, str):
        raise ConfigError(f"config key {where!r} must be a string, got {value!r}")
    return value


def _apply_override(obj: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set needs KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"--set needs a non-empty key, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # unquoted strings are taken literally
    node = obj
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set key {key!r} descends into non-object {part!r}")
        node = nxt
    node[parts[-1]] = value


def load_run_config(path, overrides=(), out_dir=None) -> RunConfig:
    """Read a JSON config file, apply --set overrides, validate strictly."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    for assignment in overrides:
        _apply_override(obj, assignment)
    _check_known_keys(obj, _CONFIG_SCHEMA)

    def get(section: str, key: str, default, expected):
        sec = obj.get(section, {})
        if key not in sec or sec[key] is None:
            return default
        return _coerce(sec[key], expected, f"{section}.{key}")

    train_section = obj.get("train", {})
    if not isinstance(train_section, dict):
        raise ConfigError("config key 'train' must be an object")
    try:
        train = TrainConfig(
            epochs=get("train", "epochs", 35, int),
            learning_rate=get("train", "learning_rate", 1e-2, float),
            batch_size=get("train", "batch_size", 32, int),
            beta1=get("train", "beta1", 0.9, float),
            beta2=get("train", "beta2", 0.999, float),
            epsilon=get("train", "epsilon", 1e-8, float),
            seed=_coerce(obj.get("seed", 0), int, "seed"),
            class_weight_override=get("train", "class_weight_override", None, float),
        )
    except EngineError:
        raise
    hidden = obj.get("head", {}).get("hidden_dims")
    if hidden is not None:
        if not isinstance(hidden, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in hidden
        ):
            raise ConfigError(f"head.hidden_dims must be a list of positive integers, got {hidden!r}")
        hidden = tuple(hidden)
    return RunConfig(
        seed=_coerce(obj.get("seed", 0), int, "seed"),
        dataset_root=get("dataset", "root", "", str),
        dataset_layout=get("dataset", "layout", "mvtec", str),
        encoder_container=get("encoder", "container", "", str),
        encoder_config=get("encoder", "config", None, str),
        pooling=get("encoder", "pooling", "mean", str),
        head_layers=get("head", "layers", 2, int),
        head_hidden=hidden,
        train=train,
        train_fraction=get("split", "train_fraction", 0.6, float),
        threshold=get("eval", "threshold", 0.5, float),
        bench_warmup=get("bench", "warmup", 10, int),
        bench_iterations=get("bench", "iterations", 100, int),
        output_dir=out_dir if out_dir is not None else _coerce(obj.get("output_dir", "run-output"), str, "output_dir"),
    )


def _write_json_atomic(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _load_encoder(cfg: RunConfig):
    """Load encoder weights and resolve their config from container metadata."""
    if not cfg.encoder_container:
        raise CommandFailure(EXIT_CONFIG, "encoder.container is required for this command")
    try:
        tensors, metadata = container_io.read_container(cfg.encoder_container)
    except FileNotFoundError:
        raise CommandFailure(EXIT_WEIGHTS, f"encoder container not found: {cfg.encoder_container}")
    except FormatError as exc:
        raise CommandFailure(EXIT_WEIGHTS, f"encoder container unreadable: {exc}")
    if "encoder_config" in metadata:
        encoder_config = EncoderConfig.from_json(metadata["encoder_config"])
        if cfg.encoder_config is not None and cfg.encoder_config != encoder_config.name:
            raise CommandFailure(
                EXIT_CONFIG,
                f"config names encoder {cfg.encoder_config!r} but the container "
                f"holds {encoder_config.name!r}",
            )
    elif cfg.encoder_config is not None:
        encoder_config = named_config(cfg.encoder_config)
    else:
        raise CommandFailure(
            EXIT_CONFIG,
            "container has no embedded encoder config; set encoder.config in the run config",
        )
    try:
        validate_weights(encoder_config, tensors)
    except WeightValidationError as exc:
        raise CommandFailure(EXIT_WEIGHTS, f"encoder weights rejected: {exc}")
    return tensors, encoder_config


def _read_embeddings(path: Path):
    """Load an embeddings container into (vectors, sample rows, metadata)."""
    try:
        tensors, metadata = container_io.read_container(path)
    except FileNotFoundError:
        raise CommandFailure(EXIT_WEIGHTS, f"embeddings container not found: {path}")
    except FormatError as exc:
        raise CommandFailure(EXIT_WEIGHTS, f"embeddings container unreadable: {exc}")
    if metadata.get("kind") != "embeddings":
        raise CommandFailure(EXIT_WEIGHTS, f"{path} is not an embeddings container")
    try:
        samples = json.loads(metadata["samples"])
    except (KeyError, json.JSONDecodeError) as exc:
        raise CommandFailure(EXIT_WEIGHTS, f"embeddings metadata is malformed: {exc}")
    vectors = []
    for row in samples:
        name = f"emb.{row['id']}"
        if name not in tensors:
            raise CommandFailure(EXIT_WEIGHTS, f"embeddings container is missing {name!r}")
        vectors.append(tensors[name].array)
    return np.stack(vectors), samples, metadata


def cmd_embed(cfg: RunConfig) -> int:
    if not cfg.dataset_root:
        raise CommandFailure(EXIT_CONFIG, "dataset.root is required for embed")
    encoder_weights, encoder_config = _load_encoder(cfg)
    try:
        manifest = scan_dataset(cfg.dataset_root, cfg.dataset_layout)
    except FileNotFoundError as exc:
        raise CommandFailure(EXIT_DATA, str(exc))
    if not manifest.entries:
        raise CommandFailure(EXIT_DATA, f"dataset at {cfg.dataset_root} contains no images")
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    manifest = stratified_split(manifest, cfg.train_fraction, cfg.seed)

    tensors: dict[str, Tensor] = {}
    rows = []
    for entry in manifest.entries:
        try:
            sample = load_image(entry)
        except DecodeError as exc:
            raise CommandFailure(EXIT_DATA, str(exc))
        x = preprocess_image(
            sample, encoder_config.input_resolution, encoder_config.mean, encoder_config.std
        )
        features = encode(x, encoder_config, encoder_weights)
        vector = pool_embedding(features, cfg.pooling)
        tensors[f"emb.{entry.id}"] = vector
        rows.append(
            {"id": entry.id, "category": entry.category, "label": entry.label, "split": entry.split}
        )

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metadata = {
        "kind": "embeddings",
        "embedding_dim": str(tensors[next(iter(tensors))].shape[0]),
        "pooling": cfg.pooling,
        "encoder_config": encoder_config.to_json(),
        "encoder_config_name": encoder_config.name,
        "samples": json.dumps(rows, sort_keys=True, separators=(",", ":")),
        "seed": str(cfg.seed),
        "train_fraction": repr(cfg.train_fraction),
    }
    out_path = out_dir / EMBEDDINGS_FILE
    container_io.write_container(tensors, metadata, out_path)
    print(f"embedded {len(rows)} samples -> {out_path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out_dir = Path(cfg.output_dir)
    vectors, samples, _ = _read_embeddings(out_dir / EMBEDDINGS_FILE)
    train_rows = [i for i, row in enumerate(samples) if row["split"] == "train"]
    if not train_rows:
        raise CommandFailure(EXIT_DATA, "no samples are tagged split=train")
    data = vectors[train_rows]
    labels = np.array([samples[i]["label"] for i in train_rows])

    dim = data.shape[1]
    if cfg.head_hidden is not None:
        head_config = HeadConfig(input_dim=dim, hidden_dims=cfg.head_hidden)
    else:
        head_config = HeadConfig.with_default_hidden(dim, cfg.head_layers)

    try:
        history_lines: list[dict] = []

        def on_epoch(epoch: int, mean_loss: float, elapsed_ms: float) -> None:
            history_lines.append(
                {"epoch": epoch, "mean_loss": mean_loss, "wall_clock_ms": elapsed_ms}
            )

        weights, losses = train_head(data, labels, head_config, cfg.train, on_epoch=on_epoch)
    except DegenerateDataError as exc:
        raise CommandFailure(EXIT_DATA, f"cannot train: {exc}")

    out_dir.mkdir(parents=True, exist_ok=True)
    head_meta = {
        "kind": "head-weights",
        "head_config": head_config.to_json(),
        "seed": str(cfg.train.seed),
        "epochs": str(cfg.train.epochs),
        "final_loss": repr(losses[-1]) if losses else "",
    }
    container_io.write_container(weights.to_mapping(), head_meta, out_dir / HEAD_FILE)

    history_path = out_dir / HISTORY_FILE
    with open(history_path, "w", encoding="utf-8") as fh:
        for line in history_lines:
            # wall_clock_ms is volatile; everything else is deterministic
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    print(f"trained {head_config.n_layers}-layer head on {len(train_rows)} samples -> {out_dir / HEAD_FILE}")
    if losses:
        print(f"loss: first epoch {losses[0]:.6f}, final epoch {losses[-1]:.6f}")
    return EXIT_OK


def _load_head(path: Path) -> HeadWeights:
    try:
        tensors, metadata = container_io.read_container(path)
    except FileNotFoundError:
        raise CommandFailure(EXIT_WEIGHTS, f"head container not found: {path}")
    except FormatError as exc:
        raise CommandFailure(EXIT_WEIGHTS, f"head container unreadable: {exc}")
    try:
        return HeadWeights.from_mapping(tensors)
    except WeightValidationError as exc:
        raise CommandFailure(EXIT_WEIGHTS, f"head weights rejected: {exc}")


def cmd_eval(cfg: RunConfig) -> int:
    out_dir = Path(cfg.output_dir)
    vectors, samples, _ = _read_embeddings(out_dir / EMBEDDINGS_FILE)
    weights = _load_head(out_dir / HEAD_FILE)
    eval_rows = [i for i, row in enumerate(samples) if row["split"] == "eval"]
    if not eval_rows:
        raise CommandFailure(EXIT_DATA, "no samples are tagged split=eval")

    logits = head_forward(np.ascontiguousarray(vectors[eval_rows]), weights).array
    report = evaluate_scores(
        ids=[samples[i]["id"] for i in eval_rows],
        categories=[samples[i]["category"] for i in eval_rows],
        labels=[samples[i]["label"] for i in eval_rows],
        logits=logits,
        threshold=cfg.threshold,
    )
    report["volatile_fields"] = []
    report["seed"] = cfg.seed
    _write_json_atomic(report, out_dir / EVAL_REPORT_FILE)

    for category, entry in report["categories"].items():
        if entry["degenerate"]:
            print(f"{category}: AUROC undefined (single class, {entry['count']} samples)")
        else:
            print(f"{category}: AUROC {entry['auroc']:.4f} over {entry['count']} samples")
    if report["average_auroc"] is not None:
        print(f"average AUROC: {report['average_auroc']:.4f}")
    for image in report["per_image"]:
        print(f"{image['id']}: {image['line']}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    encoder_weights, encoder_config = _load_encoder(cfg)
    out_dir = Path(cfg.output_dir)
    head_weights = _load_head(out_dir / HEAD_FILE)

    side = encoder_config.input_resolution
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    image = np.stack([(xx + yy) % 256, xx % 256, yy % 256], axis=2).astype(np.uint8)

    def runner():
        x = preprocess_image(image, side, encoder_config.mean, encoder_config.std)
        features = encode(x, encoder_config, encoder_weights)
        vector = pool_embedding(features, cfg.pooling)
        return head_forward(vector, head_weights).array[0]

    encoder_params = count_parameters(encoder_weights, "encoder.")
    head_params = head_weights.parameter_count()
    report = latency_bench(
        runner,
        warmup=cfg.bench_warmup,
        iterations=cfg.bench_iterations,
        parameter_counts={
            "encoder": encoder_params,
            "head": head_params,
            "total": encoder_params + head_params,
        },
    )
    payload = report.to_dict()
    payload["volatile_fields"] = ["durations_ms", "p50_ms", "p90_ms", "p95_ms", "max_ms"]
    _write_json_atomic(payload, out_dir / BENCH_REPORT_FILE)
    params = payload["parameters"]
    print(
        f"latency p50 {report.p50_ms:.2f} ms over {report.iterations} iterations, "
        f"parameters {params['total_millions']}M "
        f"(encoder {params['encoder_millions']}M + head {params['head_millions']}M)"
    )
    return EXIT_OK


_COMMANDS = {
    "embed": (cmd_embed, "encode every dataset image into an embeddings container"),
    "train": (cmd_train, "train the scoring head on the train split of the embeddings"),
    "eval": (cmd_eval, "score the eval split and write the evaluation report"),
    "bench": (cmd_bench, "measure end-to-end latency and report parameter counts"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomalite",
        description="Image anomaly detection: frozen encoder, trainable scoring head.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the JSON run config")
        cmd.add_argument(
            "--set",
            action="append",
            default=[],
            dest="overrides",
            metavar="KEY=VALUE",
            help="override a config key, e.g. --set train.epochs=5",
        )
        cmd.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.overrides, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler, _ = _COMMANDS[args.command]
    try:
        return handler(cfg)
    except CommandFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateDataError, DecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FormatError as exc:
        print(f"container error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS


if __name__ == "__main__":
    sys.exit(main())
