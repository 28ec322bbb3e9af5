"""Head training: class-weighted binary cross-entropy and Adam.

The loss on raw logits s with labels y and positive-class weight w is

    L = -(1/N) * sum_i [ w * y_i * log(sigmoid(s_i))
                         + (1 - y_i) * log(1 - sigmoid(s_i)) ]

with w = count(y=0) / count(y=1) by default, which rebalances the
anomaly class against the typically much larger normal class. Loss and
gradient evaluate in float64 through log-sum-exp forms, so they stay
finite for any logit magnitude; parameters themselves are stored and
updated in float32.

Training is deterministic in (data, config): initialisation and the
per-epoch shuffle both derive from splitmix64 streams seeded by
`TrainConfig.seed`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateDataError, DimensionError
from .head import HeadConfig, HeadWeights, head_init
from .rng import derive_seed, shuffle_indices
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "LossBatch",
    "AdamState",
    "class_weight",
    "wbce_loss",
    "wbce_grad_logits",
    "head_backward",
    "adam_step",
    "train_head",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 35
    learning_rate: float = 1e-2
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    class_weight_override: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {value}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.class_weight_override is not None and self.class_weight_override <= 0:
            raise ConfigError(f"class weight must be positive, got {self.class_weight_override}")


def _check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise DimensionError("labels must be a non-empty 1-d array")
    if not np.isin(labels, (0, 1)).all():
        raise ConfigError("labels must be 0 (normal) or 1 (anomalous)")
    return labels.astype(np.int64)


@dataclass(frozen=True)
class LossBatch:
    """Logits, labels, and the positive-class weight for one batch."""

    logits: np.ndarray
    labels: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64).reshape(-1)
        labels = _check_labels(self.labels)
        if logits.shape != labels.shape:
            raise DimensionError(
                f"{logits.shape[0]} logits vs {labels.shape[0]} labels"
            )
        if not self.weight > 0:
            raise ConfigError(f"class weight must be positive, got {self.weight}")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weight", float(self.weight))


def class_weight(labels) -> float:
    """Positive-class weight count(y=0) / count(y=1).

    Needs both classes present: with no positives the ratio is undefined,
    with no negatives it would be zero and the loss would ignore errors
    on normal images entirely.
    """
    labels = _check_labels(labels)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0:
        raise DegenerateDataError("no positive (anomalous) samples, class weight undefined")
    if negatives == 0:
        raise DegenerateDataError("no negative (normal) samples, class weight would be zero")
    return negatives / positives


def wbce_loss(batch: LossBatch) -> float:
    """Mean weighted BCE over the batch, evaluated in float64.

    Uses softplus identities: -log(sigmoid(s)) = softplus(-s) and
    -log(1 - sigmoid(s)) = softplus(s), so no intermediate ever
    overflows or hits log(0).
    """
    s = batch.logits
    y = batch.labels.astype(np.float64)
    positive_term = np.logaddexp(0.0, -s)  # softplus(-s)
    negative_term = np.logaddexp(0.0, s)  # softplus(s)
    per_sample = batch.weight * y * positive_term + (1.0 - y) * negative_term
    return float(per_sample.mean())


def _sigmoid64(s: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(s))
    return np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def wbce_grad_logits(batch: LossBatch) -> np.ndarray:
    """dL/ds per sample (float64): (1/N) [w y (sigma(s)-1) + (1-y) sigma(s)]."""
    s = batch.logits
    y = batch.labels.astype(np.float64)
    sig = _sigmoid64(s)
    return (batch.weight * y * (sig - 1.0) + (1.0 - y) * sig) / s.shape[0]


def _layer_arrays(weights: HeadWeights) -> list[np.ndarray]:
    flat: list[np.ndarray] = []
    for w, b in weights.layers:
        flat.append(w.numpy())
        flat.append(b.numpy())
    return flat


def _forward_cached(batch: np.ndarray, params: Sequence[np.ndarray]):
    """Forward pass keeping pre-activations for the backward sweep."""
    inputs = [batch]  # post-activation input to each layer
    pre_acts = []
    h = batch
    n_layers = len(params) // 2
    for i in range(n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        a = h @ w.T + b
        pre_acts.append(a)
        if i < n_layers - 1:
            h = np.maximum(a, np.float32(0.0))
            inputs.append(h)
    logits = pre_acts[-1].reshape(-1)
    return logits, inputs, pre_acts


def _backward_cached(inputs, pre_acts, params, grad_logits: np.ndarray) -> list[np.ndarray]:
    n_layers = len(params) // 2
    grads: list[np.ndarray | None] = [None] * len(params)
    delta = grad_logits.reshape(-1, 1).astype(np.float32)
    for i in range(n_layers - 1, -1, -1):
        w = params[2 * i]
        grads[2 * i] = delta.T @ inputs[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w) * (pre_acts[i - 1] > 0)
    return grads  # type: ignore[return-value]


def head_backward(embeddings, weights: HeadWeights, grad_logits) -> list[tuple[Tensor, Tensor]]:
    """Gradients of the loss w.r.t. every head tensor.

    `grad_logits` is dL/ds per sample (as from `wbce_grad_logits`).
    Returns one (weight_grad, bias_grad) pair per layer, float32.
    """
    if isinstance(embeddings, Tensor):
        batch = embeddings.array
    else:
        batch = np.asarray(embeddings, dtype=np.float32)
    if batch.ndim != 2:
        raise DimensionError(f"embeddings must be rank 2 (N, d), got rank {batch.ndim}")
    g = np.asarray(grad_logits, dtype=np.float64).reshape(-1)
    if g.shape[0] != batch.shape[0]:
        raise DimensionError(f"{g.shape[0]} logit gradients vs {batch.shape[0]} embeddings")
    params = _layer_arrays(weights)
    _, inputs, pre_acts = _forward_cached(batch, params)
    flat = _backward_cached(inputs, pre_acts, params, g)
    return [(Tensor(flat[2 * i]), Tensor(flat[2 * i + 1])) for i in range(len(flat) // 2)]


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
        )


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One Adam update. Returns (new_params, new_state); inputs untouched.

    Arithmetic follows the dtype of the incoming parameters, so float64
    parameters get a full float64 update.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"parameter/gradient/state counts differ: {len(params)}/{len(grads)}/{len(state.m)}"
        )
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=p.dtype)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        new_params.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def train_head(
    embeddings,
    labels,
    head_config: HeadConfig,
    train_config: TrainConfig,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> tuple[HeadWeights, list[float]]:
    """Train a head on (N, d) embeddings with 0/1 labels.

    Returns the final weights and the mean loss per epoch. Both are
    bit-reproducible for a fixed (embeddings, labels, config); wall
    clock is only surfaced through the optional `on_epoch(epoch,
    mean_loss, elapsed_ms)` callback so it never contaminates results.
    With epochs=0 the returned weights are exactly `head_init` output.
    """
    if isinstance(embeddings, Tensor):
        data = embeddings.array
    else:
        data = np.asarray(embeddings, dtype=np.float32)
    if data.ndim != 2:
        raise DimensionError(f"embeddings must be rank 2 (N, d), got rank {data.ndim}")
    y = _check_labels(labels)
    if y.shape[0] != data.shape[0]:
        raise DimensionError(f"{data.shape[0]} embeddings vs {y.shape[0]} labels")
    if data.shape[1] != head_config.input_dim:
        raise DimensionError(
            f"embedding width {data.shape[1]} does not match head input {head_config.input_dim}"
        )

    weights = head_init(head_config, train_config.seed)
    if train_config.epochs == 0:
        return weights, []

    if train_config.class_weight_override is not None:
        weight = float(train_config.class_weight_override)
    else:
        weight = class_weight(y)

    params = _layer_arrays(weights)
    state = AdamState.zeros_like(params)
    n = data.shape[0]
    batch_size = train_config.batch_size
    history: list[float] = []

    for epoch in range(1, train_config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_indices(n, derive_seed(train_config.seed, epoch))
        loss_total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            batch = np.ascontiguousarray(data[idx])
            logits, inputs, pre_acts = _forward_cached(batch, params)
            loss_batch = LossBatch(logits=logits, labels=y[idx], weight=weight)
            loss_total += wbce_loss(loss_batch) * idx.shape[0]
            grad = wbce_grad_logits(loss_batch)
            grads = _backward_cached(inputs, pre_acts, params, grad)
            params, state = adam_step(params, grads, state, train_config)
        mean_loss = loss_total / n
        history.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, (time.perf_counter() - started) * 1e3)

    layers = tuple(
        (Tensor(params[2 * i]), Tensor(params[2 * i + 1])) for i in range(len(params) // 2)
    )
    return HeadWeights(layers=layers), history
