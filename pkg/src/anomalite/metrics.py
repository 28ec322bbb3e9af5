"""Evaluation and benchmarking: AUROC, confusion counts, latency, parameters.

AUROC is computed by the rank-sum (Mann-Whitney) identity with average
ranks for ties, which equals the probability that a random anomalous
sample scores above a random normal one, counting ties as half. That
makes it invariant under any strictly increasing transform of the
scores, so logits and probabilities give the same number.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, DegenerateDataError, DimensionError
from .head import AnomalyScore

__all__ = [
    "auroc",
    "confusion_at_threshold",
    "count_parameters",
    "percentile_nearest_rank",
    "BenchReport",
    "latency_bench",
    "evaluate_scores",
]


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size == 0:
        raise DimensionError("scores must be non-empty")
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.size} scores vs {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ConfigError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Area under the ROC curve for binary labels, ties counted half.

    Raises DegenerateDataError when only one class is present, since the
    area is undefined there.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError(
            f"AUROC undefined with {n_pos} positive and {n_neg} negative samples"
        )
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def confusion_at_threshold(scores, labels, threshold: float = 0.5) -> dict[str, int]:
    """tp/fp/tn/fn counts, predicting positive when score >= threshold."""
    scores, labels = _check_scores_labels(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    return {
        "tp": int(np.sum(predicted & actual)),
        "fp": int(np.sum(predicted & ~actual)),
        "tn": int(np.sum(~predicted & ~actual)),
        "fn": int(np.sum(~predicted & actual)),
    }


def count_parameters(tensors: Mapping[str, "object"], prefix: str = "") -> int:
    """Total element count over all tensors whose name starts with `prefix`."""
    total = 0
    for name, tensor in tensors.items():
        if name.startswith(prefix):
            total += int(np.prod(tensor.shape))
    return total


def format_millions(count: int) -> str:
    """Parameter count rendered in millions with two decimals, e.g. '11.53'."""
    return f"{count / 1e6:.2f}"


def percentile_nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p*n)-th smallest value (1-indexed)."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise DimensionError("percentile of an empty sequence is undefined")
    if not 0.0 < p <= 1.0:
        raise ConfigError(f"percentile must be in (0, 1], got {p}")
    ordered = np.sort(arr)
    rank = int(np.ceil(p * arr.size))
    return float(ordered[max(rank, 1) - 1])


@dataclass(frozen=True)
class BenchReport:
    """Latency distribution plus parameter counts for one benchmark run."""

    warmup: int
    iterations: int
    durations_ms: tuple[float, ...]
    p50_ms: float
    p90_ms: float
    p95_ms: float
    max_ms: float
    parameters: dict[str, int]

    def to_dict(self) -> dict:
        rendered = {f"{k}_millions": format_millions(v) for k, v in self.parameters.items()}
        return {
            "warmup": self.warmup,
            "iterations": self.iterations,
            "durations_ms": list(self.durations_ms),
            "p50_ms": self.p50_ms,
            "p90_ms": self.p90_ms,
            "p95_ms": self.p95_ms,
            "max_ms": self.max_ms,
            "parameters": dict(self.parameters) | rendered,
        }


_BENCH_ACTIVE = False


def latency_bench(
    runner: Callable[[], object],
    warmup: int = 10,
    iterations: int = 100,
    parameter_counts: Mapping[str, int] | None = None,
) -> BenchReport:
    """Time `runner` with a monotonic clock; warmup calls are discarded.

    Only one benchmark may run per process at a time; concurrent timing
    would contaminate both measurements.
    """
    global _BENCH_ACTIVE
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    if warmup < 0:
        raise ConfigError(f"warmup must be >= 0, got {warmup}")
    if _BENCH_ACTIVE:
        raise RuntimeError("another latency benchmark is already running in this process")
    _BENCH_ACTIVE = True
    try:
        for _ in range(warmup):
            runner()
        durations = []
        for _ in range(iterations):
            started = time.perf_counter_ns()
            runner()
            durations.append((time.perf_counter_ns() - started) / 1e6)
    finally:
        _BENCH_ACTIVE = False
    return BenchReport(
        warmup=warmup,
        iterations=iterations,
        durations_ms=tuple(durations),
        p50_ms=percentile_nearest_rank(durations, 0.50),
        p90_ms=percentile_nearest_rank(durations, 0.90),
        p95_ms=percentile_nearest_rank(durations, 0.95),
        max_ms=float(max(durations)),
        parameters=dict(parameter_counts or {}),
    )


def evaluate_scores(ids, categories, labels, logits, threshold: float = 0.5) -> dict:
    """Assemble the evaluation report for a scored sample set.

    Per-category AUROC where defined; categories with a single class are
    flagged degenerate (auroc null) and excluded from the average.
    Confusion counts compare sigmoid probabilities against `threshold`.
    """
    ids = list(ids)
    categories = list(categories)
    labels = [int(v) for v in labels]
    logits = [float(v) for v in logits]
    if not (len(ids) == len(categories) == len(labels) == len(logits)):
        raise DimensionError("ids, categories, labels, and logits must have equal length")
    if len(ids) == 0:
        raise DimensionError("nothing to evaluate")
    if not all(v in (0, 1) for v in labels):
        raise ConfigError("labels must be 0 or 1")

    scores = [AnomalyScore.from_logit(s) for s in logits]
    per_image = [
        {
            "id": ids[i],
            "category": categories[i],
            "label": labels[i],
            "logit": scores[i].logit,
            "probability": scores[i].probability,
            "predicted": scores[i].predicted_label(threshold),
            "line": f"[{labels[i]}] - [{scores[i].predicted_label(threshold)}]",
        }
        for i in range(len(ids))
    ]

    by_category: dict[str, dict] = {}
    valid_aurocs = []
    for category in sorted(set(categories)):
        rows = [i for i in range(len(ids)) if categories[i] == category]
        cat_labels = [labels[i] for i in rows]
        cat_probs = [scores[i].probability for i in rows]
        entry = {
            "count": len(rows),
            "positives": sum(cat_labels),
            "negatives": len(rows) - sum(cat_labels),
        }
        try:
            value = auroc(cat_probs, cat_labels)
            entry["auroc"] = value
            entry["degenerate"] = False
            valid_aurocs.append(value)
        except DegenerateDataError:
            entry["auroc"] = None
            entry["degenerate"] = True
        by_category[category] = entry

    probabilities = [s.probability for s in scores]
    all_labels_set = set(labels)
    overall = None
    if all_labels_set == {0, 1}:
        overall = auroc(probabilities, labels)

    return {
        "threshold": threshold,
        "count": len(ids),
        "average_auroc": (sum(valid_aurocs) / len(valid_aurocs)) if valid_aurocs else None,
        "overall_auroc": overall,
        "categories": by_category,
        "confusion": confusion_at_threshold(probabilities, labels, threshold),
        "per_image": per_image,
    }
