"""Lightweight image-level anomaly detection.

A frozen hybrid conv/transformer encoder turns images into embeddings;
a small trainable head scores them; weighted binary cross-entropy
handles the class imbalance typical of defect datasets. Everything is
deterministic under a fixed seed, and weights travel in a simple
binary tensor container.
"""

from .container import read_container, read_container_info, write_container
from .data import (
    DatasetManifest,
    ImageSample,
    ManifestEntry,
    load_image,
    scan_dataset,
    stratified_split,
)
from .encoder import (
    EncoderConfig,
    StageConfig,
    available_configs,
    encode,
    init_encoder_weights,
    named_config,
    pool_embedding,
    preprocess_image,
    validate_weights,
    weight_spec,
)
from .errors import (
    ConfigError,
    CorruptionError,
    DecodeError,
    DegenerateDataError,
    DimensionError,
    EngineError,
    FormatError,
    WeightValidationError,
)
from .head import AnomalyScore, HeadConfig, HeadWeights, head_forward, head_init
from .metrics import (
    BenchReport,
    auroc,
    confusion_at_threshold,
    count_parameters,
    evaluate_scores,
    format_millions,
    latency_bench,
    percentile_nearest_rank,
)
from .tensor import (
    Tensor,
    activation,
    conv2d,
    gelu,
    layer_norm,
    linear,
    relu,
    scaled_dot_product_attention,
    sigmoid,
    softmax,
)
from .training import (
    AdamState,
    LossBatch,
    TrainConfig,
    adam_step,
    class_weight,
    head_backward,
    train_head,
    wbce_grad_logits,
    wbce_loss,
)

__version__ = "0.1.0"
