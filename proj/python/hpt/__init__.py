"""Histogram-based parameter-efficient tuning for transformer encoders."""

from ._core import (
    AuditRow,
    CompatError,
    ConfigError,
    DatasetBundle,
    EncoderModel,
    EpochRow,
    FormatError,
    HistogramLayer,
    HistPlacement,
    IoError,
    Method,
    ModelConfig,
    ParamAudit,
    PetlConfig,
    RunReport,
    ShapeError,
    Split,
    SyntheticSpec,
    Tensor,
    TrainConfig,
    TruncationError,
    ValueError,
    cka_linear,
    count_params,
    cross_entropy,
    evaluate,
    gelu,
    gen_synthetic,
    grad_check_model,
    hist_forward,
    layer_norm,
    load_checkpoint,
    matmul,
    model_forward,
    read_checkpoint_manifest,
    read_dataset,
    reduce_mean,
    save_checkpoint,
    similarity_report,
    softmax,
    sum,
    train,
    write_dataset,
)

__all__ = [
    "AuditRow",
    "CompatError",
    "ConfigError",
    "DatasetBundle",
    "EncoderModel",
    "EpochRow",
    "FormatError",
    "HistogramLayer",
    "HistPlacement",
    "IoError",
    "Method",
    "ModelConfig",
    "ParamAudit",
    "PetlConfig",
    "RunReport",
    "ShapeError",
    "Split",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "TruncationError",
    "ValueError",
    "cka_linear",
    "count_params",
    "cross_entropy",
    "evaluate",
    "gelu",
    "gen_synthetic",
    "grad_check_model",
    "hist_forward",
    "layer_norm",
    "load_checkpoint",
    "matmul",
    "model_forward",
    "read_checkpoint_manifest",
    "read_dataset",
    "reduce_mean",
    "save_checkpoint",
    "similarity_report",
    "softmax",
    "sum",
    "train",
    "write_dataset",
]

__version__ = "0.1.0"
