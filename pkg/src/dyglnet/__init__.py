"""Dynamic global-local segmentation network on a from-scratch kernel stack."""

from .autodiff import (
    GradCheckReport,
    Parameter,
    Tape,
    Value,
    backward,
    constant,
    grad_check,
    watch,
)
from .blocks import (
    BatchNorm2d,
    Conv2d,
    DyFusionUp,
    DyFusionUpConfig,
    DyT,
    FeedForward,
    Module,
    MultiScaleDilatedConv,
    ShdcBlock,
    ShdcConfig,
    SingleHeadAttention,
    init_offsets,
)
from .checkpoint import read_checkpoint, write_checkpoint
from .data import (
    AugmentConfig,
    DatasetManifest,
    ManifestEntry,
    SegmentationSample,
    augment,
    load_manifest,
    load_sample,
    split_manifest,
    synth_dataset,
    write_manifest,
)
from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateStatisticsError,
    DimensionError,
    DyglError,
    FormatError,
    NumericError,
    StateError,
    UnsupportedFormatError,
    UnsupportedScaleError,
    VersionError,
)
from .losses import LossConfig, MetricsReport, bce_loss, dice_loss, evaluate, hybrid_loss
from .network import (
    REFERENCE_PARAM_BUDGET,
    Model,
    ModelConfig,
    build,
    load,
    param_count,
    save,
)
from .tensor import ConvSpec, Tensor
from .train import AdamW, TrainConfig, TrainResult, clip_grad_norm, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AugmentConfig",
    "BatchNorm2d",
    "ConfigurationError",
    "ContractError",
    "Conv2d",
    "ConvSpec",
    "DatasetManifest",
    "DegenerateStatisticsError",
    "DimensionError",
    "DyFusionUp",
    "DyFusionUpConfig",
    "DyT",
    "DyglError",
    "FeedForward",
    "FormatError",
    "GradCheckReport",
    "LossConfig",
    "ManifestEntry",
    "MetricsReport",
    "Model",
    "ModelConfig",
    "Module",
    "MultiScaleDilatedConv",
    "NumericError",
    "Parameter",
    "REFERENCE_PARAM_BUDGET",
    "SegmentationSample",
    "ShdcBlock",
    "ShdcConfig",
    "SingleHeadAttention",
    "StateError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "UnsupportedFormatError",
    "UnsupportedScaleError",
    "Value",
    "VersionError",
    "augment",
    "backward",
    "bce_loss",
    "build",
    "clip_grad_norm",
    "constant",
    "dice_loss",
    "evaluate",
    "grad_check",
    "hybrid_loss",
    "init_offsets",
    "load",
    "load_manifest",
    "load_sample",
    "lr_at",
    "param_count",
    "read_checkpoint",
    "save",
    "split_manifest",
    "synth_dataset",
    "train",
    "watch",
    "write_checkpoint",
    "write_manifest",
]
