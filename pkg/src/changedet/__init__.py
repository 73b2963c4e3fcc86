"""Lightweight bitemporal change detection, self-contained on numpy.

The package bundles a minimal reverse-mode autodiff tensor core, a
weight-sharing three-stage encoder, a gated temporal-difference module,
local window + pooled global sigmoid attention, a fusion decoder, toy
synthetic training, metric/region analysis tools, weight serialization,
and a CLI (``changedet``).
"""

from .attention import (LocalGlobalBlock, PooledGlobalAttention,
                        SlidingWindowAttention, WindowSpec, sigmoid_attention)
from .decoder import ChangeMap, DecoderConfig, FusionDecoder
from .difference import DifferenceModule
from .encoder import Encoder, EncoderConfig
from .errors import (ChangeDetError, ConfigError, ImageFormatError,
                     PrecisionError, ShapeError, TrainingDiverged,
                     WeightFormatError, WeightMagicError, WeightShapeError,
                     WeightTruncatedError, WeightVersionError)
from .estimator import ChangeDetector
from .metrics import Confusion, confusion, diff_map, f1_to_iou, metrics, report
from .model import ChangeModel, ModelConfig
from .profiling import FlopReport, ParamReport, count_params, estimate_flops
from .regions import RegionInfo, SampleStats, dataset_summary, region_stats
from .serialization import WeightStore, load_weights, save_weights
from .synthetic import SyntheticDataset, SyntheticSpec, generate
from .tensor import Tensor, no_grad
from .training import AdamW, TrainConfig, ablation_run, evaluate_f1, train

__version__ = "0.1.0"

__all__ = [
    "AdamW", "ChangeDetError", "ChangeDetector", "ChangeMap", "ChangeModel",
    "Confusion", "ConfigError", "DecoderConfig", "DifferenceModule", "Encoder",
    "EncoderConfig", "FlopReport", "FusionDecoder", "ImageFormatError",
    "LocalGlobalBlock", "ModelConfig", "ParamReport", "PooledGlobalAttention",
    "PrecisionError", "RegionInfo", "SampleStats", "ShapeError",
    "SlidingWindowAttention", "SyntheticDataset", "SyntheticSpec", "Tensor",
    "TrainConfig", "TrainingDiverged", "WeightFormatError", "WeightMagicError",
    "WeightShapeError", "WeightStore", "WeightTruncatedError",
    "WeightVersionError", "WindowSpec", "ablation_run", "confusion",
    "count_params", "dataset_summary", "diff_map", "estimate_flops",
    "evaluate_f1", "f1_to_iou", "generate", "load_weights", "metrics",
    "no_grad", "region_stats", "report", "save_weights", "sigmoid_attention",
    "train", "__version__",
]
