"""Checksum-protected 2D convolution: detection, correction and fault injection."""

from __future__ import annotations

from .checksums import (
    InputChecksums,
    OutputChecksums,
    OutputSummations,
    default_tau,
    input_checksums,
    mismatch,
    output_checksums,
    output_summations,
)
from .errors import (
    ConfigError,
    FaultSpecError,
    FTConvError,
    IntegrityError,
    ShapeError,
    UnsupportedError,
    WeightFileError,
)
from .faults import FaultHook, FaultSpec, GroundTruth, campaign, inject
from .layer import ConvLayer
from .model import Model, ModelConfig, LayerConfig, load_model
from .schemes import detect_coc_d, run_scheme
from .tensor import ConvParams, conv_backward, conv_forward
from .workflow import LayerPlan, decide_rc, estimate_error_probs, protect_conv, run_protected_layer

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvLayer", "ConvParams", "FTConvError", "FaultHook", "FaultSpec", "FaultSpecError",
    "GroundTruth", "InputChecksums", "IntegrityError", "LayerConfig", "LayerPlan", "Model", "ModelConfig",
    "OutputChecksums", "OutputSummations", "ShapeError", "UnsupportedError", "WeightFileError",
    "campaign", "conv_backward", "conv_forward", "decide_rc", "default_tau", "detect_coc_d",
    "estimate_error_probs", "inject", "input_checksums", "load_model", "mismatch", "output_checksums",
    "output_summations", "protect_conv", "run_protected_layer", "run_scheme",
]
