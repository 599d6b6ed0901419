"""Separator architecture: heads, blocks and the multi-exit model."""

from .blocks import (
    GCFN,
    Block,
    LinearRNNLayer,
    LongConvLayer,
    Residual,
    SpeakerAttention,
    SpeakerSplit,
    hydra_bidirectional,
    linear_rnn,
    recurrence_gate,
)
from .config import ModelConfig, desk, parse_key_values, press4_small, press12_medium
from .layers import (
    GLU,
    Conv1d,
    Linear,
    Module,
    ModuleList,
    RMSNorm,
    Snake,
    glu,
    patch,
    rms_norm,
    shift_norm,
    snake,
    unpatch,
)
from .model import (
    DecoderHead,
    EncoderHead,
    InvGamHead,
    PressNet,
    config_path,
    init_params,
    parameter_std_targets,
    truncated_normal,
    weight_std,
)

__all__ = [name for name in dir() if not name.startswith("_")]
