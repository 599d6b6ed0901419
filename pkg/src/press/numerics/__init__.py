"""Dense f64 tensors, reverse-mode differentiation and checkpoint I/O."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv1d,
    depthwise_conv1d,
    div,
    exp,
    expand_dims,
    flip,
    gated_split,
    getitem,
    is_grad_enabled,
    lgamma,
    linear_scan,
    log,
    matmul,
    max_,
    mean,
    mul,
    neg,
    no_grad,
    pad,
    power,
    reshape,
    rms_normalize,
    sequential_scan,
    shift,
    sigmoid,
    sin,
    snake,
    softmax,
    softplus,
    sqrt,
    stack,
    sub,
    sum_,
    swapaxes,
    transpose,
    unbroadcast,
)

__all__ = [name for name in dir() if not name.startswith("_")]
