"""Separator layers: gated linear recurrence, long convolution, feed-forward,
speaker split and speaker attention, plus the pre-norm LayerScale residual."""

from __future__ import annotations

import math

from .. import numerics as nx
from ..numerics import Tensor
from .layers import GLU, DepthwiseConv, LayerScale, Linear, Module, RMSNorm, Snake

TIME_AXIS = -2


def recurrence_gate(r, lam) -> Tensor:
    """``sigmoid(lam) ** sigmoid(r)``, evaluated as ``exp(-sigmoid(r) * softplus(-lam))``."""
    return nx.exp(nx.sigmoid(r) * -nx.softplus(-nx.as_tensor(lam)))


def linear_rnn(r, x, lam) -> Tensor:
    """``h_t = g_t h_{t-1} + (1 - g_t) x_t`` over axis -2 with ``h_0 = 0``."""
    g = recurrence_gate(r, lam)
    return nx.linear_scan(g, (1.0 - g) * x, axis=TIME_AXIS)


def hydra_bidirectional(r, x, lam) -> Tensor:
    """``shift(R(r, x)) + flip(shift(R(flip r, flip x)))``; both directions share weights."""
    g = recurrence_gate(r, lam)
    b = (1.0 - g) * x
    forward = nx.shift(nx.linear_scan(g, b, axis=TIME_AXIS), TIME_AXIS)
    g_rev, b_rev = nx.flip(g, TIME_AXIS), nx.flip(b, TIME_AXIS)
    backward = nx.flip(nx.shift(nx.linear_scan(g_rev, b_rev, axis=TIME_AXIS), TIME_AXIS), TIME_AXIS)
    return forward + backward


class LinearRNNLayer(Module):
    """Bidirectional gated linear recurrence with a Snake-activated output gate."""

    def __init__(self, D: int):
        super().__init__()
        self.w_x = Linear(D, D)
        self.w_r = Linear(D, D)
        self.w_gate = Linear(D, D)
        self.gate_act = Snake(D)
        self.param("lam", (D,), "decay")
        self.w_out = Linear(D, D)

    def __call__(self, u):
        h = hydra_bidirectional(self.w_r(u), self.w_x(u), self.lam)
        return self.w_out(h * self.gate_act(self.w_gate(u)))


class LongConvLayer(Module):
    """Pointwise projection, wide depthwise convolution, Snake, pointwise projection."""

    def __init__(self, D: int, kernel: int):
        super().__init__()
        self.w_in = Linear(D, D)
        self.conv = DepthwiseConv(D, kernel)
        self.act = Snake(D)
        self.w_out = Linear(D, D)

    def __call__(self, u):
        return self.w_out(self.act(self.conv(self.w_in(u))))


class GCFN(Module):
    """Gated convolutional feed-forward layer."""

    def __init__(self, D: int, expand: int, kernel: int):
        super().__init__()
        self.hidden = expand * D
        self.w_in = Linear(D, 2 * self.hidden)
        self.conv = DepthwiseConv(2 * self.hidden, kernel)
        self.w_out = Linear(self.hidden, D)

    def __call__(self, u):
        return self.w_out(nx.gated_split(self.conv(self.w_in(u))))


class SpeakerAttention(Module):
    """Single-head attention across the speaker axis at every time step.

    Input is ``[S, T, D]``; the attention map is ``[T, S, S]`` and carries no
    positional information, so the layer is equivariant to speaker order.
    """

    def __init__(self, D: int):
        super().__init__()
        self.D = D
        self.w_q = Linear(D, D)
        self.w_k = Linear(D, D)
        self.w_v = Linear(D, D)
        self.w_out = Linear(D, D)
        self.last_weights = None

    def __call__(self, u):
        ut = nx.swapaxes(u, 0, 1)
        q, k, v = self.w_q(ut), self.w_k(ut), self.w_v(ut)
        scores = (q @ nx.swapaxes(k, 1, 2)) / math.sqrt(self.D)
        weights = nx.softmax(scores, axis=-1)
        self.last_weights = weights.data
        return nx.swapaxes(self.w_out(weights @ v), 0, 1)


class Residual(Module):
    """``x + layerscale * f(rmsnorm(x))``."""

    def __init__(self, D: int, layer: Module, eps: float = 1e-2, scale_init: float = 1e-5):
        super().__init__()
        self.norm = RMSNorm(D, eps)
        self.layer = layer
        self.scale = LayerScale(D, scale_init)

    def __call__(self, x):
        return x + self.scale(self.layer(self.norm(x)))


class Block(Module):
    """A special (time- or speaker-mixing) layer followed by a GCFN, each residual."""

    def __init__(self, D: int, special: Module, expand: int, kernel: int):
        super().__init__()
        self.special = Residual(D, special)
        self.ffn = Residual(D, GCFN(D, expand, kernel))

    def __call__(self, x):
        return self.ffn(self.special(x))


class SpeakerSplit(Module):
    """``[1, T, D] -> [S, T, D]``: one linear map into S channel groups."""

    def __init__(self, D: int, S: int):
        super().__init__()
        self.D, self.S = D, S
        self.proj = Linear(D, S * D)

    def __call__(self, x):
        _, T, _ = x.shape
        y = self.proj(x).reshape(T, self.S, self.D)
        return nx.swapaxes(y, 0, 1)


__all__ = [
    "GLU",
    "GCFN",
    "Block",
    "LinearRNNLayer",
    "LongConvLayer",
    "Residual",
    "SpeakerAttention",
    "SpeakerSplit",
    "hydra_bidirectional",
    "linear_rnn",
    "recurrence_gate",
]
