"""Encoder/decoder heads, the inverse-gamma head and the multi-exit separator."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .. import numerics as nx
from ..distributions import make_rng
from ..likelihoods import ExitPrediction
from ..numerics import Tensor
from .blocks import Block, LinearRNNLayer, LongConvLayer, SpeakerAttention, SpeakerSplit
from .config import ModelConfig
from .layers import GLU, Conv1d, DepthwiseConv, Linear, Module, ModuleList, Snake, patch, shift_norm, unpatch


class EncoderHead(Module):
    """Waveform ``[T]`` to latent ``[1, T/P, D]``.

    Wide convolution, Snake, ShiftNorm over the encoder channels, patching to
    ``(D_enc + 1) * P`` channels and a linear map to the model width.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.P = cfg.P
        self.conv = Conv1d(1, cfg.D_enc, cfg.K)
        self.act = Snake(cfg.D_enc, axis=1)
        self.proj = Linear((cfg.D_enc + 1) * cfg.P, cfg.D)

    def __call__(self, x):
        x = nx.as_tensor(x)
        if x.ndim != 1 or x.shape[0] == 0:
            raise ValueError(f"encoder expects a non-empty 1-D signal, got shape {x.shape}")
        if x.shape[0] % self.P:
            raise ValueError(f"signal length {x.shape[0]} is not a multiple of P={self.P}")
        y = self.act(self.conv(x.reshape(1, 1, -1)))
        y = patch(shift_norm(y, axis=1), self.P)
        return self.proj(nx.swapaxes(y, 1, 2))


class DecoderHead(Module):
    """Latent ``[S, T/P, D]`` to waveforms ``[S, T]``: GLU, wide convolution, unpatch."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.P = cfg.P
        self.D = cfg.D
        self.glu = GLU(cfg.D, cfg.D_enc * cfg.P)
        self.conv = Conv1d(cfg.D_enc * cfg.P, cfg.P, cfg.K)

    def __call__(self, latent):
        if latent.shape[-1] != self.D:
            raise ValueError(f"decoder head expects width {self.D}, got {latent.shape[-1]}")
        y = nx.swapaxes(self.glu(latent), 1, 2)
        y = unpatch(self.conv(y), self.P)
        return y.reshape(y.shape[0], y.shape[2])


class InvGamHead(Module):
    """Per-source positive increments ``(alpha~, beta~)`` from a latent ``[S, T, D]``."""

    def __init__(self, D: int):
        super().__init__()
        self.glu = GLU(D, D)
        self.act = Snake(D)
        self.proj = Linear(D, 2)

    def __call__(self, latent):
        pooled = self.act(self.glu(latent)).mean(axis=1)
        out = nx.softplus(self.proj(pooled))
        return out[:, 0], out[:, 1]


class Exit(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.decoder = DecoderHead(cfg)
        self.invgam = InvGamHead(cfg.D)


class PressNet(Module):
    """Multi-exit separator.

    Encoder head, ``N_enc`` mixture blocks alternating recurrence and long
    convolution, a speaker split, then ``N_dec`` decoder stages of (recurrence,
    long convolution, speaker attention) blocks with an exit after every
    ``exit_every`` stages.
    """

    def __init__(self, cfg: ModelConfig, seed: int | None = 0):
        super().__init__()
        object.__setattr__(self, "config", cfg)
        self.encoder = EncoderHead(cfg)
        self.enc_blocks = ModuleList(
            Block(
                cfg.D,
                LinearRNNLayer(cfg.D) if i % 2 == 0 else LongConvLayer(cfg.D, cfg.conv_kernel),
                cfg.ffn_expand,
                cfg.gcfn_kernel,
            )
            for i in range(cfg.N_enc)
        )
        self.split = SpeakerSplit(cfg.D, cfg.S)
        self.dec_blocks = ModuleList()
        for _ in range(cfg.N_dec):
            stage = ModuleList(
                [
                    Block(cfg.D, LinearRNNLayer(cfg.D), cfg.ffn_expand, cfg.gcfn_kernel),
                    Block(cfg.D, LongConvLayer(cfg.D, cfg.conv_kernel), cfg.ffn_expand, cfg.gcfn_kernel),
                    Block(cfg.D, SpeakerAttention(cfg.D), cfg.ffn_expand, cfg.gcfn_kernel),
                ]
            )
            self.dec_blocks.append(stage)
        self.exits = ModuleList(Exit(cfg) for _ in range(cfg.n_exits))
        if seed is not None:
            init_params(self, seed)

    def iter_exits(self, mix):
        """Yield :class:`ExitPrediction` objects lazily, one per exit.

        Blocks after an exit are only evaluated when the next item is requested.
        """
        cfg = self.config
        mix = nx.as_tensor(mix)
        if mix.ndim != 1 or mix.shape[0] == 0:
            raise ValueError("mixture must be a non-empty 1-D signal")
        T = mix.shape[0]
        pad = (-T) % cfg.P
        if pad:
            mix = nx.pad(mix, [(0, pad)])
        h = self.encoder(mix)
        for blk in self.enc_blocks:
            h = blk(h)
        h = self.split(h)
        alpha_sum = beta_sum = None
        for i, stage in enumerate(self.dec_blocks):
            for blk in stage:
                h = blk(h)
            if (i + 1) % cfg.exit_every:
                continue
            k = (i + 1) // cfg.exit_every - 1
            ex = self.exits[k]
            signals = ex.decoder(h)[:, :T]
            a_inc, b_inc = ex.invgam(h)
            alpha_sum = a_inc if alpha_sum is None else alpha_sum + a_inc
            beta_sum = b_inc if beta_sum is None else beta_sum + b_inc
            yield ExitPrediction(k + 1, signals, alpha_sum, 1.0 / beta_sum)

    def forward(self, mix) -> list[ExitPrediction]:
        return list(self.iter_exits(mix))

    __call__ = forward

    def save(self, path) -> None:
        """Write the checkpoint and a ``<path>.cfg`` config sidecar."""
        nx.save_checkpoint(path, self.state_dict())
        self.config.save(config_path(path))

    @classmethod
    def load(cls, path) -> "PressNet":
        cfg_file = config_path(path)
        if not cfg_file.exists():
            raise FileNotFoundError(f"missing model config {cfg_file}")
        model = cls(ModelConfig.load(cfg_file), seed=None)
        model.load_state_dict(nx.load_checkpoint(path))
        return model


def config_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".cfg")


def forward(mix, model: PressNet) -> list[ExitPrediction]:
    return model.forward(mix)


# ---------------------------------------------------------------- initialization

WEIGHT_KINDS = ("linear", "conv")


def weight_std(fan_in: int, fan_out: int) -> float:
    """``min(1, sqrt(fan_out / fan_in)) / sqrt(fan_in)``."""
    return min(1.0, math.sqrt(fan_out / fan_in)) / math.sqrt(fan_in)


def truncated_normal(rng, std: float, shape) -> np.ndarray:
    """Normal draws with anything beyond 3 standard deviations redrawn."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 3.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 3.0
    return out * std


def _modules_with_fans(module: Module, prefix: str = ""):
    if isinstance(module, (Linear, Conv1d, DepthwiseConv)):
        yield prefix + "weight", module
    for name, child in module._children.items():
        yield from _modules_with_fans(child, f"{prefix}{name}.")


def init_params(model: Module, seed: int) -> dict:
    """Initialize every parameter in registry order from one seed.

    Weights of linear/convolution layers: truncated normal with the
    fan-based standard deviation of :func:`weight_std`. Recurrence decays:
    ``sigmoid(lam) ~ U[0.9, 0.999]``. LayerScale 1e-5, norm scales 1, Snake
    frequencies 1.
    """
    rng = make_rng(seed)
    fans = {name: m.fans for name, m in _modules_with_fans(model)}
    for name, p in model.named_parameters():
        if p.kind in WEIGHT_KINDS:
            p.data = truncated_normal(rng, weight_std(*fans[name]), p.shape)
        elif p.kind == "decay":
            u = rng.uniform(0.9, 0.999, p.shape)
            p.data = np.log(u) - np.log1p(-u)
        elif p.kind == "layerscale":
            p.data = np.full(p.shape, 1e-5)
        elif p.kind == "norm":
            p.data = np.ones(p.shape)
        elif p.kind == "snake":
            p.data = np.full(p.shape, math.log(math.e - 1.0))
        else:
            raise ValueError(f"no initializer for parameter {name} of kind {p.kind!r}")
    return dict(model.named_parameters())


def parameter_std_targets(model: Module) -> dict:
    return {name: weight_std(*m.fans) for name, m in _modules_with_fans(model)}
