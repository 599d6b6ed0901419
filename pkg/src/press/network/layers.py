"""Parameter containers and the primitive layers (no biases anywhere).

Sequences are channel-last, ``[B, T, C]``, except inside convolutions.
"""

from __future__ import annotations

import math

import numpy as np

from .. import numerics as nx
from ..numerics import Tensor

# softplus^-1(1): Snake frequencies start at 1
_SNAKE_INIT = math.log(math.e - 1.0)


class Module:
    """Registers tensors and submodules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def param(self, name: str, shape, kind: str, fill: float = 0.0) -> Tensor:
        t = Tensor(np.full(shape, fill, dtype=np.float64), requires_grad=True, kind=kind)
        setattr(self, name, t)
        return t

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


# ---------------------------------------------------------------- activations


def snake(x, theta, axis: int = -1) -> Tensor:
    """``x + sin(theta x)^2 / theta`` with one frequency per channel on ``axis``."""
    x, theta = nx.as_tensor(x), nx.as_tensor(theta)
    if axis % x.ndim != x.ndim - 1:
        shape = [1] * x.ndim
        shape[axis] = theta.shape[0]
        theta = theta.reshape(tuple(shape))
    return nx.snake(x, theta)


def glu(x, gate) -> Tensor:
    return x * nx.sigmoid(gate)


class Snake(Module):
    def __init__(self, channels: int, axis: int = -1):
        super().__init__()
        self.axis = axis
        self.param("rho", (channels,), "snake", _SNAKE_INIT)

    @property
    def theta(self) -> Tensor:
        return nx.softplus(self.rho)

    def __call__(self, x):
        return snake(x, self.theta, self.axis)


# ---------------------------------------------------------------- linear maps


class Linear(Module):
    """``x @ W`` on the last axis."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.param("weight", (d_in, d_out), "linear")

    @property
    def fans(self):
        return self.d_in, self.d_out

    def __call__(self, x):
        return x @ self.weight


class GLU(Module):
    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.d_out = d_out
        self.proj = Linear(d_in, 2 * d_out)

    def __call__(self, x):
        return nx.gated_split(self.proj(x))


class Conv1d(Module):
    """Bias-free ``[B, C_in, T] -> [B, C_out, T]`` convolution with 'same' padding."""

    def __init__(self, c_in: int, c_out: int, kernel: int, groups: int = 1):
        super().__init__()
        self.c_in, self.c_out, self.kernel, self.groups = c_in, c_out, kernel, groups
        self.param("weight", (c_out, c_in // groups, kernel), "conv")

    @property
    def fans(self):
        return (self.c_in // self.groups) * self.kernel, (self.c_out // self.groups) * self.kernel

    def __call__(self, x):
        left = (self.kernel - 1) // 2
        return nx.conv1d(x, self.weight, padding=(left, self.kernel - 1 - left), groups=self.groups)


class DepthwiseConv(Module):
    """Depthwise 'same' convolution applied to a channel-last ``[B, T, C]`` tensor.

    The weight is stored as ``[C, 1, K]``, the grouped-convolution layout.
    """

    def __init__(self, channels: int, kernel: int):
        super().__init__()
        self.channels, self.kernel = channels, kernel
        self.param("weight", (channels, 1, kernel), "conv")

    @property
    def fans(self):
        return self.kernel, self.kernel

    def __call__(self, x):
        left = (self.kernel - 1) // 2
        w = self.weight.reshape(self.channels, self.kernel)
        return nx.depthwise_conv1d(x, w, padding=(left, self.kernel - 1 - left))


# ---------------------------------------------------------------- normalization


def rms_norm(x, eps: float, axis: int = -1) -> Tensor:
    return nx.rms_normalize(x, eps, axis)


class RMSNorm(Module):
    def __init__(self, d: int, eps: float = 1e-2):
        super().__init__()
        self.eps = eps
        self.param("scale", (d,), "norm", 1.0)

    def __call__(self, x):
        return rms_norm(x, self.eps) * self.scale


def shift_norm(x, axis: int = 1, eps: float = 1e-12) -> Tensor:
    """Append a constant ``1/sqrt(C+1)`` channel on ``axis``, then RMS-normalize over it.

    Silence maps to the normalized constant pattern instead of amplified noise.
    """
    x = nx.as_tensor(x)
    c = x.shape[axis]
    shape = list(x.shape)
    shape[axis] = 1
    const = Tensor(np.full(shape, 1.0 / math.sqrt(c + 1.0)))
    return rms_norm(nx.concat([x, const], axis=axis), eps, axis=axis)


class LayerScale(Module):
    def __init__(self, d: int, init: float = 1e-5):
        super().__init__()
        self.param("gamma", (d,), "layerscale", init)

    def __call__(self, x):
        return x * self.gamma


# ---------------------------------------------------------------- patching


def patch(x, P: int) -> Tensor:
    """``[B, C, T] -> [B, P*C, T/P]``; within a patch the channel index varies fastest."""
    x = nx.as_tensor(x)
    B, C, T = x.shape
    if T % P:
        raise ValueError(f"length {T} is not a multiple of the patch size {P}")
    return x.reshape(B, C, T // P, P).transpose(0, 3, 1, 2).reshape(B, P * C, T // P)


def unpatch(x, P: int) -> Tensor:
    """Exact inverse of :func:`patch`."""
    x = nx.as_tensor(x)
    B, PC, Tp = x.shape
    if PC % P:
        raise ValueError(f"{PC} channels do not split into patches of {P}")
    C = PC // P
    return x.reshape(B, P, C, Tp).transpose(0, 2, 3, 1).reshape(B, C, Tp * P)
