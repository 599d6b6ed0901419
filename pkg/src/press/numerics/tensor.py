"""Dense f64 tensors with tape-based reverse-mode differentiation.

Broadcasting follows numpy: shapes are aligned from the trailing dimension
and a dimension of size 1 stretches to match. Gradients flowing back through
a broadcast are summed over the stretched axes so every gradient has the
shape of the tensor it belongs to.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np
from scipy.special import expit

from .. import _kernels

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording operations (inference, optimizer updates)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An immutable f64 array that remembers how it was computed.

    ``kind`` tags learnable leaves (``"linear"``, ``"conv"``, ``"norm"``, ...)
    so the optimizer can decide where weight decay applies.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op", "name", "kind", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, kind: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self.op = None
        self.name = name
        self.kind = kind

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, vjp, op: str) -> Tensor:
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = parents
        out._vjp = vjp
        out.op = op
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, b) -> Tensor:
    """``a ** b``; a tensor exponent requires a positive base."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        p = float(b)
        out = a.data**p
        return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")
    _check_broadcast("power", a, b)
    out = a.data**b.data

    def vjp(g):
        ga = unbroadcast(g * b.data * a.data ** (b.data - 1.0), a.shape)
        gb = unbroadcast(g * out * np.log(a.data), b.shape)
        return ga, gb

    return _make(out, (a, b), vjp, "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return _make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def lgamma(a) -> Tensor:
    """Elementwise log-gamma of a positive tensor."""
    from ..distributions import digamma

    a = as_tensor(a)
    out = _kernels.ln_gamma(a.data)
    return _make(out, (a,), lambda g: (g * digamma(a.data),), "lgamma")


# ---------------------------------------------------------------- fused activations


def gated_split(a) -> Tensor:
    """``a[..., :h] * sigmoid(a[..., h:])`` with ``h`` half the last axis."""
    a = as_tensor(a)
    if a.shape[-1] % 2:
        raise ValueError(f"gated_split: last axis {a.shape[-1]} is odd")
    h = a.shape[-1] // 2
    val, gate = a.data[..., :h], _sigmoid(a.data[..., h:])
    out = val * gate

    def vjp(g):
        ga = np.empty(a.shape)
        ga[..., :h] = g * gate
        ga[..., h:] = g * val * gate * (1.0 - gate)
        return (ga,)

    return _make(out, (a,), vjp, "gated_split")


def snake(x, theta) -> Tensor:
    """``x + sin(theta x)^2 / theta``; ``theta`` broadcasts against ``x``."""
    x, theta = as_tensor(x), as_tensor(theta)
    _check_broadcast("snake", x, theta)
    th = theta.data
    arg = th * x.data
    sn = np.sin(arg)
    out = x.data + sn * sn / th

    def vjp(g):
        s2 = np.sin(2.0 * arg)
        gx = g * (1.0 + s2)
        gt = g * (x.data * s2 - sn * sn / th) / th
        return unbroadcast(gx, x.shape), unbroadcast(gt, theta.shape)

    return _make(out, (x, theta), vjp, "snake")


def rms_normalize(x, eps: float, axis: int = -1) -> Tensor:
    """``x / sqrt(mean(x^2, axis) + eps)``."""
    x = as_tensor(x)
    xd = x.data
    r = 1.0 / np.sqrt(np.mean(xd * xd, axis=axis, keepdims=True) + eps)
    out = xd * r

    def vjp(g):
        return (r * g - out * (r * np.mean(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), vjp, "rms_normalize")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """numpy ``matmul`` semantics; leading (batch) dimensions broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ValueError(f"matmul: scalar operands not allowed, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    if a.ndim > 2 and b.ndim == 2:
        lead = a.shape[:-1]
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(*lead, b.shape[1])

        def vjp_flat(g):
            g2 = g.reshape(-1, b.shape[1])
            return (g2 @ b.data.T).reshape(a.shape), a.data.reshape(-1, a.shape[-1]).T @ g2

        return _make(out, (a, b), vjp_flat, "matmul")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        ad = a.data if a.ndim > 1 else a.data[None, :]
        bd = b.data if b.ndim > 1 else b.data[:, None]
        gg = g
        if a.ndim == 1:
            gg = np.expand_dims(gg, -2)
        if b.ndim == 1:
            gg = np.expand_dims(gg, -1)
        ga = np.matmul(gg, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), gg)
        if a.ndim == 1:
            ga = ga[..., 0, :]
        if b.ndim == 1:
            gb = gb[..., :, 0]
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp, "matmul")


def conv1d(x, w, stride: int = 1, padding: int | tuple = 0, groups: int = 1) -> Tensor:
    """Grouped 1-D cross-correlation.

    ``x`` is ``[B, C_in, T]`` and ``w`` is ``[C_out, C_in // groups, K]``.
    ``padding`` is either symmetric or a ``(left, right)`` pair of zeros.
    Dense groups run one 2-D matmul per kernel tap on shifted views of the
    input; depthwise kernels use a broadcast multiply per tap. At stride 1 the
    input gradient is a transposed convolution done as a single matmul
    against windows of the output gradient.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ValueError(f"conv1d: expected [B, C, T] input and [C_out, C_in/g, K] weight, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ValueError("conv1d: stride must be positive")
    B, cin, T = x.shape
    cout, cin_g, K = w.shape
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise ValueError(f"conv1d: input {x.shape} incompatible with weight {w.shape} at groups={groups}")
    pl, pr = (padding, padding) if np.isscalar(padding) else padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if (pl or pr) else x.data
    Tp = T + pl + pr
    if Tp < K:
        raise ValueError(f"conv1d: padded length {Tp} shorter than kernel {K}")
    t_out = (Tp - K) // stride + 1
    span = stride * (t_out - 1) + 1
    cout_g = cout // groups
    depthwise = cin_g == 1 and cout_g == 1
    wd = w.data

    if depthwise:
        out = np.zeros((B, cout, t_out))
        for k in range(K):
            out += wd[None, :, 0, k, None] * xp[:, :, k : k + span : stride]
    else:
        xg = xp.reshape(B, groups, cin_g, Tp)
        # [groups, K, cout_g, cin_g], contiguous per tap
        taps = np.ascontiguousarray(wd.reshape(groups, cout_g, cin_g, K).transpose(0, 3, 1, 2))
        out = np.zeros((B, groups, cout_g, t_out))
        for b in range(B):
            for j in range(groups):
                acc = out[b, j]
                for k in range(K):
                    acc += taps[j, k] @ xg[b, j, :, k : k + span : stride]
        out = out.reshape(B, cout, t_out)

    def vjp(g):
        need_x = x.requires_grad
        if depthwise:
            gw = np.empty_like(wd)
            gxp = np.zeros((B, cin, Tp)) if need_x else None
            for k in range(K):
                xs = xp[:, :, k : k + span : stride]
                gw[:, 0, k] = np.einsum("bct,bct->c", g, xs)
                if need_x:
                    gxp[:, :, k : k + span : stride] += wd[None, :, 0, k, None] * g
            return (gxp[:, :, pl : pl + T] if need_x else None), gw
        gg = g.reshape(B, groups, cout_g, t_out)
        gtaps = np.zeros((groups, K, cout_g, cin_g))
        for b in range(B):
            for j in range(groups):
                for k in range(K):
                    gtaps[j, k] += gg[b, j] @ xg[b, j, :, k : k + span : stride].T
        gw = gtaps.transpose(0, 2, 3, 1).reshape(cout, cin_g, K)
        if not need_x:
            return None, gw
        wbig = wd.reshape(groups, cout_g, cin_g, K)
        if stride == 1:
            gpad = np.pad(gg, ((0, 0), (0, 0), (0, 0), (K - 1, K - 1)))
            # window k starts at K-1-k: [B, groups, cout_g, K, Tp]
            cols = np.lib.stride_tricks.sliding_window_view(gpad, Tp, axis=-1)[..., ::-1, :]
            cols = cols.reshape(B, groups, cout_g * K, Tp)
            wflat = wbig.transpose(0, 2, 1, 3).reshape(groups, cin_g, cout_g * K)
            gxp = np.matmul(wflat[None], cols).reshape(B, cin, Tp)
        else:
            gxg = np.zeros((B, groups, cin_g, Tp))
            for k in range(K):
                gxg[..., k : k + span : stride] += np.matmul(np.swapaxes(wbig[..., k], -1, -2)[None], gg)
            gxp = gxg.reshape(B, cin, Tp)
        return gxp[:, :, pl : pl + T], gw

    return _make(out, (x, w), vjp, "conv1d")


def depthwise_conv1d(x, w, padding: int | tuple = 0) -> Tensor:
    """Channel-last depthwise cross-correlation: ``x`` is ``[B, T, C]``, ``w`` is ``[C, K]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 2 or w.shape[0] != x.shape[2]:
        raise ValueError(f"depthwise_conv1d: expected [B, T, C] input and [C, K] weight, got {x.shape} and {w.shape}")
    pl, pr = (padding, padding) if np.isscalar(padding) else padding
    if x.shape[1] + pl + pr < w.shape[1]:
        raise ValueError(f"depthwise_conv1d: padded length shorter than kernel {w.shape[1]}")
    out = _kernels.depthwise_conv(x.data, w.data, pl, pr)

    def vjp(g):
        gx, gw = _kernels.depthwise_conv_grad(x.data, w.data, g, pl)
        return gx, gw

    return _make(out, (x, w), vjp, "depthwise_conv1d")


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims) if axes else a.data.copy()

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(out, (a,), vjp, "mean")


def max_(a, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum; the gradient is split evenly between tied maxima."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    m = a.data.max(axis=axes, keepdims=True)
    out = m if keepdims else np.squeeze(m, axis=axes)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        mask = (a.data == m).astype(np.float64)
        mask /= mask.sum(axis=axes, keepdims=True)
        return (mask * g,)

    return _make(out, (a,), vjp, "max")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), vjp, "softmax")


# ---------------------------------------------------------------- shape


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty tensor list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(tensors), vjp, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return concat([expand_dims(t, axis) for t in tensors], axis=axis)


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    shape = list(a.shape)
    ax = axis if axis >= 0 else a.ndim + 1 + axis
    shape.insert(ax, 1)
    return reshape(a, tuple(shape))


def getitem(a, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)
    out = a.data[index]

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in (index if isinstance(index, tuple) else (index,)))

    def vjp(g):
        ga = np.zeros(a.shape)
        if basic:
            ga[index] += g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return _make(np.array(out, dtype=np.float64), (a,), vjp, "getitem")


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),), "flip")


def shift(a, axis: int) -> Tensor:
    """Move every step one index forward along ``axis``: prepend zeros, drop the last step."""
    a = as_tensor(a)
    axis = axis % a.ndim
    out = np.zeros_like(a.data)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    src[axis] = slice(0, -1)
    dst[axis] = slice(1, None)
    out[tuple(dst)] = a.data[tuple(src)]

    def vjp(g):
        ga = np.zeros_like(g)
        ga[tuple(src)] = g[tuple(dst)]
        return (ga,)

    return _make(out, (a,), vjp, "shift")


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` as for ``numpy.pad``."""
    a = as_tensor(a)
    widths = [tuple(w) for w in widths]
    out = np.pad(a.data, widths)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _make(out, (a,), lambda g: (g[index].copy(),), "pad")


# ---------------------------------------------------------------- recurrences


def linear_scan(a, b, axis: int = -2) -> Tensor:
    """First-order linear recurrence ``h[t] = a[t] * h[t-1] + b[t]`` with ``h[-1] = 0``.

    Runs along ``axis`` using the selected kernel backend. The reverse pass is
    the same scan run backwards: ``d[t] = gh[t] + a[t+1] * d[t+1]``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"linear_scan: gate shape {a.shape} differs from input shape {b.shape}")
    axis = axis % a.ndim

    def to3(x):
        x = np.moveaxis(x, axis, -2) if a.ndim > 1 else x[:, None]
        lead = x.shape[:-2]
        return np.ascontiguousarray(x.reshape((-1,) + x.shape[-2:])), lead

    def from3(x, lead):
        x = x.reshape(lead + x.shape[-2:])
        return np.moveaxis(x, -2, axis) if a.ndim > 1 else x[:, 0]

    a3, lead = to3(a.data)
    b3, _ = to3(b.data)
    h3 = _kernels.linear_scan(a3, b3)
    out = from3(h3, lead)

    def vjp(g):
        g3, _ = to3(g)
        a_next = np.zeros_like(a3)
        a_next[:, :-1] = a3[:, 1:]
        d3 = _kernels.linear_scan(a_next, g3, reverse=True)
        h_prev = np.zeros_like(h3)
        h_prev[:, 1:] = h3[:, :-1]
        return from3(d3 * h_prev, lead), from3(d3, lead)

    return _make(out, (a, b), vjp, "linear_scan")


def sequential_scan(a, b) -> np.ndarray:
    """Plain-loop reference for :func:`linear_scan` on ``[..., T, D]`` arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    h = np.empty_like(b)
    prev = np.zeros(b.shape[:-2] + b.shape[-1:])
    for t in range(b.shape[-2]):
        prev = a[..., t, :] * prev + b[..., t, :]
        h[..., t, :] = prev
    return h


# ---------------------------------------------------------------- tape


class Tape:
    """Operations reachable from a scalar, in an order safe to replay backwards.

    Nodes are recorded in post-order of a deterministic depth-first walk, so in
    reversed order every node is visited after all of its consumers.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self) -> dict[int, np.ndarray]:
        grads: dict[int, np.ndarray] = {id(self.root): np.ones(self.root.shape)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=np.float64)
        return grads


def backward(loss: Tensor, params=None) -> dict:
    """Differentiate a scalar ``loss``.

    Returns a mapping from each leaf (or each tensor in ``params``) to its
    gradient array; parameters the loss does not depend on get zeros. Leaf
    gradients are also stored on ``.grad``.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape(loss)
    grads = tape.replay()
    if params is None:
        params = [n for n in tape.nodes if n.is_leaf]
    result = {}
    for p in params:
        g = grads.get(id(p))
        g = np.zeros(p.shape) if g is None else g.reshape(p.shape)
        p.grad = g
        result[p] = g
    return result
