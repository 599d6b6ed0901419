"""Pure numpy implementations of the compiled kernels.

The recurrence uses a log-depth (Hillis-Steele) associative scan with the
combine rule ``(a2, b2) o (a1, b1) = (a2 * a1, a2 * b1 + b2)``.
"""

import numpy as np

_LANCZOS = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_HALF_LOG_2PI = 0.91893853320467274178
_EPS = 1e-16
_FPMIN = 1e-300
_MAXIT = 200000


def _ln_gamma_ge_half(x):
    x = x - 1.0
    acc = np.full_like(x, _LANCZOS[0])
    for i in range(1, 9):
        acc = acc + _LANCZOS[i] / (x + i)
    t = x + 7.5
    return _HALF_LOG_2PI + (x + 0.5) * np.log(t) - t + np.log(acc)


def ln_gamma(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.full(x.shape, np.nan)
    small = (x > 0) & (x < 0.5)
    big = x >= 0.5
    out[big] = _ln_gamma_ge_half(x[big])
    xs = x[small]
    out[small] = np.log(np.pi / np.abs(np.sin(np.pi * xs))) - _ln_gamma_ge_half(1.0 - xs)
    return out


def _series(a, x):
    ap = a.copy()
    d = 1.0 / a
    s = d.copy()
    active = np.ones(a.shape, dtype=bool)
    for _ in range(_MAXIT):
        if not active.any():
            break
        ap[active] += 1.0
        d[active] *= x[active] / ap[active]
        s[active] += d[active]
        active &= ~(np.abs(d) < np.abs(s) * _EPS)
    return s


def _continued_fraction(a, x):
    b = x + 1.0 - a
    c = np.full(a.shape, 1.0 / _FPMIN)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(a.shape, dtype=bool)
    for n in range(1, _MAXIT):
        if not active.any():
            break
        ai, bi = a[active], b[active] + 2.0
        an = -n * (n - ai)
        b[active] = bi
        di = an * d[active] + bi
        di = np.where(np.abs(di) < _FPMIN, _FPMIN, di)
        ci = bi + an / c[active]
        ci = np.where(np.abs(ci) < _FPMIN, _FPMIN, ci)
        di = 1.0 / di
        dl = di * ci
        d[active] = di
        c[active] = ci
        h[active] *= dl
        done = np.abs(dl - 1.0) < _EPS
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return h


def gamma_p(a, x):
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    a = a.astype(np.float64, copy=True)
    x = x.astype(np.float64, copy=True)
    out = np.full(a.shape, np.nan)
    valid = (a > 0) & (x >= 0)
    out[valid & (x == 0)] = 0.0
    out[valid & np.isposinf(x)] = 1.0
    work = valid & (x > 0) & np.isfinite(x)
    lo = work & (x < a + 1.0)
    hi = work & ~(x < a + 1.0)
    if lo.any():
        al, xl = a[lo], x[lo]
        out[lo] = _series(al, xl) * np.exp(-xl + al * np.log(xl) - ln_gamma(al))
    if hi.any():
        ah, xh = a[hi], x[hi]
        out[hi] = 1.0 - np.exp(-xh + ah * np.log(xh) - ln_gamma(ah)) * _continued_fraction(ah, xh)
    return out


def linear_scan(a, b, reverse=False):
    """h[t] = a[t] * h[t -/+ 1] + b[t] along axis 1 of [N, T, D] arrays, zero initial state."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3:
        raise ValueError(f"scan operands differ in shape: {a.shape} vs {b.shape}")
    if reverse:
        return linear_scan(a[:, ::-1], b[:, ::-1])[:, ::-1].copy()
    a = a.copy()
    h = b.copy()
    T = a.shape[1]
    offset = 1
    while offset < T:
        h_prev = h[:, :-offset]
        a_prev = a[:, :-offset]
        h[:, offset:] = a[:, offset:] * h_prev + h[:, offset:]
        a[:, offset:] = a[:, offset:] * a_prev
        offset *= 2
    return h


def depthwise_conv(x, w, left, right):
    """Channel-last depthwise correlation: x [B, T, C], w [C, K] -> [B, T + left + right - K + 1, C]."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] != x.shape[2]:
        raise ValueError(f"weight has {w.shape[0]} channels, input has {x.shape[2]}")
    K = w.shape[1]
    t_out = x.shape[1] + left + right - K + 1
    if t_out < 1:
        raise ValueError("padded length shorter than kernel")
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    out = np.zeros((x.shape[0], t_out, x.shape[2]))
    for k in range(K):
        out += w[:, k] * xp[:, k : k + t_out]
    return out


def depthwise_conv_grad(x, w, g, left):
    """Input and weight gradients of :func:`depthwise_conv` for output gradient ``g``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    B, T, C = x.shape
    K = w.shape[1]
    t_out = g.shape[1]
    right = t_out + K - 1 - T - left
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    gxp = np.zeros_like(xp)
    gw = np.empty((C, K))
    gflat = g.reshape(-1, C)
    for k in range(K):
        gw[:, k] = np.einsum("nc,nc->c", gflat, xp[:, k : k + t_out].reshape(-1, C))
        gxp[:, k : k + t_out] += w[:, k] * g
    return gxp[:, left : left + T], gw
