# cython: language_level=3
"""Compiled hot loops: linear recurrences and the incomplete gamma function."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, sin, M_PI, NAN, INFINITY

cnp.import_array()

cdef double[9] LANCZOS = [
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
cdef double HALF_LOG_2PI = 0.91893853320467274178
cdef double EPS = 1e-16
cdef double FPMIN = 1e-300
cdef int MAXIT = 200000


cdef double _ln_gamma(double x) noexcept nogil:
    cdef double a, t
    cdef int i
    if x <= 0.0:
        return NAN
    if x < 0.5:
        return log(M_PI / fabs(sin(M_PI * x))) - _ln_gamma(1.0 - x)
    x -= 1.0
    a = LANCZOS[0]
    t = x + 7.5
    for i in range(1, 9):
        a += LANCZOS[i] / (x + i)
    return HALF_LOG_2PI + (x + 0.5) * log(t) - t + log(a)


cdef double _gamma_p(double a, double x) noexcept nogil:
    cdef double ap, s, d, b, c, h, an, dl, lead
    cdef int n
    if a <= 0.0 or x < 0.0 or x != x:
        return NAN
    if x == 0.0:
        return 0.0
    if x == INFINITY:
        return 1.0
    lead = -x + a * log(x) - _ln_gamma(a)
    if x < a + 1.0:
        ap = a
        d = 1.0 / a
        s = d
        for n in range(MAXIT):
            ap += 1.0
            d *= x / ap
            s += d
            if fabs(d) < fabs(s) * EPS:
                break
        return s * exp(lead)
    b = x + 1.0 - a
    c = 1.0 / FPMIN
    d = 1.0 / b
    h = d
    for n in range(1, MAXIT):
        an = -n * (n - a)
        b += 2.0
        d = an * d + b
        if fabs(d) < FPMIN:
            d = FPMIN
        c = b + an / c
        if fabs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        dl = d * c
        h *= dl
        if fabs(dl - 1.0) < EPS:
            break
    return 1.0 - exp(lead) * h


def ln_gamma(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xs = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(xs)
    cdef Py_ssize_t i, n = xs.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _ln_gamma(xs[i])
    return out.reshape(np.shape(x))


def gamma_p(a, x):
    av, xv = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    shape = av.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] aa = np.ascontiguousarray(av).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xx = np.ascontiguousarray(xv).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(aa)
    cdef Py_ssize_t i, n = aa.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _gamma_p(aa[i], xx[i])
    return out.reshape(shape)


def linear_scan(a, b, bint reverse=False):
    """h[t] = a[t] * h[t -/+ 1] + b[t] along axis 1 of [N, T, D] arrays, zero initial state."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] bv = np.ascontiguousarray(b, dtype=np.float64)
    if av.shape[0] != bv.shape[0] or av.shape[1] != bv.shape[1] or av.shape[2] != bv.shape[2]:
        raise ValueError(f"scan operands differ in shape: {a.shape} vs {b.shape}")
    cdef cnp.ndarray[cnp.float64_t, ndim=3] h = np.empty_like(bv)
    cdef double[:, :, ::1] A = av
    cdef double[:, :, ::1] B = bv
    cdef double[:, :, ::1] H = h
    cdef Py_ssize_t n, t, d, s
    cdef Py_ssize_t N = av.shape[0], T = av.shape[1], D = av.shape[2]
    if T == 0:
        return h
    with nogil:
        for n in range(N):
            if not reverse:
                for d in range(D):
                    H[n, 0, d] = B[n, 0, d]
                for t in range(1, T):
                    for d in range(D):
                        H[n, t, d] = A[n, t, d] * H[n, t - 1, d] + B[n, t, d]
            else:
                for d in range(D):
                    H[n, T - 1, d] = B[n, T - 1, d]
                for s in range(1, T):
                    t = T - 1 - s
                    for d in range(D):
                        H[n, t, d] = A[n, t, d] * H[n, t + 1, d] + B[n, t, d]
    return h


def depthwise_conv(x, w, Py_ssize_t left, Py_ssize_t right):
    """Channel-last depthwise correlation: x [B, T, C], w [C, K] -> [B, T + left + right - K + 1, C]."""
    cdef double[:, :, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], C = X.shape[2], K = W.shape[1]
    if W.shape[0] != C:
        raise ValueError(f"weight has {W.shape[0]} channels, input has {C}")
    cdef Py_ssize_t t_out = T + left + right - K + 1
    if t_out < 1:
        raise ValueError("padded length shorter than kernel")
    out = np.zeros((B, t_out, C))
    cdef double[:, :, ::1] O = out
    cdef Py_ssize_t b, t, k, c, s
    with nogil:
        for b in range(B):
            for t in range(t_out):
                for k in range(K):
                    s = t + k - left
                    if s < 0 or s >= T:
                        continue
                    for c in range(C):
                        O[b, t, c] += W[c, k] * X[b, s, c]
    return out


def depthwise_conv_grad(x, w, g, Py_ssize_t left):
    """Input and weight gradients of :func:`depthwise_conv` for output gradient ``g``."""
    cdef double[:, :, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, :, ::1] G = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t B = X.shape[0], T = X.shape[1], C = X.shape[2], K = W.shape[1]
    cdef Py_ssize_t t_out = G.shape[1]
    gx = np.zeros((B, T, C))
    gwt = np.zeros((K, C))
    cdef double[:, :, ::1] GX = gx
    cdef double[:, ::1] GW = gwt
    cdef Py_ssize_t b, t, k, c, s
    cdef double gv
    with nogil:
        for b in range(B):
            for t in range(t_out):
                for k in range(K):
                    s = t + k - left
                    if s < 0 or s >= T:
                        continue
                    for c in range(C):
                        gv = G[b, t, c]
                        GX[b, s, c] += W[c, k] * gv
                        GW[k, c] += X[b, s, c] * gv
    return gx, np.ascontiguousarray(gwt.T)
