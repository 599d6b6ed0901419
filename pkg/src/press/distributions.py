"""Special functions, gamma-family laws and the predictive SNRi distribution.

All randomness goes through :func:`make_rng`, a Philox (counter-based) bit
generator, so every Monte-Carlo result is reproducible from one integer seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

DB_PER_NEPER = 10.0 / math.log(10.0)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by ``seed``; extra integers select independent sub-streams."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------- special functions


def ln_gamma(x):
    """Natural log of the gamma function for ``x > 0`` (Lanczos, g=7)."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise ValueError("ln_gamma requires x > 0")
    out = _kernels.ln_gamma(arr)
    return float(out) if np.ndim(x) == 0 else out


def digamma(x):
    """Logarithmic derivative of the gamma function, for positive arguments."""
    x = np.array(x, dtype=np.float64, copy=True)
    acc = np.zeros_like(x)
    small = x < 10.0
    while np.any(small):
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < 10.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (1 / 12 - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 * (1 / 240 - inv2 * (1 / 132)))))
    return acc + np.log(x) - 0.5 * inv - series


def gamma_p(a, x):
    """Regularized lower incomplete gamma P(a, x).

    Series expansion below ``x < a + 1``, Lentz continued fraction above.
    """
    return _kernels.gamma_p(a, x)


# ---------------------------------------------------------------- gamma laws


@dataclass(frozen=True)
class GammaDist:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(f"gamma parameters must be positive, got shape={self.shape}, scale={self.scale}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    @property
    def variance(self) -> float:
        return self.shape * self.scale**2

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = gamma_p(self.shape, np.maximum(x, 0.0) / self.scale)
        return float(out) if out.ndim == 0 else out

    def ppf(self, q: float, tol: float = 1e-12) -> float:
        """Inverse CDF by bisection."""
        if not 0.0 <= q <= 1.0:
            raise ValueError("quantile must lie in [0, 1]")
        if q == 0.0:
            return 0.0
        if q == 1.0:
            return math.inf
        lo, hi = 0.0, max(self.mean, self.scale)
        while self.cdf(hi) < q:
            lo, hi = hi, 2.0 * hi
        for _ in range(4000):
            if hi - lo <= tol * hi:
                break
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < q:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, self.scale, size=size)

    def moment_scaled(self, m: float, v: float) -> "GammaDist":
        """The gamma law whose mean is ``m`` times and variance ``v`` times this one's."""
        if not (m > 0 and v > 0):
            raise ValueError("moment factors must be positive")
        return GammaDist(self.shape * m * m / v, self.scale * v / m)


def gamma_cdf(x, dist: GammaDist):
    if np.any(np.asarray(x) < 0):
        raise ValueError("gamma_cdf is defined for x >= 0")
    return dist.cdf(x)


@dataclass(frozen=True)
class InvGammaParams:
    """Shape ``alpha`` and scale ``beta`` of the inverse-gamma error-variance prior."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"inverse-gamma parameters must be positive, got {self.alpha}, {self.beta}")


@dataclass(frozen=True)
class SnriDistribution:
    """Large-T law of the linear SNR improvement: ``1 + z`` with ``z`` gamma.

    ``z`` is ``None`` for the degenerate case ``energy_gap == 0``, where the
    estimate equals the mixture and the improvement is exactly 1 (0 dB).
    """

    params: InvGammaParams
    energy_gap: float
    length: int
    z: GammaDist | None
    offset: float = field(default=1.0)

    @property
    def degenerate(self) -> bool:
        return self.z is None

    @property
    def mean(self) -> float:
        return self.offset + (0.0 if self.z is None else self.z.mean)

    def cdf(self, snri_linear):
        """P(SNRi <= value) for linear-scale values."""
        v = np.asarray(snri_linear, dtype=np.float64) - self.offset
        if self.z is None:
            out = (v >= 0).astype(np.float64)
        else:
            out = np.where(v <= 0, 0.0, gamma_p(self.z.shape, np.maximum(v, 0.0) / self.z.scale))
        return float(out) if out.ndim == 0 else out

    def cdf_db(self, snri_db):
        return self.cdf(10.0 ** (np.asarray(snri_db, dtype=np.float64) / 10.0))

    def prob_at_least_db(self, target_db: float) -> float:
        """P(SNRi >= target) with the target in dB."""
        if math.isinf(target_db):
            return 0.0 if target_db > 0 else 1.0
        threshold = 10.0 ** (target_db / 10.0)
        if self.z is None:
            return 1.0 if threshold <= self.offset else 0.0
        return 1.0 - float(self.cdf(threshold))

    def recalibrated(self, m: float, v: float) -> "SnriDistribution":
        """Moment-matched copy with mean scaled by ``m`` and variance by ``v``."""
        if self.z is None or (m == 1.0 and v == 1.0):
            return self
        z = self.z.moment_scaled(m, v)
        params = InvGammaParams(self.params.alpha * m * m / v, self.params.beta * m / v)
        return SnriDistribution(params, self.energy_gap, self.length, z, self.offset)

    def sample(self, rng: np.random.Generator, size=None):
        if self.z is None:
            return np.full(size, self.offset) if size is not None else self.offset
        return self.offset + self.z.sample(rng, size)


def snri_predictive(params: InvGammaParams, energy_gap: float, T: int) -> SnriDistribution:
    """Predictive SNRi from the exit's variance prior and ``||x_hat - x_mix||^2``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if energy_gap < 0:
        raise ValueError("energy_gap must be non-negative")
    if energy_gap == 0:
        return SnriDistribution(params, 0.0, int(T), None)
    z = GammaDist(params.alpha, energy_gap / (params.beta * T))
    return SnriDistribution(params, float(energy_gap), int(T), z)


def snri_db_expectation(dist: SnriDistribution) -> float:
    """Second-order Taylor estimate of E[10 log10(SNRi)] in dB."""
    if dist.z is None:
        return 0.0
    m, v = dist.z.mean, dist.z.variance
    return DB_PER_NEPER * (math.log1p(m) - 0.5 * v / (1.0 + m) ** 2)


# ---------------------------------------------------------------- chi-square ratio


def sample_noncentral_chisq(T: int, noncentrality: float, rng: np.random.Generator, size=None):
    """Draw ``||z + mu||^2`` with ``z ~ N(0, I_T)`` and ``||mu||^2 = noncentrality``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if noncentrality < 0:
        raise ValueError("noncentrality must be non-negative")
    n = 1 if size is None else int(np.prod(size))
    mu = np.zeros(T)
    mu[0] = math.sqrt(noncentrality)
    out = np.empty(n)
    block = max(1, 2_000_000 // T)
    for start in range(0, n, block):
        stop = min(n, start + block)
        z = rng.standard_normal((stop - start, T))
        out[start:stop] = np.square(z + mu).sum(axis=1)
    return float(out[0]) if size is None else out.reshape(size)


def ks_statistic(samples, cdf, cdf_left=None) -> float:
    """One-sample Kolmogorov-Smirnov distance; ties and atoms are handled exactly."""
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = xs.size
    if n == 0:
        raise ValueError("no samples")
    uniq, first = np.unique(xs, return_index=True)
    last = np.append(first[1:], n)
    right = cdf(uniq)
    left = right if cdf_left is None else cdf_left(uniq)
    return float(max(np.max(np.abs(last / n - right)), np.max(np.abs(first / n - left))))


def ratio_samples(alpha, beta, c, T, n_samples, rng, method: str = "reduced") -> np.ndarray:
    """Draws of ``X_T / Y_T`` with ``X_T = ||z + sqrt(T lam) e||^2`` and ``Y_T = ||z||^2``.

    Both chi-square variables share the normal vector ``z`` and
    ``lam ~ Gam(alpha, c / beta)``. ``method="full"`` builds each length-T
    vector explicitly. ``"reduced"`` draws the same joint law in O(1) per
    sample: by rotational invariance only the component of ``z`` along the
    mean direction differs between X and Y, and the remaining T-1 squared
    components form one shared chi-square(T-1) variable.
    """
    lam = rng.gamma(alpha, c / beta, size=n_samples) if c > 0 else np.zeros(n_samples)
    if method == "full":
        out = np.empty(n_samples)
        block = max(1, 2_000_000 // T)
        for start in range(0, n_samples, block):
            stop = min(n_samples, start + block)
            z = rng.standard_normal((stop - start, T))
            y = np.square(z).sum(axis=1)
            x = y + 2.0 * z[:, 0] * np.sqrt(T * lam[start:stop]) + T * lam[start:stop]
            out[start:stop] = x / y
        return out
    if method != "reduced":
        raise ValueError(f"unknown method {method!r}")
    z1 = rng.standard_normal(n_samples)
    rest = rng.chisquare(T - 1, size=n_samples) if T > 1 else np.zeros(n_samples)
    shifted = z1 + np.sqrt(T * lam)
    return (shifted * shifted + rest) / (z1 * z1 + rest)


def ratio_oracle(alpha, beta, c, T, n_samples, rng, method: str = "reduced") -> float:
    """KS distance between simulated SNRi ratios and their ``1 + lam`` limit."""
    if n_samples < 10_000:
        raise ValueError("ratio_oracle needs at least 1e4 samples")
    r = ratio_samples(alpha, beta, c, T, n_samples, rng, method)
    if c == 0:
        return ks_statistic(r, lambda v: (v >= 1.0).astype(float), lambda v: (v > 1.0).astype(float))
    limit = GammaDist(alpha, c / beta)
    return ks_statistic(r, lambda v: limit.cdf(v - 1.0))


def ratio_sweep(T_values, alpha=60.0, beta=0.1, c=0.1, n_samples=1_000_000, seed=0) -> list[dict]:
    """KS statistic per sequence length; each T uses its own derived stream."""
    rows = []
    for i, T in enumerate(T_values):
        ks = ratio_oracle(alpha, beta, c, int(T), n_samples, make_rng(seed, i))
        rows.append({"T": int(T), "ks_statistic": ks, "n_samples": int(n_samples), "seed": int(seed)})
    return rows
