"""Training objectives built on the Student-t marginal likelihood.

Scores are arranged as a ``[targets, estimates]`` matrix so the mixture
objective, the joint early-exit factorization and permutation search all share
one code path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .distributions import InvGammaParams
from .numerics import Tensor, as_tensor

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SourceEstimate:
    signal: Tensor
    alpha: Tensor
    beta: Tensor

    @property
    def params(self) -> InvGammaParams:
        return InvGammaParams(self.alpha.item(), self.beta.item())


@dataclass
class ExitPrediction:
    """One exit: ``signals`` is ``[S, T]``, ``alpha`` and ``beta`` are ``[S]``."""

    exit_index: int
    signals: Tensor
    alpha: Tensor
    beta: Tensor

    def __post_init__(self):
        S = self.signals.shape[0]
        if S < 1 or self.alpha.shape != (S,) or self.beta.shape != (S,):
            raise ValueError(
                f"inconsistent exit prediction: signals {self.signals.shape}, "
                f"alpha {self.alpha.shape}, beta {self.beta.shape}"
            )

    @property
    def n_sources(self) -> int:
        return self.signals.shape[0]

    @property
    def length(self) -> int:
        return self.signals.shape[1]

    @property
    def estimates(self) -> list[SourceEstimate]:
        return [SourceEstimate(self.signals[i], self.alpha[i], self.beta[i]) for i in range(self.n_sources)]

    def params(self, i: int) -> InvGammaParams:
        return InvGammaParams(float(self.alpha.data[i]), float(self.beta.data[i]))


def _targets(targets) -> Tensor:
    if isinstance(targets, Tensor):
        t = targets
    elif isinstance(targets, np.ndarray):
        t = Tensor(targets)
    else:
        if len(targets) == 0:
            raise ValueError("no targets given")
        t = nx.stack([as_tensor(x) for x in targets])
    if t.ndim == 1:
        t = t.reshape(1, -1)
    if t.shape[0] == 0:
        raise ValueError("no targets given")
    return t


# ---------------------------------------------------------------- Student-t


def studentt_loglik(x, xhat, alpha, beta) -> Tensor:
    """Log density of ``x`` under St(xhat, 2 alpha, beta / alpha I).

    Broadcasts over leading axes; the last axis is time. The full normalizing
    constant is kept so values are comparable across lengths.
    """
    x, xhat = as_tensor(x), as_tensor(xhat)
    if x.shape[-1] != xhat.shape[-1]:
        raise ValueError(f"signal lengths differ: {x.shape[-1]} vs {xhat.shape[-1]}")
    alpha, beta = as_tensor(alpha), as_tensor(beta)
    T = x.shape[-1]
    half_t = 0.5 * T
    resid = x - xhat
    sq = (resid * resid).sum(axis=-1)
    return (
        nx.lgamma(alpha + half_t)
        - nx.lgamma(alpha)
        - half_t * (nx.log(beta) + LOG_2PI)
        - (alpha + half_t) * nx.log(1.0 + sq / (2.0 * beta))
    )


def si_studentt_loglik(x, xhat, alpha, beta) -> Tensor:
    """Student-t log-likelihood after optimally rescaling the estimate.

    The gain ``xhat.x / xhat.xhat`` is differentiated through.
    """
    x, xhat = as_tensor(x), as_tensor(xhat)
    energy = (xhat * xhat).sum(axis=-1, keepdims=True)
    if np.any(energy.data <= 0):
        raise ValueError("scale-invariant likelihood needs a non-zero estimate")
    gain = (xhat * x).sum(axis=-1, keepdims=True) / energy
    return studentt_loglik(x, gain * xhat, alpha, beta)


def optimal_gain(x, xhat) -> float:
    x, xhat = np.asarray(x, dtype=float), np.asarray(xhat, dtype=float)
    return float(xhat @ x / (xhat @ xhat))


# ---------------------------------------------------------------- tempered LogSumExp


def logsumexp_tau(v, tau: float = 1.0, axis: int = -1) -> Tensor:
    """``tau * log(sum(exp(v / tau)))`` along ``axis``, shifted by the maximum."""
    v = as_tensor(v)
    if tau <= 0:
        raise ValueError("tau must be positive")
    m = Tensor(v.data.max(axis=axis, keepdims=True))
    out = tau * nx.log(nx.exp((v - m) / tau).sum(axis=axis, keepdims=True)) + m
    return out.reshape(tuple(n for i, n in enumerate(out.shape) if i != axis % v.ndim))


def temperature_schedule(step: int, total_steps: int, T: int) -> float:
    """Geometric anneal from ``T`` to 1 over the first 0.5% of training."""
    s0 = math.ceil(0.005 * total_steps)
    if step >= s0:
        return 1.0
    return float(T) ** (1.0 - step / s0)


# ---------------------------------------------------------------- score matrices


def score_matrix(targets, prediction: ExitPrediction, scorer: str = "studentt") -> Tensor:
    """``[S_targets, S_estimates]`` pairwise scores (higher is better)."""
    x = _targets(targets)
    if x.shape[1] != prediction.length:
        raise ValueError(f"target length {x.shape[1]} differs from estimate length {prediction.length}")
    xs = x.reshape(x.shape[0], 1, x.shape[1])
    est = prediction.signals.reshape(1, *prediction.signals.shape)
    if scorer == "studentt":
        return studentt_loglik(xs, est, prediction.alpha.reshape(1, -1), prediction.beta.reshape(1, -1))
    if scorer == "si_studentt":
        return si_studentt_loglik(xs, est, prediction.alpha.reshape(1, -1), prediction.beta.reshape(1, -1))
    if scorer == "sisnr":
        return si_snr(xs, est)
    raise ValueError(f"unknown scorer {scorer!r}")


def joint_score_matrix(targets, predictions, scorer: str = "studentt") -> Tensor:
    """Scores summed over exits, so every exit of a source shares one assignment."""
    if not predictions:
        raise ValueError("no exit predictions given")
    S = predictions[0].n_sources
    if any(p.n_sources != S for p in predictions):
        raise ValueError("exits disagree on the number of sources")
    total = score_matrix(targets, predictions[0], scorer)
    for p in predictions[1:]:
        total = total + score_matrix(targets, p, scorer)
    return total


def mixture_from_scores(scores: Tensor, tau: float = 1.0) -> Tensor:
    n_est = scores.shape[1]
    if n_est < scores.shape[0]:
        raise ValueError(f"{n_est} estimates cannot cover {scores.shape[0]} targets")
    per_target = logsumexp_tau(scores - math.log(n_est), tau, axis=1)
    return per_target.sum()


def mixture_loglik(targets, prediction: ExitPrediction, tau: float = 1.0) -> Tensor:
    """Sum over targets of log(mean_i St(x_s | xhat_i)), with a tempered LogSumExp.

    Extra estimates beyond the number of targets are allowed.
    """
    return mixture_from_scores(score_matrix(targets, prediction, "studentt"), tau)


def joint_exit_loglik(targets, predictions, tau: float = 1.0, kind: str = "mixture", scorer: str = "studentt"):
    """Joint likelihood over exits with one source assignment shared by all exits.

    ``kind="mixture"`` returns a Tensor; ``kind="upit"`` returns ``(Tensor, permutation)``.
    """
    scores = joint_score_matrix(targets, predictions, scorer)
    if kind == "mixture":
        return mixture_from_scores(scores, tau)
    if kind == "upit":
        return upit_from_scores(scores)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------- permutation search


def best_permutation(scores: np.ndarray, method: str = "brute") -> tuple:
    """Assignment target ``s -> estimate perm[s]`` maximizing the summed score."""
    scores = np.asarray(scores, dtype=float)
    n_t, n_e = scores.shape
    if method == "hungarian":
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(-scores)
        return tuple(int(c) for _, c in sorted(zip(rows, cols)))
    if n_e > 8:
        raise ValueError("brute-force permutation search is limited to 8 sources")
    best, best_perm = -math.inf, None
    for perm in itertools.permutations(range(n_e), n_t):
        total = sum(scores[s, perm[s]] for s in range(n_t))
        if total > best:
            best, best_perm = total, perm
    return tuple(best_perm)


def upit_from_scores(scores: Tensor, method: str = "brute"):
    perm = best_permutation(scores.data, method)
    rows = np.arange(len(perm))
    return scores[rows, np.array(perm)].sum(), perm


def upit_loglik(targets, prediction: ExitPrediction, scorer: str = "studentt", method: str = "brute"):
    """Best-permutation total score and the permutation itself."""
    return upit_from_scores(score_matrix(targets, prediction, scorer), method)


# ---------------------------------------------------------------- SNR metrics


def si_snr(x, xhat, eps: float = 1e-12) -> Tensor:
    """Differentiable SI-SNR in dB (no mean removal); broadcasts over leading axes."""
    x, xhat = as_tensor(x), as_tensor(xhat)
    gain = (xhat * x).sum(axis=-1, keepdims=True) / ((x * x).sum(axis=-1, keepdims=True) + eps)
    proj = gain * x
    err = xhat - proj
    ratio = ((proj * proj).sum(axis=-1) + eps) / ((err * err).sum(axis=-1) + eps)
    return (10.0 / math.log(10.0)) * nx.log(ratio)


def _ratio_db(num: float, den: float) -> float:
    if den == 0.0:
        return math.inf
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def snr_db(x, xhat) -> float:
    x, xhat = np.asarray(x, dtype=float), np.asarray(xhat, dtype=float)
    return _ratio_db(float(x @ x), float((x - xhat) @ (x - xhat)))


def snri_db(x, xhat, xmix) -> float:
    """SNR of the estimate minus SNR of the unprocessed mixture."""
    x, xhat, xmix = (np.asarray(v, dtype=float) for v in (x, xhat, xmix))
    return _ratio_db(float((x - xmix) @ (x - xmix)), float((x - xhat) @ (x - xhat)))


def si_snr_db(x, xhat) -> float:
    x, xhat = np.asarray(x, dtype=float), np.asarray(xhat, dtype=float)
    energy = float(x @ x)
    if energy == 0.0:
        raise ValueError("SI-SNR undefined for a silent target")
    proj = (xhat @ x / energy) * x
    err = xhat - proj
    return _ratio_db(float(proj @ proj), float(err @ err))


def si_snri_db(x, xhat, xmix) -> float:
    return si_snr_db(x, xhat) - si_snr_db(x, xmix)
