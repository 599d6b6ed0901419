"""Early-exit decisions from predictive SNRi distributions, calibration and recalibration."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammainc

from . import numerics as nx
from .distributions import SnriDistribution, snri_db_expectation, snri_predictive
from .likelihoods import ExitPrediction
from .network.config import parse_key_values

N_BINS = 10
GRID = np.round(np.arange(0.5, 2.0 + 1e-9, 0.01), 2)


@dataclass(frozen=True)
class ExitPolicy:
    """Exit once every source reaches ``target_snri_db`` with probability ``confidence``."""

    target_snri_db: float
    confidence: float
    recalibration: tuple | None = None

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ValueError(f"confidence must lie strictly between 0 and 1, got {self.confidence}")
        if math.isnan(self.target_snri_db):
            raise ValueError("target_snri_db is NaN")
        if self.recalibration is not None:
            m, v = self.recalibration
            if not (m > 0 and v > 0):
                raise ValueError(f"recalibration factors must be positive, got {self.recalibration}")


def apply_recalibration(dist: SnriDistribution, recalibration) -> SnriDistribution:
    if recalibration is None:
        return dist
    return dist.recalibrated(*recalibration)


def exit_probability(dist: SnriDistribution, policy: ExitPolicy) -> float:
    """``P(SNRi >= target)`` after optional recalibration."""
    return apply_recalibration(dist, policy.recalibration).prob_at_least_db(policy.target_snri_db)


def should_exit(dist: SnriDistribution, policy: ExitPolicy) -> tuple[bool, float]:
    p = exit_probability(dist, policy)
    return p >= policy.confidence, p


def exit_distributions(prediction: ExitPrediction, mixture) -> list[SnriDistribution]:
    """Predictive SNRi law of every source estimate at one exit."""
    mix = np.asarray(mixture.data if isinstance(mixture, nx.Tensor) else mixture, dtype=np.float64)
    est = prediction.signals.data
    T = est.shape[1]
    out = []
    for i in range(prediction.n_sources):
        diff = est[i] - mix
        out.append(snri_predictive(prediction.params(i), float(diff @ diff), T))
    return out


def exit_decision(dists, policy: ExitPolicy) -> tuple[bool, float]:
    """All sources must pass; the reported probability is the smallest one."""
    probs = [exit_probability(d, policy) for d in dists]
    p = min(probs)
    return p >= policy.confidence, p


@dataclass
class SeparationResult:
    signals: np.ndarray
    exit_index: int
    probabilities: list
    expected_snri_db: list
    exited_early: bool
    n_exits: int

    def report(self) -> dict:
        return {
            "exit_index": self.exit_index,
            "exited_early": self.exited_early,
            "n_exits": self.n_exits,
            "exit_probabilities": [float(p) for p in self.probabilities],
            "expected_snri_db": [float(v) for v in self.expected_snri_db],
        }


def separate_with_exit(model, mixture, policy: ExitPolicy) -> SeparationResult:
    """Run exits in order and stop at the first one whose sources all pass.

    Blocks behind the chosen exit are never evaluated. Without a passing exit
    the last exit's output is returned with ``exited_early`` false.
    """
    mix = np.asarray(mixture, dtype=np.float64)
    n_exits = model.config.n_exits
    probs, expected = [], []
    with nx.no_grad():
        for pred in model.iter_exits(mix):
            dists = [apply_recalibration(d, policy.recalibration) for d in exit_distributions(pred, mix)]
            ok, p = exit_decision(dists, ExitPolicy(policy.target_snri_db, policy.confidence))
            probs.append(p)
            expected.append(float(np.mean([snri_db_expectation(d) for d in dists])))
            if ok or pred.exit_index == n_exits:
                return SeparationResult(pred.signals.data.copy(), pred.exit_index, probs, expected, ok, n_exits)
    raise RuntimeError("model produced no exits")


# ---------------------------------------------------------------- calibration


@dataclass
class CalibrationReport:
    """Reliability data over 10 bins of width 0.1.

    ``observed_fraction[c]`` is the share of all samples whose PIT value lies
    at or below the centre of bin ``c``; ``counts[c]`` is how many PIT values
    fall inside bin ``c``. A calibrated predictor gives fractions equal to the
    bin centres.
    """

    bin_edges: np.ndarray
    observed_fraction: np.ndarray
    counts: np.ndarray
    ece: float
    fitted: tuple | None = None
    pit: np.ndarray = field(default=None, repr=False)

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def standard_errors(self) -> np.ndarray:
        p = self.bin_centers
        return np.sqrt(p * (1.0 - p) / self.n)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_center", "observed_fraction", "count"])
        for c, f, n in zip(self.bin_centers, self.observed_fraction, self.counts):
            w.writerow([repr(round(float(c), 10)), repr(float(f)), int(n)])
        return buf.getvalue()


BIN_EDGES = np.linspace(0.0, 1.0, N_BINS + 1)


def _bin_index(u: np.ndarray) -> np.ndarray:
    return np.minimum((u * N_BINS).astype(np.int64), N_BINS - 1)


def report_from_pit(u) -> CalibrationReport:
    u = np.asarray(u, dtype=np.float64).ravel()
    if u.size == 0:
        raise ValueError("calibration needs at least one sample")
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise ValueError("PIT values must lie in [0, 1]")
    centers = 0.5 * (BIN_EDGES[:-1] + BIN_EDGES[1:])
    observed = np.array([np.mean(u <= c) for c in centers])
    counts = np.bincount(_bin_index(u), minlength=N_BINS)
    err = float(np.sum(counts / u.size * np.abs(observed - centers)))
    return CalibrationReport(BIN_EDGES.copy(), observed, counts, err, pit=u)


def pit_values(dists, true_snri_db) -> np.ndarray:
    """``u = CDF_pred(true SNRi)`` per sample."""
    true_snri_db = np.asarray(true_snri_db, dtype=np.float64).ravel()
    if len(dists) != true_snri_db.size:
        raise ValueError(f"{len(dists)} distributions but {true_snri_db.size} observations")
    return np.array([float(d.cdf_db(t)) for d, t in zip(dists, true_snri_db)])


def calibration_curve(dists, true_snri_db) -> CalibrationReport:
    if len(dists) == 0:
        raise ValueError("calibration needs at least one sample")
    return report_from_pit(pit_values(dists, true_snri_db))


def ece(report: CalibrationReport) -> float:
    """Count-weighted mean absolute gap between observed fraction and bin centre."""
    centers = report.bin_centers
    return float(np.sum(report.counts / report.counts.sum() * np.abs(report.observed_fraction - centers)))


def _pit_grid(shape, scale, excess, m, v_values):
    """PIT values for one M and every V: rows follow ``v_values``."""
    v = v_values[:, None]
    a = shape[None, :] * (m * m) / v
    x = excess[None, :] / (scale[None, :] * v / m)
    return gammainc(a, np.maximum(x, 0.0))


def _ece_rows(u: np.ndarray) -> np.ndarray:
    centers = 0.5 * (BIN_EDGES[:-1] + BIN_EDGES[1:])
    n = u.shape[1]
    idx = _bin_index(u)
    out = np.zeros(u.shape[0])
    for c in range(N_BINS):
        weight = np.count_nonzero(idx == c, axis=1) / n
        observed = np.count_nonzero(u <= centers[c], axis=1) / n
        out += weight * np.abs(observed - centers[c])
    return out


def recalibrate(dists, true_snri_db, grid=GRID) -> tuple[float, float, float]:
    """Grid search of ``(M, V)`` minimizing the ECE of the rescaled predictions.

    Returns ``(M, V, ece)``. Ties go to the pair closest to ``(1, 1)``.
    Degenerate distributions are unaffected by rescaling and are kept as is.
    """
    true_snri_db = np.asarray(true_snri_db, dtype=np.float64).ravel()
    if len(dists) == 0 or len(dists) != true_snri_db.size:
        raise ValueError("need one observation per distribution")
    grid = np.asarray(grid, dtype=np.float64)
    live = np.array([not d.degenerate for d in dists])
    fixed_u = np.array([float(d.cdf_db(t)) for d, t, ok in zip(dists, true_snri_db, live) if not ok])
    shape = np.array([d.z.shape for d, ok in zip(dists, live) if ok])
    scale = np.array([d.z.scale for d, ok in zip(dists, live) if ok])
    offset = np.array([d.offset for d, ok in zip(dists, live) if ok])
    excess = 10.0 ** (true_snri_db[live] / 10.0) - offset
    best = (math.inf, math.inf, 1.0, 1.0)
    for m in grid:
        u = _pit_grid(shape, scale, excess, m, grid)
        if fixed_u.size:
            u = np.concatenate([u, np.broadcast_to(fixed_u, (grid.size, fixed_u.size))], axis=1)
        errs = _ece_rows(u)
        for v, e in zip(grid, errs):
            key = (float(e), (m - 1.0) ** 2 + (v - 1.0) ** 2)
            if key < best[:2]:
                best = (key[0], key[1], float(m), float(v))
    return best[2], best[3], best[0]


# ---------------------------------------------------------------- sidecar


def calibration_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".calib")


def save_recalibration(ckpt, m: float, v: float) -> Path:
    path = calibration_path(ckpt)
    path.write_text(f"M = {m!r}\nV = {v!r}\n")
    return path


def load_recalibration(ckpt) -> tuple | None:
    path = calibration_path(ckpt)
    if not path.exists():
        return None
    values = parse_key_values(path.read_text())
    return float(values["M"]), float(values["V"])
