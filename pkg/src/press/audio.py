"""Synthetic sources, seeded two-source mixtures and 16-bit PCM WAV I/O."""

from __future__ import annotations

import csv
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .distributions import make_rng

SAMPLE_RATE = 8000
PEAK = 0.5
KINDS = ("harmonic", "am_noise", "chirp")


class WavError(ValueError):
    """Raised for WAV files this module cannot read."""


# ---------------------------------------------------------------- sources


def _peak_normalize(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x))
    if peak == 0:
        return x
    return x * (PEAK / peak)


def _envelope(T: int, rng, sample_rate: int) -> np.ndarray:
    """Slow positive envelope: a few random low-frequency cosines around 1."""
    t = np.arange(T) / sample_rate
    env = np.ones(T)
    for _ in range(3):
        env += 0.25 * rng.uniform(0.2, 1.0) * np.cos(2 * np.pi * rng.uniform(0.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    return np.maximum(env, 0.05)


def synth_source(
    kind: str,
    T: int,
    rng: np.random.Generator,
    sample_rate: int = SAMPLE_RATE,
    n_partials: int | None = None,
    envelope: bool = True,
) -> np.ndarray:
    """One synthetic source of ``T`` samples with peak amplitude 0.5.

    ``harmonic``: 3 to 8 harmonics (or ``n_partials``) of a random f0 in
    [80, 300] Hz under a slow envelope. ``am_noise``: band-passed white noise
    with slow amplitude modulation. ``chirp``: linear frequency sweep.
    """
    if T < 1:
        raise ValueError("a source needs at least one sample")
    t = np.arange(T) / sample_rate
    if kind == "harmonic":
        f0 = rng.uniform(80.0, 300.0)
        n = int(rng.integers(3, 9)) if n_partials is None else int(n_partials)
        if n < 1:
            raise ValueError("n_partials must be positive")
        x = np.zeros(T)
        for h in range(1, n + 1):
            if h * f0 >= sample_rate / 2:
                break
            x += rng.uniform(0.3, 1.0) / h * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
        if envelope:
            x *= _envelope(T, rng, sample_rate)
    elif kind == "am_noise":
        nyq = sample_rate / 2
        lo = rng.uniform(100.0, 1500.0)
        hi = min(lo * rng.uniform(1.5, 3.0), 0.95 * nyq)
        sos = sps.butter(4, [lo / nyq, hi / nyq], btype="bandpass", output="sos")
        x = sps.sosfilt(sos, rng.standard_normal(T))
        depth = rng.uniform(0.3, 0.9)
        x *= 1.0 + depth * np.sin(2 * np.pi * rng.uniform(0.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    elif kind == "chirp":
        f_start, f_end = rng.uniform(100.0, 1500.0, size=2)
        duration = max(t[-1], 1.0 / sample_rate)
        x = sps.chirp(t, f0=f_start, t1=duration, f1=f_end, method="linear", phi=rng.uniform(0, 360))
    else:
        raise ValueError(f"unknown source kind {kind!r}; expected one of {KINDS}")
    return _peak_normalize(x)


# ---------------------------------------------------------------- mixing


@dataclass
class MixtureInstance:
    mixture: np.ndarray
    sources: list
    snr_db_at_mix: float
    sample_rate: int = SAMPLE_RATE
    seed: int = 0
    kinds: tuple = field(default_factory=tuple)

    @property
    def length(self) -> int:
        return self.mixture.shape[0]


def energy_ratio_db(a: np.ndarray, b: np.ndarray) -> float:
    return 10.0 * math.log10(float(a @ a) / float(b @ b))


def mix(sources, target_snr_db: float, rng: np.random.Generator | None = None, seed: int = 0) -> MixtureInstance:
    """Scale the second source so ``10 log10(|s1|^2 / |g s2|^2)`` equals the target.

    Sources are stored after scaling, and the mixture is their running sum,
    so the sum identity holds exactly. ``rng`` is accepted for interface
    symmetry with the other generators; mixing itself is deterministic.
    """
    sources = [np.asarray(s, dtype=np.float64) for s in sources]
    if len(sources) < 2:
        raise ValueError("a mixture needs at least two sources")
    T = sources[0].shape[0]
    if any(s.ndim != 1 or s.shape[0] != T for s in sources):
        raise ValueError("sources must be 1-D and of equal length")
    energies = [float(s @ s) for s in sources]
    if min(energies) == 0.0:
        raise ValueError("silent source cannot be mixed")
    gain = math.sqrt(energies[0] / energies[1] * 10.0 ** (-target_snr_db / 10.0))
    scaled = [sources[0].copy(), sources[1] * gain] + [s.copy() for s in sources[2:]]
    mixture = scaled[0].copy()
    for s in scaled[1:]:
        mixture = mixture + s
    return MixtureInstance(mixture, scaled, float(target_snr_db), seed=seed)


@dataclass(frozen=True)
class MixtureDataset:
    """Seeded mixtures: instance ``i`` is a pure function of ``(seed, i)``.

    Each source ``k`` is of kind ``kinds[k]``; the second source is mixed at a
    level drawn uniformly from ``snr_range`` dB relative to the first.
    """

    seed: int = 0
    segment_seconds: float = 4.0
    kinds: tuple = ("harmonic", "harmonic")
    snr_range: tuple = (0.0, 5.0)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if len(self.kinds) < 2:
            raise ValueError("need at least two source kinds")
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown source kind {k!r}")
        if self.length < 1:
            raise ValueError("segment shorter than one sample")
        lo, hi = self.snr_range
        if hi < lo:
            raise ValueError("snr_range must be (low, high)")

    @property
    def length(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    def instance(self, index: int) -> MixtureInstance:
        rng = make_rng(self.seed, index)
        sources = [synth_source(k, self.length, rng, self.sample_rate) for k in self.kinds]
        snr = float(rng.uniform(*self.snr_range))
        inst = mix(sources, snr, seed=self.seed)
        inst.seed = self.seed
        inst.kinds = tuple(self.kinds)
        return inst

    def split(self, offset: int) -> "MixtureDataset":
        """The same generator with a different seed (e.g. a held-out set)."""
        return MixtureDataset(self.seed + offset, self.segment_seconds, self.kinds, self.snr_range, self.sample_rate)

    def write_manifest(self, path, n: int) -> None:
        """CSV with one row per instance: seed, index, kinds, snr_db."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "index", "kind_per_source", "snr_db"])
            for i in range(n):
                w.writerow([self.seed, i, "|".join(self.kinds), repr(self.instance(i).snr_db_at_mix)])


# ---------------------------------------------------------------- WAV


def wav_write(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """Mono 16-bit PCM; ``round(x * 32768)`` clamped to the int16 range."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("only mono signals can be written")
    q = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(q.tobytes())


def wav_read(path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM file as floats in [-1, 1) and its sample rate."""
    path = Path(path)
    if path.stat().st_size == 0:
        raise WavError(f"{path}: empty file")
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate, n = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
            if channels != 1:
                raise WavError(f"{path}: {channels} channels, only mono is supported")
            if width != 2:
                raise WavError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
            frames = fh.readframes(n)
    except wave.Error as exc:
        raise WavError(f"{path}: not a PCM WAV file ({exc})") from None
    except EOFError:
        raise WavError(f"{path}: truncated header") from None
    if len(frames) != 2 * n:
        raise WavError(f"{path}: truncated data, expected {n} frames, found {len(frames) // 2}")
    return np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0, rate
