"""AdamW with selective decay, warmup-cosine schedule, clipping and the training loop."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .likelihoods import best_permutation, joint_exit_loglik, mixture_loglik, si_snr_db, si_snri_db, temperature_schedule
from .network import ModelConfig, PressNet
from .network import init_params as _init_model
from .network.config import parse_key_values

LOSS_KINDS = ("studentt_mixture", "studentt_upit", "sisnr_upit")
DECAY_KINDS = frozenset({"linear", "conv"})
EXEMPT_KINDS = frozenset({"norm", "layerscale", "decay", "snake"})


class TrainingDiverged(RuntimeError):
    pass


def default_base_lr(D: int) -> float:
    """5e-4 at width 64, scaled by 64 / D."""
    return 5e-4 * 64.0 / D


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = default_base_lr(16)
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    warmup_steps: int = 500
    total_steps: int = 50_000
    clip_norm: float | None = None
    loss_kind: str = "studentt_mixture"
    seed: int = 0
    segment_seconds: float = 4.0
    eval_every: int = 1000
    n_eval: int = 32
    eps: float = 1e-8

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.clip_norm is None:
            object.__setattr__(self, "clip_norm", 5.0 if self.loss_kind == "sisnr_upit" else 1.0)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must be two numbers in [0, 1), got {self.betas}")
        if self.total_steps < 1 or self.warmup_steps < 0 or self.warmup_steps > self.total_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps and total_steps >= 1")
        if self.base_lr <= 0 or self.clip_norm <= 0 or self.weight_decay < 0:
            raise ValueError("base_lr and clip_norm must be positive, weight_decay non-negative")
        if self.segment_seconds <= 0 or self.eval_every < 1 or self.n_eval < 1:
            raise ValueError("segment_seconds, eval_every and n_eval must be positive")

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k} = {','.join(repr(b) for b in v) if k == 'betas' else v}\n")
        return "".join(lines)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(mapping) - set(types)
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        kw = {}
        for k, v in mapping.items():
            if k == "betas":
                kw[k] = tuple(float(b) for b in str(v).split(",")) if isinstance(v, str) else tuple(v)
            elif k == "loss_kind":
                kw[k] = str(v)
            elif k == "clip_norm":
                kw[k] = None if str(v) == "None" else float(v)
            elif k in ("warmup_steps", "total_steps", "seed", "eval_every", "n_eval"):
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        return cls(**kw)

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        return cls.from_mapping(parse_key_values(text))


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    skipped: int = 0

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def decays(param) -> bool:
    return param.kind in DECAY_KINDS


def optimizer_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), weight_decay=0.01, eps=1e-8) -> bool:
    """One AdamW update in place; returns False (and counts) when a gradient is not finite.

    Decoupled weight decay touches only linear and convolution weights.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        return False
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay and decays(p):
            update = update + weight_decay * p.data
        p.data = p.data - lr * update
    return True


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0, then cosine decay to 0.001 of the base rate."""
    if step < 0:
        raise ValueError("step must be non-negative")
    base, floor = cfg.base_lr, 1e-3 * cfg.base_lr
    if step < cfg.warmup_steps:
        return base * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = 1.0 if span == 0 else min(1.0, (step - cfg.warmup_steps) / span)
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * progress))


def clip_gradients(grads, max_norm: float):
    """Scale all gradients together so the global L2 norm is at most ``max_norm``.

    Returns ``(grads, norm_before)``.
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


def init_params(config, seed: int) -> dict:
    """Fresh parameters for a config (or re-initialize an existing model)."""
    model = PressNet(config, seed=None) if isinstance(config, ModelConfig) else config
    return _init_model(model, seed)


# ---------------------------------------------------------------- loss and evaluation


def loss_fn(model: PressNet, instance, tau: float, loss_kind: str):
    """Negative joint early-exit likelihood averaged over exits."""
    preds = model.forward(instance.mixture)
    targets = np.stack(instance.sources)
    if loss_kind == "studentt_mixture":
        joint = joint_exit_loglik(targets, preds, tau, kind="mixture")
    elif loss_kind == "studentt_upit":
        joint, _ = joint_exit_loglik(targets, preds, kind="upit")
    elif loss_kind == "sisnr_upit":
        joint, _ = joint_exit_loglik(targets, preds, kind="upit", scorer="sisnr")
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return -joint / len(preds), preds


def exit_si_snri(prediction, instance) -> float:
    """Mean SI-SNRi over sources under the best SI-SNR assignment."""
    est = prediction.signals.data
    srcs = instance.sources
    scores = np.array([[si_snr_db(x, e) for e in est] for x in srcs])
    perm = best_permutation(scores)
    return float(np.mean([si_snri_db(x, est[perm[s]], instance.mixture) for s, x in enumerate(srcs)]))


@dataclass
class EvalResult:
    nll: list
    si_snri_db: list


def evaluate(model: PressNet, instances) -> EvalResult:
    """Per-exit mean negative log-likelihood (tau = 1) and mean SI-SNRi."""
    nll, snri = None, None
    with nx.no_grad():
        for inst in instances:
            targets = np.stack(inst.sources)
            preds = model.forward(inst.mixture)
            row_nll = [-float(mixture_loglik(targets, p, 1.0).data) for p in preds]
            row_snri = [exit_si_snri(p, inst) for p in preds]
            if nll is None:
                nll, snri = [0.0] * len(preds), [0.0] * len(preds)
            nll = [a + b for a, b in zip(nll, row_nll)]
            snri = [a + b for a, b in zip(snri, row_snri)]
    n = len(instances)
    return EvalResult([v / n for v in nll], [v / n for v in snri])


# ---------------------------------------------------------------- training loop


def metrics_header(n_exits: int) -> list:
    return (
        ["step", "lr", "tau", "loss"]
        + [f"nll_exit{e + 1}" for e in range(n_exits)]
        + [f"si_snri_db_exit{e + 1}" for e in range(n_exits)]
    )


@dataclass
class TrainResult:
    rows: list = field(default_factory=list)
    skipped_steps: int = 0
    nan_losses: int = 0
    checkpoint: Path | None = None
    final_eval: EvalResult | None = None

    def metrics_csv(self, n_exits: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(metrics_header(n_exits))
        for row in self.rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


HELD_OUT_OFFSET = 1_000_003
MAX_NAN_STREAK = 100


def train(model: PressNet, dataset, cfg: TrainConfig, out_dir=None, progress=None) -> TrainResult:
    """Batch-size-1 training on ``dataset.instance(step)``.

    Every ``eval_every`` steps (and after the last step) the model is scored
    on ``n_eval`` held-out instances and one metrics row is recorded. With
    ``out_dir`` the checkpoint, config sidecar and ``metrics.csv`` are written.
    """
    params = model.parameters()
    state = AdamState.zeros(params)
    held_out_set = dataset.split(HELD_OUT_OFFSET)
    held_out = [held_out_set.instance(i) for i in range(cfg.n_eval)]
    n_exits = model.config.n_exits
    result = TrainResult()
    window, nan_streak = [], 0
    for step in range(cfg.total_steps):
        inst = dataset.instance(step)
        tau = temperature_schedule(step, cfg.total_steps, inst.length)
        lr = lr_schedule(step, cfg)
        loss, _ = loss_fn(model, inst, tau, cfg.loss_kind)
        value = float(loss.data)
        if not math.isfinite(value):
            nan_streak += 1
            result.nan_losses += 1
            if nan_streak >= MAX_NAN_STREAK:
                raise TrainingDiverged(
                    f"loss not finite for {nan_streak} consecutive steps (last step {step}, lr {lr:.3g}, tau {tau:.3g})"
                )
        else:
            nan_streak = 0
            window.append(value)
            grad_map = nx.backward(loss, params)
            grads, _ = clip_gradients([grad_map[p] for p in params], cfg.clip_norm)
            optimizer_step(params, grads, state, lr, cfg.betas, cfg.weight_decay, cfg.eps)
        last = step + 1 == cfg.total_steps
        if (step + 1) % cfg.eval_every == 0 or last:
            ev = evaluate(model, held_out)
            mean_loss = float(np.mean(window)) if window else math.nan
            result.rows.append([step + 1, lr, tau, mean_loss, *ev.nll, *ev.si_snri_db])
            window = []
            if last:
                result.final_eval = ev
            if progress is not None:
                progress(step + 1, mean_loss, ev)
    result.skipped_steps = state.skipped
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoint = out / "model.ckpt"
        model.save(result.checkpoint)
        (out / "train.cfg").write_text(cfg.to_text())
        (out / "metrics.csv").write_text(result.metrics_csv(n_exits))
    return result
