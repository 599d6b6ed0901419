"""``press`` command line: train, separate, calibrate, simulate-ratio, report.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import subprocess
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .audio import SAMPLE_RATE, MixtureDataset, WavError, wav_read, wav_write
from .distributions import ratio_sweep
from .exit_engine import (
    ExitPolicy,
    calibration_curve,
    exit_distributions,
    load_recalibration,
    recalibrate,
    save_recalibration,
    separate_with_exit,
)
from .likelihoods import best_permutation, snr_db, snri_db
from .network import ModelConfig, PressNet
from .network import config as model_presets
from .network.config import parse_key_values
from .training import TrainConfig, TrainingDiverged, default_base_lr, train

DATA_KEYS = ("kinds", "snr_low", "snr_high")
PRESETS = {"desk": model_presets.desk, "press4_small": model_presets.press4_small, "press12_medium": model_presets.press12_medium}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config


def split_config(values: dict):
    """Route flat ``key = value`` pairs to the model, training and data settings."""
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    values = dict(values)
    preset = values.pop("preset", "desk")
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    model_kw = {k: v for k, v in values.items() if k in model_keys}
    train_kw = {k: v for k, v in values.items() if k in train_keys}
    data_kw = {k: v for k, v in values.items() if k in DATA_KEYS}
    unknown = set(values) - set(model_kw) - set(train_kw) - set(data_kw)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    base = PRESETS[preset]()
    model_cfg = ModelConfig.from_mapping({**{f.name: getattr(base, f.name) for f in fields(ModelConfig)}, **model_kw})
    train_kw.setdefault("base_lr", default_base_lr(model_cfg.D))
    return model_cfg, train_kw, data_kw


def dataset_from(data_kw: dict, seed: int, segment_seconds: float) -> MixtureDataset:
    kinds = tuple(k.strip() for k in str(data_kw.get("kinds", "harmonic,harmonic")).split(","))
    snr = (float(data_kw.get("snr_low", 0.0)), float(data_kw.get("snr_high", 5.0)))
    return MixtureDataset(seed=seed, segment_seconds=segment_seconds, kinds=kinds, snr_range=snr)


def version_string() -> str:
    """Package version with ``git describe`` output when run from a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).resolve().parent,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(directory: Path, command: str, **entries) -> None:
    lines = [f"command = {command}\n", f"version = {version_string()}\n"]
    lines += [f"{k} = {v}\n" for k, v in entries.items()]
    (directory / "manifest.txt").write_text("".join(lines))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    try:
        model_cfg, train_kw, data_kw = split_config(parse_key_values(path.read_text()))
        if args.seed is not None:
            train_kw["seed"] = args.seed
        cfg = TrainConfig.from_mapping(train_kw)
        dataset = dataset_from(data_kw, cfg.seed, cfg.segment_seconds)
    except ValueError as exc:
        raise UsageError(f"invalid config: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = PressNet(model_cfg, seed=cfg.seed)

    def progress(step, loss, ev):
        if not args.quiet:
            snri = " ".join(f"{v:.2f}" for v in ev.si_snri_db)
            print(f"step {step} loss {loss:.4g} si-snri [{snri}]", flush=True)

    try:
        result = train(model, dataset, cfg, out_dir=out, progress=progress)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1
    dataset.write_manifest(out / "data_manifest.csv", min(cfg.total_steps, 1000))
    write_manifest(out, "train", config=path.resolve(), seed=cfg.seed, out=out.resolve(), skipped_steps=result.skipped_steps)
    return 0


def _load_model(path) -> PressNet:
    ckpt = Path(path)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    return PressNet.load(ckpt)


def cmd_separate(args) -> int:
    model = _load_model(args.model)
    mix, rate = wav_read(args.input)
    if rate != SAMPLE_RATE:
        raise ValueError(f"sample rate {rate} Hz does not match the model's {SAMPLE_RATE} Hz")
    recal = None if args.no_recalibration else load_recalibration(args.model)
    policy = ExitPolicy(args.target_snri_db, args.confidence, recal)
    res = separate_with_exit(model, mix, policy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, sig in enumerate(res.signals):
        wav_write(out / f"source_{i + 1}.wav", sig, rate)
    report = res.report()
    report["target_snri_db"] = args.target_snri_db
    report["confidence"] = args.confidence
    report["recalibration"] = list(recal) if recal else None
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(
        out,
        "separate",
        model=Path(args.model).resolve(),
        input=Path(args.input).resolve(),
        target_snri_db=args.target_snri_db,
        confidence=args.confidence,
    )
    if not args.quiet:
        print(f"exit {res.exit_index}/{res.n_exits} (early: {res.exited_early})")
    return 0


def calibration_samples(model: PressNet, dataset: MixtureDataset, n: int):
    """Predicted SNRi laws and observed SNRi (dB) for every source at every exit."""
    from . import numerics as nx

    dists, observed = [], []
    with nx.no_grad():
        for idx in range(n):
            inst = dataset.instance(idx)
            for pred in model.iter_exits(inst.mixture):
                est = pred.signals.data
                scores = np.array([[snr_db(x, e) for e in est] for x in inst.sources])
                perm = best_permutation(scores)
                per_exit = exit_distributions(pred, inst.mixture)
                for s, x in enumerate(inst.sources):
                    dists.append(per_exit[perm[s]])
                    observed.append(snri_db(x, est[perm[s]], inst.mixture))
    return dists, np.array(observed)


def cmd_calibrate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    model = _load_model(args.model)
    dataset = dataset_from({"kinds": args.kinds}, args.seed, args.segment_seconds)
    dists, observed = calibration_samples(model, dataset, args.n)
    report = calibration_curve(dists, observed)
    m, v, fitted_ece = recalibrate(dists, observed)
    report.fitted = (m, v)
    after = calibration_curve([d.recalibrated(m, v) for d in dists], observed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "calibration.csv").write_text(report.to_csv())
    (out / "calibration_recalibrated.csv").write_text(after.to_csv())
    (out / "calibration_summary.csv").write_text(
        _csv_text(["ece", "ece_recalibrated", "M", "V", "n_samples"], [[repr(report.ece), repr(after.ece), repr(m), repr(v), len(dists)]])
    )
    save_recalibration(args.model, m, v)
    write_manifest(out, "calibrate", model=Path(args.model).resolve(), n=args.n, seed=args.seed)
    if not args.quiet:
        print(f"ECE {report.ece:.4f} -> {after.ece:.4f} with M={m:.2f} V={v:.2f}")
    return 0


def cmd_simulate_ratio(args) -> int:
    try:
        T_values = [int(t) for t in args.T_list.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--T-list must be comma-separated integers, got {args.T_list!r}") from None
    if not T_values:
        raise UsageError("--T-list is empty")
    rows = ratio_sweep(T_values, args.alpha, args.beta, args.c, args.n, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = _csv_text(
        ["T", "ks_statistic", "n_samples", "seed"],
        [[r["T"], repr(r["ks_statistic"]), r["n_samples"], r["seed"]] for r in rows],
    )
    (out / "ks_sweep.csv").write_text(text)
    write_manifest(out, "simulate-ratio", T_list=args.T_list, alpha=args.alpha, beta=args.beta, c=args.c, n=args.n, seed=args.seed)
    if not args.quiet:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- MAC accounting


def block_macs(cfg: ModelConfig) -> dict:
    """Multiply-accumulates per latent frame of one stream, by block type."""
    D, H = cfg.D, cfg.ffn_expand * cfg.D
    gcfn = D * 2 * H + 2 * H * cfg.gcfn_kernel + H * D
    return {
        "rnn": 4 * D * D + 4 * D + gcfn,
        "conv": 2 * D * D + D * cfg.conv_kernel + gcfn,
        "attention": 4 * D * D + 2 * cfg.S * D + gcfn,
    }


def exit_macs_per_second(cfg: ModelConfig, sample_rate: int = SAMPLE_RATE) -> list[float]:
    """Cumulative MACs per second of input audio needed to reach each exit.

    Encoder: the wide convolution (``D_enc K`` per sample) and the patch
    projection. Mixture blocks run on one stream, decoder stages on ``S``
    streams. Every exit head evaluated so far (decoder GLU, output
    convolution, variance head) is included, so the cost grows linearly with
    the exit index.
    """
    frames = sample_rate / cfg.P
    b = block_macs(cfg)
    D, S = cfg.D, cfg.S
    front = sample_rate * cfg.D_enc * cfg.K + frames * (cfg.D_enc + 1) * cfg.P * D
    front += frames * sum(b["rnn"] if i % 2 == 0 else b["conv"] for i in range(cfg.N_enc))
    front += frames * D * S * D
    stage = frames * S * (b["rnn"] + b["conv"] + b["attention"])
    head = frames * S * (D * 2 * cfg.D_enc * cfg.P + cfg.D_enc * cfg.P * cfg.P * cfg.K + D * 2 * D + 2 * D)
    return [front + e * (cfg.exit_every * stage + head) for e in range(1, cfg.n_exits + 1)]


def _run_dirs(root: Path):
    if (root / "model.ckpt.cfg").is_file():
        yield root
    for child in sorted(p for p in root.iterdir() if p.is_dir()):
        if (child / "model.ckpt.cfg").is_file():
            yield child


def cmd_report(args) -> int:
    root = Path(args.runs)
    if not root.is_dir():
        raise FileNotFoundError(f"runs directory {root} not found")
    rows = []
    for run in _run_dirs(root):
        cfg = ModelConfig.load(run / "model.ckpt.cfg")
        macs = exit_macs_per_second(cfg)
        snri = [""] * cfg.n_exits
        metrics = run / "metrics.csv"
        if metrics.is_file():
            records = list(csv.DictReader(metrics.open()))
            if records:
                snri = [records[-1].get(f"si_snri_db_exit{e + 1}", "") for e in range(cfg.n_exits)]
        for e in range(cfg.n_exits):
            rows.append([run.name, e + 1, repr(macs[e]), snri[e]])
    if not rows:
        raise FileNotFoundError(f"no trained runs under {root}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "exit_compute.csv").write_text(_csv_text(["run", "exit", "macs_per_second", "si_snri_db"], rows))
    write_manifest(out, "report", runs=root.resolve())
    return 0


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="press", description="Early-exit probabilistic source separation.")
    parser.add_argument("--version", action="version", version=f"press {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a separator from a key = value config")
    p.add_argument("--config", required=True, help="config file (model, training and data keys)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate a WAV file with early exit")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--target-snri-db", type=float, required=True)
    p.add_argument("--confidence", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-recalibration", action="store_true", help="ignore a fitted (M, V) sidecar")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("calibrate", help="calibration curve, ECE and fitted (M, V) on synthetic mixtures")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True, help="number of mixtures")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7_000_001)
    p.add_argument("--segment-seconds", type=float, default=0.25)
    p.add_argument("--kinds", default="harmonic,harmonic")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate-ratio", help="KS distance of the SNR-ratio law from its gamma limit")
    p.add_argument("--T-list", required=True, help="comma-separated lengths")
    p.add_argument("--alpha", type=float, default=60.0)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--c", type=float, default=0.1)
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_ratio)

    p = sub.add_parser(
        "report",
        help="per-exit compute vs SI-SNRi",
        description=(
            "Writes exit_compute.csv with cumulative multiply-accumulates per second of "
            "8 kHz audio for each exit. Counts include the encoder convolution and patch "
            "projection, four DxD maps per recurrence, two per long convolution plus the "
            "depthwise taps, four per speaker attention, the gated feed-forward layers, and "
            "every exit head up to and including the chosen one. Elementwise work is ignored."
        ),
    )
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"press: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, WavError, RuntimeError) as exc:
        print(f"press: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
