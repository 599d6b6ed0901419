import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from press import numerics as nx
from press.audio import MixtureDataset
from press.network import ModelConfig, PressNet
from press.numerics import Tensor
from press.training import (
    DECAY_KINDS,
    EXEMPT_KINDS,
    AdamState,
    TrainConfig,
    TrainingDiverged,
    clip_gradients,
    default_base_lr,
    evaluate,
    init_params,
    loss_fn,
    lr_schedule,
    metrics_header,
    optimizer_step,
    train,
)

TINY = ModelConfig(D=4, P=4, D_enc=6, K=3, N_enc=1, N_dec=2, exit_every=1, S=2, conv_kernel=5, ffn_expand=1)


def param(value, kind):
    return Tensor(np.array(value, dtype=float), requires_grad=True, kind=kind)


def test_zero_gradient_no_decay_unchanged():
    p = param([1.0, -2.0], "linear")
    state = AdamState.zeros([p])
    assert optimizer_step([p], [np.zeros(2)], state, 0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_exclusion_list():
    assert DECAY_KINDS == {"linear", "conv"}
    assert EXEMPT_KINDS == {"norm", "layerscale", "decay", "snake"}
    model = PressNet(TINY, seed=0)
    assert {p.kind for p in model.parameters()} == DECAY_KINDS | EXEMPT_KINDS
    for kind in EXEMPT_KINDS:
        p = param([1.0, 1.0], kind)
        optimizer_step([p], [np.zeros(2)], AdamState.zeros([p]), 0.1, weight_decay=0.01)
        np.testing.assert_array_equal(p.data, [1.0, 1.0])
    w = param([1.0, 1.0], "conv")
    optimizer_step([w], [np.zeros(2)], AdamState.zeros([w]), 0.1, weight_decay=0.01)
    np.testing.assert_allclose(w.data, [0.999, 0.999])


def test_first_step_matches_hand_computation():
    p = param([0.5], "linear")
    state = AdamState.zeros([p])
    optimizer_step([p], [np.array([2.0])], state, 0.01, weight_decay=0.0, eps=0.0)
    # bias-corrected moments give m/sqrt(v) = sign(g) on step one
    np.testing.assert_allclose(p.data, [0.49])


def test_nan_gradient_skipped_and_counted():
    p = param([1.0], "linear")
    state = AdamState.zeros([p])
    assert not optimizer_step([p], [np.array([np.nan])], state, 0.1)
    assert state.skipped == 1 and state.step == 0
    np.testing.assert_array_equal(p.data, [1.0])


def test_quadratic_converges_within_500_steps():
    p = param([3.0], "norm")
    state = AdamState.zeros([p])
    for _ in range(500):
        optimizer_step([p], [2.0 * (p.data - 1.25)], state, 0.05)
    assert abs(float(p.data[0]) - 1.25) < 1e-2


def test_optimizer_length_mismatch():
    p = param([1.0], "linear")
    with pytest.raises(ValueError):
        optimizer_step([p], [], AdamState.zeros([p]), 0.1)


def test_lr_schedule_examples():
    cfg = TrainConfig(base_lr=1e-3, warmup_steps=100, total_steps=1000)
    assert lr_schedule(0, cfg) == 0.0
    assert lr_schedule(50, cfg) == pytest.approx(5e-4)
    assert lr_schedule(100, cfg) == pytest.approx(1e-3)
    assert lr_schedule(1000, cfg) == pytest.approx(1e-6)
    assert lr_schedule(5000, cfg) == pytest.approx(1e-6)
    mid = lr_schedule(550, cfg)
    assert mid == pytest.approx(1e-6 + 0.5 * (1e-3 - 1e-6))
    with pytest.raises(ValueError):
        lr_schedule(-1, cfg)


def test_lr_schedule_monotone_after_warmup():
    cfg = TrainConfig(warmup_steps=10, total_steps=200)
    values = [lr_schedule(s, cfg) for s in range(201)]
    assert all(a <= b for a, b in zip(values[:10], values[1:11]))
    assert all(a >= b for a, b in zip(values[10:], values[11:]))


def test_clip_examples():
    g = [np.array([0.3, 0.4])]
    out, norm = clip_gradients(g, 1.0)
    assert norm == pytest.approx(0.5)
    np.testing.assert_array_equal(out[0], g[0])
    big = [np.array([6.0, 8.0])]
    out, norm = clip_gradients(big, 1.0)
    assert norm == pytest.approx(10.0)
    np.testing.assert_allclose(out[0], [0.6, 0.8])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=10), st.floats(0.01, 50.0))
def test_clip_norm_property(values, max_norm):
    grads = [np.array(values[: len(values) // 2 + 1]), np.array(values[len(values) // 2 + 1 :])]
    out, norm = clip_gradients(grads, max_norm)
    after = math.sqrt(sum(float(np.sum(g * g)) for g in out))
    assert after == pytest.approx(min(norm, max_norm), abs=1e-12, rel=1e-12)


def test_config_defaults_and_text():
    cfg = TrainConfig()
    assert cfg.clip_norm == 1.0
    assert TrainConfig(loss_kind="sisnr_upit").clip_norm == 5.0
    assert TrainConfig(loss_kind="sisnr_upit", clip_norm=2.0).clip_norm == 2.0
    assert cfg.betas == (0.9, 0.999) and cfg.weight_decay == 0.01
    assert default_base_lr(64) == pytest.approx(5e-4)
    assert default_base_lr(16) == pytest.approx(2e-3)
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ValueError):
        TrainConfig(warmup_steps=10, total_steps=5)
    with pytest.raises(ValueError):
        TrainConfig(loss_kind="l2")
    with pytest.raises(ValueError):
        TrainConfig.from_text("nonsense = 3\n")


def test_init_params_from_config():
    a = init_params(TINY, 3)
    b = init_params(TINY, 3)
    assert set(a) == set(b)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


@pytest.mark.parametrize("kind", ["studentt_mixture", "studentt_upit", "sisnr_upit"])
def test_initial_loss_finite(kind):
    model = PressNet(TINY, seed=0)
    inst = MixtureDataset(segment_seconds=0.01).instance(0)
    loss, preds = loss_fn(model, inst, 4.0, kind)
    assert math.isfinite(float(loss.data))
    assert len(preds) == TINY.n_exits
    grads = nx.backward(loss, model.parameters())
    assert all(np.all(np.isfinite(g)) for g in grads.values())


def test_smoke_train_writes_outputs(tmp_path):
    model = PressNet(TINY, seed=0)
    data = MixtureDataset(seed=1, segment_seconds=0.01)
    cfg = TrainConfig(base_lr=1e-2, warmup_steps=2, total_steps=12, eval_every=5, n_eval=2, segment_seconds=0.01)
    seen = []
    result = train(model, data, cfg, out_dir=tmp_path, progress=lambda *a: seen.append(a[0]))
    assert seen == [5, 10, 12]
    assert [r[0] for r in result.rows] == [5, 10, 12]
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0].split(",")
    assert header == metrics_header(2) == ["step", "lr", "tau", "loss", "nll_exit1", "nll_exit2", "si_snri_db_exit1", "si_snri_db_exit2"]
    assert (tmp_path / "model.ckpt").exists() and (tmp_path / "model.ckpt.cfg").exists()
    assert TrainConfig.from_text((tmp_path / "train.cfg").read_text()) == cfg
    assert result.skipped_steps == 0 and result.nan_losses == 0
    assert len(result.final_eval.nll) == 2


def test_training_is_deterministic(tmp_path):
    cfg = TrainConfig(base_lr=1e-2, warmup_steps=2, total_steps=6, eval_every=3, n_eval=1)
    data = MixtureDataset(seed=2, segment_seconds=0.01)
    for name in ("a", "b"):
        train(PressNet(TINY, seed=0), data, cfg, out_dir=tmp_path / name)
    for f in ("model.ckpt", "metrics.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_training_reduces_loss():
    model = PressNet(TINY, seed=0)
    data = MixtureDataset(seed=3, segment_seconds=0.01)
    held = [data.split(99).instance(i) for i in range(4)]
    before = evaluate(model, held).nll
    cfg = TrainConfig(base_lr=1e-2, warmup_steps=5, total_steps=150, eval_every=150, n_eval=4)
    train(model, data, cfg)
    after = evaluate(model, held).nll
    assert after[-1] < before[-1]


def test_divergence_aborts(monkeypatch):
    import press.training as training

    monkeypatch.setattr(training, "MAX_NAN_STREAK", 3)

    def bad_loss(model, inst, tau, kind):
        return Tensor(np.array(np.nan)), []

    monkeypatch.setattr(training, "loss_fn", bad_loss)
    cfg = TrainConfig(warmup_steps=0, total_steps=10, eval_every=100, n_eval=1)
    with pytest.raises(TrainingDiverged, match="3 consecutive"):
        train(PressNet(TINY, seed=0), MixtureDataset(segment_seconds=0.01), cfg)
