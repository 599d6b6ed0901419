import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from press.distributions import GammaDist, InvGammaParams, SnriDistribution, make_rng, snri_predictive
from press.exit_engine import (
    ExitPolicy,
    calibration_curve,
    calibration_path,
    ece,
    exit_decision,
    load_recalibration,
    recalibrate,
    report_from_pit,
    save_recalibration,
    separate_with_exit,
    should_exit,
)
from press.network import ModelConfig, PressNet

SMALL = ModelConfig(D=8, P=4, D_enc=12, K=5, N_enc=1, N_dec=4, exit_every=1, S=2, conv_kernel=9, ffn_expand=2)


def gamma60():
    return snri_predictive(InvGammaParams(60.0, 1.0), 500.0, 500)


def random_dists(rng, n):
    alphas = rng.uniform(2.0, 60.0, n)
    betas = rng.uniform(0.05, 1.0, n)
    gaps = rng.uniform(50.0, 500.0, n)
    return [snri_predictive(InvGammaParams(a, b), g, 1000) for a, b, g in zip(alphas, betas, gaps)]


def draw_db(dists, rng, m=1.0, v=1.0):
    return np.array([10 * np.log10(d.recalibrated(m, v).sample(rng)) for d in dists])


# ---------------------------------------------------------------- decisions


def test_gamma60_exits_at_10db():
    d = gamma60()
    assert d.z == GammaDist(60.0, 1.0)
    ok, p = should_exit(d, ExitPolicy(10.0, 0.9))
    assert ok
    assert p == pytest.approx(stats.gamma.sf(9.0, 60.0), abs=1e-15)


def test_degenerate_exits_only_at_or_below_0db():
    d = snri_predictive(InvGammaParams(2.0, 1.0), 0.0, 10)
    assert d.degenerate
    assert should_exit(d, ExitPolicy(0.0, 0.99)) == (True, 1.0)
    assert should_exit(d, ExitPolicy(-3.0, 0.99))[0]
    assert not should_exit(d, ExitPolicy(0.1, 0.01))[0]


def test_infinite_target_never_exits():
    assert should_exit(gamma60(), ExitPolicy(math.inf, 1e-9)) == (False, 0.0)
    assert should_exit(gamma60(), ExitPolicy(-math.inf, 0.999))[0]


def test_policy_validation():
    for c in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            ExitPolicy(5.0, c)
    with pytest.raises(ValueError):
        ExitPolicy(math.nan, 0.5)
    with pytest.raises(ValueError):
        ExitPolicy(5.0, 0.5, (0.0, 1.0))


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.5, 100.0),
    st.floats(0.01, 10.0),
    st.floats(-20.0, 40.0),
    st.floats(0.0, 10.0),
    st.floats(0.01, 0.98),
    st.floats(0.0, 0.5),
)
def test_should_exit_monotone(alpha, scale, target, raise_by, conf, conf_raise):
    d = SnriDistribution(InvGammaParams(alpha, 1.0), 1.0, 1, GammaDist(alpha, scale))
    ok, p = should_exit(d, ExitPolicy(target, conf))
    ok_hi_target, p_hi = should_exit(d, ExitPolicy(target + raise_by, conf))
    assert p_hi <= p
    assert not (ok_hi_target and not ok)
    ok_hi_conf, _ = should_exit(d, ExitPolicy(target, min(conf + conf_raise, 0.99)))
    assert not (ok_hi_conf and not ok)


def test_and_aggregation():
    easy, hard = gamma60(), snri_predictive(InvGammaParams(2.0, 1.0), 1.0, 1000)
    policy = ExitPolicy(10.0, 0.9)
    ok, p = exit_decision([easy, hard], policy)
    assert not ok
    assert p == pytest.approx(should_exit(hard, policy)[1])
    assert exit_decision([easy, easy], policy)[0]


def test_shared_gap_probabilities_nondecreasing():
    gap, T = 200.0, 1000
    inc_a, inc_b = [3.0, 1.5, 4.0, 0.5], [2.0, 0.7, 1.1, 3.0]
    dists = [
        snri_predictive(InvGammaParams(float(np.sum(inc_a[: i + 1])), 1.0 / float(np.sum(inc_b[: i + 1]))), gap, T)
        for i in range(4)
    ]
    for target in np.linspace(-5.0, 30.0, 50):
        probs = [d.prob_at_least_db(target) for d in dists]
        assert all(a <= b + 1e-15 for a, b in zip(probs, probs[1:]))


# ---------------------------------------------------------------- separation


@pytest.fixture(scope="module")
def model():
    return PressNet(SMALL, seed=0)


def test_tiny_confidence_exits_first(model, rng):
    res = separate_with_exit(model, rng.normal(size=64), ExitPolicy(-1e9, 1e-4))
    assert res.exit_index == 1 and res.exited_early
    assert len(res.probabilities) == 1
    assert res.signals.shape == (2, 64)


def test_unreachable_target_runs_to_last(model, rng):
    res = separate_with_exit(model, rng.normal(size=64), ExitPolicy(99.0, 0.5))
    assert res.exit_index == SMALL.n_exits
    assert not res.exited_early
    assert len(res.probabilities) == len(res.expected_snri_db) == SMALL.n_exits
    rep = res.report()
    assert set(rep) == {"exit_index", "exited_early", "n_exits", "exit_probabilities", "expected_snri_db"}


def test_signals_match_forward(model, rng):
    mix = rng.normal(size=40)
    preds = model.forward(mix)
    res = separate_with_exit(model, mix, ExitPolicy(99.0, 0.5))
    np.testing.assert_array_equal(res.signals, preds[-1].signals.data)


def test_exit_index_monotone_in_target(model, rng):
    mix = rng.normal(size=64)
    last = math.inf
    for target in np.linspace(20.0, -20.0, 15):
        idx = separate_with_exit(model, mix, ExitPolicy(float(target), 0.5)).exit_index
        assert idx <= last
        last = idx


# ---------------------------------------------------------------- calibration


def test_calibration_examples():
    r = report_from_pit([0.05, 0.05, 0.95, 0.95])
    np.testing.assert_array_equal(r.counts, [2, 0, 0, 0, 0, 0, 0, 0, 0, 2])
    assert r.ece == pytest.approx(0.5 * 0.45 + 0.5 * 0.05)
    assert ece(r) == pytest.approx(r.ece)
    wrong = report_from_pit(np.zeros(100))
    np.testing.assert_array_equal(wrong.observed_fraction, 1.0)
    assert wrong.ece == pytest.approx(0.95)
    with pytest.raises(ValueError):
        report_from_pit([])
    with pytest.raises(ValueError):
        report_from_pit([1.5])


def test_all_true_values_below_predictions(rng):
    dists = random_dists(rng, 50)
    rep = calibration_curve(dists, np.full(50, -1.0))
    np.testing.assert_array_equal(rep.observed_fraction, 1.0)
    with pytest.raises(ValueError):
        calibration_curve([], [])


def test_exact_samples_are_calibrated():
    rng = make_rng(21)
    dists = random_dists(rng, 10_000)
    rep = calibration_curve(dists, draw_db(dists, rng))
    dev = np.abs(rep.observed_fraction - rep.bin_centers)
    assert np.all(dev < 3 * rep.standard_errors())
    assert rep.ece < 0.02
    assert 0.0 <= rep.observed_fraction.min() and rep.observed_fraction.max() <= 1.0


def test_overconfident_predictor_lies_above_diagonal(rng):
    dists = random_dists(rng, 2000)
    true = draw_db(dists, rng) - 3.0
    rep = calibration_curve(dists, true)
    assert np.all(rep.observed_fraction >= rep.bin_centers)


def test_csv_layout(rng):
    rep = report_from_pit(rng.uniform(size=40))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "bin_center,observed_fraction,count"
    assert len(lines) == 11
    assert sum(int(l.split(",")[2]) for l in lines[1:]) == 40


def test_moment_scaling_example():
    z = GammaDist(60.0, 0.1).moment_scaled(0.89, 1.56)
    assert z.shape == pytest.approx(30.47, abs=5e-3)
    assert z.scale == pytest.approx(0.1753, abs=5e-5)
    assert GammaDist(60.0, 0.1).moment_scaled(1.0, 1.0) == GammaDist(60.0, 0.1)


COARSE = np.round(np.arange(0.5, 2.0 + 1e-9, 0.05), 2)


@pytest.mark.parametrize("m_true,v_true", [(0.9, 1.5), (1.2, 0.7)])
def test_recalibration_recovers_shift(m_true, v_true):
    rng = make_rng(31)
    dists = random_dists(rng, 3000)
    m, v, err = recalibrate(dists, draw_db(dists, rng, m_true, v_true), grid=COARSE)
    assert abs(m - m_true) <= 0.05 + 1e-9 and abs(v - v_true) <= 0.1 + 1e-9
    assert err < 0.02


def test_recalibration_never_worse_than_identity(rng):
    dists = random_dists(rng, 500)
    true = draw_db(dists, rng, 1.3, 0.8)
    m, v, err = recalibrate(dists, true, grid=COARSE)
    assert err <= calibration_curve(dists, true).ece + 1e-15
    fitted = calibration_curve([d.recalibrated(m, v) for d in dists], true)
    assert fitted.ece == pytest.approx(err, abs=1e-12)


def test_recalibration_keeps_degenerate(rng):
    dists = random_dists(rng, 100) + [snri_predictive(InvGammaParams(1.0, 1.0), 0.0, 10)] * 5
    true = np.concatenate([draw_db(dists[:100], rng), np.zeros(5)])
    m, v, err = recalibrate(dists, true, grid=COARSE)
    assert err == pytest.approx(calibration_curve([d.recalibrated(m, v) for d in dists], true).ece, abs=1e-12)
    with pytest.raises(ValueError):
        recalibrate(dists, true[:-1])


def test_sidecar_roundtrip(tmp_path):
    ckpt = tmp_path / "model.ckpt"
    assert load_recalibration(ckpt) is None
    path = save_recalibration(ckpt, 0.89, 1.56)
    assert path == calibration_path(ckpt) == tmp_path / "model.ckpt.calib"
    assert load_recalibration(ckpt) == (0.89, 1.56)
