import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

from press import numerics as nx
from press.likelihoods import (
    ExitPrediction,
    best_permutation,
    joint_exit_loglik,
    joint_score_matrix,
    logsumexp_tau,
    mixture_loglik,
    optimal_gain,
    score_matrix,
    si_snr,
    si_snr_db,
    si_snri_db,
    si_studentt_loglik,
    snr_db,
    snri_db,
    studentt_loglik,
    temperature_schedule,
    upit_loglik,
)
from press.numerics import Tensor


def fd_rel_error(f, arrays, grads, eps=1e-5):
    """Largest relative error between analytic gradients and central differences."""
    worst = 0.0
    for arr, g in zip(arrays, grads):
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + eps
            hi = f()
            arr[i] = old - eps
            lo = f()
            arr[i] = old
            num = (hi - lo) / (2 * eps)
            worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-8))
    return worst


def reference_studentt(x, xhat, a, b):
    T = x.size
    sq = float(np.sum((x - xhat) ** 2))
    return gammaln(a + T / 2) - gammaln(a) - T / 2 * np.log(2 * np.pi * b) - (a + T / 2) * np.log1p(sq / (2 * b))


def make_prediction(signals, alpha, beta, index=1):
    return ExitPrediction(index, Tensor(np.asarray(signals, float)), Tensor(np.asarray(alpha, float)), Tensor(np.asarray(beta, float)))


def test_studentt_zero_residual_example():
    x = np.array([0.3, -1.0])
    assert float(studentt_loglik(x, x, 1.0, 1.0).data) == pytest.approx(-math.log(2 * math.pi), abs=1e-14)


def test_studentt_doubling_beta():
    x = np.arange(5.0)
    a = float(studentt_loglik(x, x, 3.0, 0.7).data)
    b = float(studentt_loglik(x, x, 3.0, 1.4).data)
    assert a - b == pytest.approx(2.5 * math.log(2.0), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.floats(0.1, 100.0), st.floats(1e-3, 10.0), st.integers(0, 2**31))
def test_studentt_matches_reference(T, a, b, seed):
    r = np.random.default_rng(seed)
    x, xhat = r.normal(size=T), r.normal(size=T)
    assert float(studentt_loglik(x, xhat, a, b).data) == pytest.approx(reference_studentt(x, xhat, a, b), rel=1e-10, abs=1e-9)


def test_studentt_gradient_64_samples(rng):
    x = rng.normal(size=64)
    xhat = rng.normal(size=64)
    ab = np.array([3.0, 0.5])
    leaves = [Tensor(xhat, requires_grad=True), Tensor(ab, requires_grad=True)]
    loss = studentt_loglik(x, leaves[0], leaves[1][0], leaves[1][1])
    g = nx.backward(loss, leaves)
    f = lambda: float(studentt_loglik(x, xhat, ab[0], ab[1]).data)
    assert fd_rel_error(f, [xhat, ab], [g[leaves[0]], g[leaves[1]]]) < 1e-4


def test_si_studentt_gain_examples(rng):
    x = rng.normal(size=20)
    assert optimal_gain(x, 2 * x) == pytest.approx(0.5)
    assert optimal_gain(x, x) == pytest.approx(1.0)
    same = float(si_studentt_loglik(x, 2 * x, 2.0, 1.0).data)
    assert same == pytest.approx(float(studentt_loglik(x, x, 2.0, 1.0).data), abs=1e-10)


def test_si_studentt_gain_is_optimal(rng):
    for _ in range(10):
        x, xhat = rng.normal(size=30), rng.normal(size=30) + 0.5 * rng.normal(size=30)
        g = optimal_gain(x, xhat)
        best = float(studentt_loglik(x, g * xhat, 4.0, 0.3).data)
        for factor in (0.9, 1.1):
            assert best >= float(studentt_loglik(x, factor * g * xhat, 4.0, 0.3).data)


def test_si_studentt_rejects_silent_estimate():
    with pytest.raises(ValueError):
        si_studentt_loglik(np.ones(3), np.zeros(3), 1.0, 1.0)


def test_logsumexp_examples():
    assert float(logsumexp_tau(Tensor(np.zeros(2)), 1.0).data) == pytest.approx(math.log(2.0))
    assert float(logsumexp_tau(Tensor(np.array([-7.5])), 3.0).data) == pytest.approx(-7.5)
    v = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    g = nx.backward(logsumexp_tau(v, 2.0), [v])[v]
    e = np.exp(np.array([0.5, 1.0, 1.5]))
    np.testing.assert_allclose(g, e / e.sum(), atol=1e-15)
    with pytest.raises(ValueError):
        logsumexp_tau(v, 0.0)


def test_logsumexp_stable_for_large_values():
    out = float(logsumexp_tau(Tensor(np.array([1e4, 1e4])), 1.0).data)
    assert out == pytest.approx(1e4 + math.log(2.0))


def test_temperature_schedule():
    total, T = 10_000, 400
    s0 = math.ceil(0.005 * total)
    assert temperature_schedule(0, total, T) == T
    assert temperature_schedule(s0 // 2, total, T) == pytest.approx(math.sqrt(T))
    assert temperature_schedule(s0, total, T) == 1.0
    taus = [temperature_schedule(s, total, T) for s in range(s0 + 5)]
    assert all(a >= b for a, b in zip(taus, taus[1:]))


def test_mixture_identical_estimates(rng):
    x = rng.normal(size=(2, 16))
    est = rng.normal(size=16)
    pred = make_prediction([est, est], [3.0, 3.0], [0.5, 0.5])
    total = float(mixture_loglik(x, pred).data)
    expected = sum(float(studentt_loglik(t, est, 3.0, 0.5).data) for t in x)
    assert total == pytest.approx(expected, abs=1e-10)


def test_mixture_symmetric_in_targets(rng):
    x = rng.normal(size=(3, 10))
    pred = make_prediction(rng.normal(size=(3, 10)), [2.0, 3.0, 4.0], [0.3, 0.4, 0.5])
    a = float(mixture_loglik(x, pred, 2.0).data)
    b = float(mixture_loglik(x[[2, 0, 1]], pred, 2.0).data)
    assert a == pytest.approx(b, abs=1e-10)


def test_mixture_approaches_upit_when_one_assignment_dominates(rng):
    x = rng.normal(size=(3, 200))
    perm = [2, 0, 1]
    signals = np.empty_like(x)
    for s, i in enumerate(perm):
        signals[i] = x[s] + 1e-3 * rng.normal(size=200)
    pred = make_prediction(signals, [5.0] * 3, [1e-4] * 3)
    upit, found = upit_loglik(x, pred)
    assert found == tuple(perm)
    mix = float(mixture_loglik(x, pred).data)
    assert mix == pytest.approx(float(upit.data) + 3 * math.log(1 / 3), abs=1e-6)


def test_mixture_allows_extra_estimates_only(rng):
    x = rng.normal(size=(2, 8))
    pred = make_prediction(rng.normal(size=(3, 8)), [1.0] * 3, [1.0] * 3)
    assert math.isfinite(float(mixture_loglik(x, pred).data))
    with pytest.raises(ValueError):
        mixture_loglik(rng.normal(size=(3, 8)), make_prediction(rng.normal(size=(2, 8)), [1.0] * 2, [1.0] * 2))
    with pytest.raises(ValueError):
        mixture_loglik([], pred)


@pytest.mark.parametrize("tau", [1.0, 8.0])
def test_mixture_gradient(rng, tau):
    x = rng.normal(size=(2, 24))
    sig = rng.normal(size=(2, 24))
    alpha, beta = np.array([2.0, 5.0]), np.array([0.4, 0.9])
    leaves = [Tensor(a, requires_grad=True) for a in (sig, alpha, beta)]
    g = nx.backward(mixture_loglik(x, ExitPrediction(1, *leaves), tau), leaves)
    f = lambda: float(mixture_loglik(x, make_prediction(sig, alpha, beta), tau).data)
    assert fd_rel_error(f, [sig, alpha, beta], [g[l] for l in leaves]) < 1e-4


def test_joint_single_exit_equals_mixture(rng):
    x = rng.normal(size=(2, 12))
    pred = make_prediction(rng.normal(size=(2, 12)), [2.0, 3.0], [0.5, 0.6])
    assert float(joint_exit_loglik(x, [pred], 3.0).data) == pytest.approx(float(mixture_loglik(x, pred, 3.0).data))


def test_joint_identical_exits_multiply_scores(rng):
    x = rng.normal(size=(2, 12))
    pred = make_prediction(rng.normal(size=(2, 12)), [2.0, 3.0], [0.5, 0.6])
    joint = joint_score_matrix(x, [pred, pred, pred]).data
    np.testing.assert_allclose(joint, 3 * score_matrix(x, pred).data, rtol=1e-14)


def test_joint_upit_shares_one_permutation(rng):
    """Find instances where per-exit assignments disagree; the joint one is single by construction."""
    disagreements = 0
    for _ in range(200):
        x = rng.normal(size=(2, 6))
        preds = [make_prediction(rng.normal(size=(2, 6)), [2.0, 2.0], [1.0, 1.0], e + 1) for e in range(2)]
        per_exit = {upit_loglik(x, p)[1] for p in preds}
        total, joint_perm = joint_exit_loglik(x, preds, kind="upit")
        scores = sum(score_matrix(x, p).data for p in preds)
        best = max(itertools.permutations(range(2)), key=lambda q: sum(scores[s, q[s]] for s in range(2)))
        assert joint_perm == best
        assert float(total.data) == pytest.approx(sum(scores[s, best[s]] for s in range(2)))
        disagreements += len(per_exit) > 1
    assert disagreements > 0


def test_joint_rejects_inconsistent_sources(rng):
    x = rng.normal(size=(2, 5))
    p2 = make_prediction(rng.normal(size=(2, 5)), [1.0, 1.0], [1.0, 1.0])
    p3 = make_prediction(rng.normal(size=(3, 5)), [1.0] * 3, [1.0] * 3)
    with pytest.raises(ValueError):
        joint_exit_loglik(x, [p2, p3])
    with pytest.raises(ValueError):
        joint_exit_loglik(x, [])
    with pytest.raises(ValueError):
        joint_exit_loglik(x, [p2], kind="other")


def test_upit_examples(rng):
    x = rng.normal(size=(1, 7))
    assert upit_loglik(x, make_prediction(rng.normal(size=(1, 7)), [1.0], [1.0]))[1] == (0,)
    y = rng.normal(size=(2, 7))
    _, perm = upit_loglik(y, make_prediction(y[::-1], [3.0, 3.0], [0.1, 0.1]))
    assert perm == (1, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_brute_force_matches_hungarian(S, seed):
    scores = np.random.default_rng(seed).normal(size=(S, S))
    brute = best_permutation(scores)
    rows, cols = linear_sum_assignment(-scores)
    assert sum(scores[s, brute[s]] for s in range(S)) == pytest.approx(scores[rows, cols].sum())
    assert best_permutation(scores, "hungarian") == tuple(int(c) for c in cols)


def test_sisnr_scorer_upit(rng):
    x = rng.normal(size=(2, 50))
    pred = make_prediction(x[::-1] * 3.0 + 0.01 * rng.normal(size=(2, 50)), [1.0, 1.0], [1.0, 1.0])
    _, perm = upit_loglik(x, pred, scorer="sisnr")
    assert perm == (1, 0)
    with pytest.raises(ValueError):
        score_matrix(x, pred, scorer="nope")


def test_snr_metrics(rng):
    x, mix = rng.normal(size=100), rng.normal(size=100)
    assert snri_db(x, mix, mix) == pytest.approx(0.0)
    assert si_snr_db(x, 2 * x) == math.inf
    xhat = x + 0.3 * rng.normal(size=100)
    # direct formula evaluation
    proj = (xhat @ x) / (x @ x) * x
    direct = 10 * np.log10((proj @ proj) / ((xhat - proj) @ (xhat - proj)))
    assert si_snr_db(x, xhat) == pytest.approx(direct, abs=1e-10)
    assert snr_db(x, xhat) == pytest.approx(10 * np.log10((x @ x) / ((x - xhat) @ (x - xhat))))
    assert si_snri_db(x, xhat, mix) == pytest.approx(direct - si_snr_db(x, mix))
    assert float(si_snr(x, xhat).data) == pytest.approx(direct, abs=1e-8)
    with pytest.raises(ValueError):
        si_snr_db(np.zeros(3), np.ones(3))


def test_si_snr_gradient(rng):
    x, xhat = rng.normal(size=16), rng.normal(size=16)
    leaf = Tensor(xhat, requires_grad=True)
    g = nx.backward(si_snr(x, leaf), [leaf])[leaf]
    assert fd_rel_error(lambda: float(si_snr(x, xhat).data), [xhat], [g]) < 1e-4
