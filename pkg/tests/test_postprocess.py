import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from sklearn.metrics import roc_auc_score

from oracles import residuals
from tensorfmri import activation as act
from tensorfmri import postprocess as P
from tensorfmri.engine import ChainStore, RunConfig, run_chain


# 2-means

def brute_force_sse(x):
    best = math.inf
    for bits in itertools.product([0, 1], repeat=len(x)):
        if 0 < sum(bits) < len(x):
            a = np.array([v for v, b in zip(x, bits) if b])
            c = np.array([v for v, b in zip(x, bits) if not b])
            best = min(best, np.sum((a - a.mean()) ** 2) + np.sum((c - c.mean()) ** 2))
    return best


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=8))
def test_two_means_split_is_optimal(x):
    split = P.two_means_split(np.array(x))
    if len(set(x)) == 1:
        assert split is None
        return
    high = split[0]
    a, c = np.array(x)[high], np.array(x)[~high]
    sse = np.sum((a - a.mean()) ** 2) + np.sum((c - c.mean()) ** 2)
    assert sse <= brute_force_sse(x) + 1e-9 * (1 + brute_force_sse(x))
    assert a.min() >= c.max()


def test_count_signals_examples():
    assert P.count_signals([0, 0, 0, 5, 5], 1.0) == 2
    assert P.count_signals([0.1, 0.2, 10.0], 1.0) == 1
    assert P.count_signals([3.0, 3.0, 3.0], 0.0) == 0
    assert P.count_signals([0.0, 1.0], 5.0) == 0
    assert P.count_signals([-4.0, 0.0, 0.1, 4.0], 1.0) == 2  # magnitudes


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30), st.integers(-6, 6), st.floats(0, 20))
def test_count_signals_scale_equivariant(x, k, b):
    c = 2.0**k  # exact in floating point
    assert P.count_signals(np.array(x) * c, b * c) == P.count_signals(np.array(x), b)


def test_sequential_two_means_estimate():
    samples = np.array([[5.0, 0.0, 0.1, -4.0]] * 3 + [[5.0, 0.2, 0.0, -4.0]] * 2)
    res = P.sequential_two_means(samples, b_tune=1.0)
    assert res.n_signals == 2 and list(res.counts) == [2] * 5
    np.testing.assert_array_equal(res.estimate, [5.0, 0.0, 0.0, -4.0])
    with pytest.raises(ValueError):
        P.sequential_two_means(samples, b_tune=-1.0)


def test_default_b_tune():
    samples = np.array([[0.0, 1.0], [2.0, 3.0]])
    assert P.default_b_tune(samples) == pytest.approx(2.0 * math.sqrt(2.0))
    assert P.default_b_tune(samples[:1]) == 0.0


# DIC

def test_dic_two_draw_hand_case():
    value, p = P.dic_from_loglik(-10.0, [-12.0, -14.0])
    assert p == 6.0 and value == 32.0
    value, p = P.dic_from_loglik(-10.0, [-10.0, -10.0])
    assert p == 0.0 and value == 20.0


def hand_store(coef_draws, effect_draws, sigma_draws, dims=(3,)):
    s = len(sigma_draws)
    meta = dict(
        label="rank1", rank_fitted=1, dims=[list(dims)], region_shapes=[list(dims)],
        iterations=s, burnin=0, thin_dic=1,
    )
    store = ChainStore(meta, effect_draws.shape[1], 1)
    for b, d, v in zip(coef_draws, effect_draws, sigma_draws):
        store.append([[np.asarray(b, float)[:, None]]], d[:, None], np.eye(1), v, np.ones((1, 1)), np.ones(1), np.ones(1), 1.0, 0.0)
    return store


def raw_loglik(y, x, b, d, v):
    return float(np.sum(stats.norm.logpdf(residuals(y, x, np.asarray(b), d), scale=math.sqrt(v))))


def test_dic_matches_raw_residual_computation():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(6)
    y = rng.standard_normal((2, 6, 3))
    bs = [np.array([1.0, 0.0, -0.5]), np.array([0.6, 0.2, -0.1])]
    ds = np.array([[0.1, -0.2], [0.3, 0.0]])
    vs = [0.9, 1.3]
    store = hand_store(bs, ds, vs)
    stats_ = [act.RegionStats.from_responses(y, x)]
    plug = raw_loglik(y, x, np.mean(bs, axis=0), ds.mean(axis=0), np.mean(vs))
    mean = np.mean([raw_loglik(y, x, b, d, v) for b, d, v in zip(bs, ds, vs)])
    expected = -2 * plug + 4 * (plug - mean)
    assert P.dic(store, stats_, stride=1) == pytest.approx(expected, rel=1e-10)

    same = hand_store([bs[0], bs[0]], np.array([ds[0], ds[0]]), [vs[0], vs[0]])
    info = P.dic(same, stats_, stride=1, details=True)
    assert info["p_dic"] == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        P.dic(hand_store(bs[:1], ds[:1], vs[:1]), stats_, stride=1)


def test_dic_prefers_the_generating_coefficients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(40)
    b = np.array([2.0, 0.0, -1.0])
    y = x[None, :, None] * b + 0.3 * rng.standard_normal((3, 40, 3))
    stats_ = [act.RegionStats.from_responses(y, x)]
    jitter = lambda c: [c + 0.01 * rng.standard_normal(3) for _ in range(4)]
    good = hand_store(jitter(b), np.zeros((4, 3)), [0.09] * 4)
    bad = hand_store(jitter(np.zeros(3)), np.zeros((4, 3)), [0.09] * 4)
    assert P.dic(good, stats_, stride=1) < P.dic(bad, stats_, stride=1)


# scores

def test_rmse_cases():
    assert P.rmse_coefficients([np.array([3.0]), np.array([[4.0]])], [np.zeros(1), np.zeros((1, 1))]) == 5.0
    a = np.arange(6.0).reshape(2, 3)
    assert P.rmse_coefficients(a, a) == 0.0
    with pytest.raises(ValueError):
        P.rmse_coefficients([np.zeros(2)], [np.zeros(3)])


def test_auc_examples():
    assert P.roc_auc([0.1, 0.2, 0.9], [0, 0, 1]) == 1.0
    assert P.roc_auc([0.9, 0.2, 0.1], [0, 0, 1]) == 0.0
    assert P.roc_auc([1.0, 1.0, 1.0, 1.0], [0, 1, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        P.roc_auc([1.0, 2.0], [1, 1])


@given(st.integers(0, 2**31), st.integers(3, 60))
def test_auc_matches_reference_and_is_monotone_invariant(seed, n):
    rng = np.random.default_rng(seed)
    mask = rng.random(n) < 0.4
    mask[0], mask[1] = True, False
    scores = np.round(rng.standard_normal(n), 1)  # ties included
    auc = P.roc_auc(scores, mask)
    assert auc == pytest.approx(roc_auc_score(mask, scores), abs=1e-12)
    assert P.roc_auc(np.exp(scores) * 3 + 1, mask) == pytest.approx(auc, abs=1e-12)


def test_interval_metrics():
    draws = np.tile(np.linspace(0, 1, 41)[:, None], (1, 2))
    length, coverage = P.interval_metrics(draws, [0.5, 2.0])
    lo, hi = np.quantile(np.linspace(0, 1, 41), [0.025, 0.975])
    assert length == pytest.approx(hi - lo) and coverage == 0.5
    rng = np.random.default_rng(2)
    draws = rng.standard_normal((2000, 4000))
    _, coverage = P.interval_metrics(draws, rng.standard_normal(4000))
    assert abs(coverage - 0.95) < 3 * math.sqrt(0.95 * 0.05 / 4000)
    with pytest.raises(ValueError):
        P.interval_metrics(draws[:39], np.zeros(4000))


def test_ess_iid_ar1_and_constant():
    rng = np.random.default_rng(3)
    n = 10_000
    assert abs(P.effective_sample_size(rng.standard_normal(n)) / n - 1) < 0.1
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - 0.81)
    for t in range(1, n):
        x[t] = 0.9 * x[t - 1] + e[t]
    assert abs(P.effective_sample_size(x) / (n * 0.1 / 1.9) - 1) < 0.2
    assert P.effective_sample_size(np.full(50, 2.0)) == 50.0
    with pytest.raises(ValueError):
        P.effective_sample_size(np.zeros(5))


def test_autocorrelation_lag_zero_is_one():
    rho = P.autocorrelation(np.random.default_rng(4).standard_normal(100))
    assert rho[0] == pytest.approx(1.0) and np.all(np.abs(rho) <= 1 + 1e-12)


# connectivity selection

def test_diagonal_precision_selects_nothing():
    sel = P.select_connectivity(np.stack([np.diag([1.0, 2.0, 3.0])] * 30))
    assert sel.pairs == [] and not sel.mask.any()
    np.testing.assert_array_equal(sel.partial_correlation, np.eye(3))


def test_strong_pair_is_selected_and_output_symmetric():
    rng = np.random.default_rng(5)
    draws = []
    for _ in range(200):
        p = np.diag([2.0, 2.0, 1.0, 1.0])
        p[0, 1] = p[1, 0] = -1.0 + 0.05 * rng.standard_normal()
        noise = 0.02 * rng.standard_normal()
        p[2, 3] = p[3, 2] = noise
        draws.append(p)
    sel = P.select_connectivity(np.array(draws))
    assert sel.pairs == [(0, 1)]
    assert np.array_equal(sel.mask, sel.mask.T) and np.array_equal(sel.precision, sel.precision.T)
    assert sel.partial_correlation[0, 1] == pytest.approx(0.5, abs=0.05)


def test_partial_correlation_draws_match_single():
    p = np.array([[2.0, -0.5], [-0.5, 1.0]])
    np.testing.assert_allclose(P.partial_correlation_draws(p[None])[0], P.partial_correlation(p))
    with pytest.raises(ValueError):
        P.select_connectivity(np.zeros((2, 3)))


# whole-chain summary

def test_summarize_reports_every_metric(small_dataset):
    store = run_chain(RunConfig(ranks=[2], iterations=80, burnin=20, seed=3, n_inner=10), small_dataset, 2)
    summary = P.summarize(store, small_dataset, small_dataset.truth, ess_cells=5)
    m = summary.metrics
    assert m["rank"] == "rank2" and np.isfinite(m["rmse_b"]) and 0 <= m["auc"] <= 1
    assert 0 <= m["ci_coverage"] <= 1 and m["ci_length"] > 0 and m["wall_hours"] > 0
    assert [x.shape for x in summary.mean] == [tuple(d) for d in small_dataset.dims]
    assert all(np.all(lo <= hi) for lo, hi in zip(summary.lower, summary.upper))
    assert 0 < summary.ess_median <= 60
    bare = P.summarize(store, small_dataset)
    assert bare.metrics["rmse_b"] is None and bare.metrics["auc"] is None
