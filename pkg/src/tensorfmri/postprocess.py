"""Posterior summaries, selection and scoring.

Sequential 2-means signal detection, DIC, coefficient RMSE, ROC AUC,
credible-interval length and coverage, effective sample size and the
connectivity selection on precision-matrix draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .connectivity import partial_correlation
from .engine import ChainStore, log_likelihood, region_stats
from .simulate import Dataset, Truth


# Sequential 2-means

def two_means_split(values: np.ndarray) -> tuple[np.ndarray, float, float] | None:
    """Optimal 1-D 2-means split of ``values``.

    Returns ``(high_mask, low_center, high_center)`` or ``None`` when the
    values are all equal. Exact: for sorted data the optimal clusters are
    contiguous, so every cut point is scanned.
    """
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = xs.size
    if n < 2 or xs[0] == xs[-1]:
        return None
    csum = np.cumsum(xs)
    csq = np.cumsum(xs**2)
    k = np.arange(1, n)  # size of the low cluster
    low_mean = csum[:-1] / k
    high_mean = (csum[-1] - csum[:-1]) / (n - k)
    sse = (csq[:-1] - k * low_mean**2) + ((csq[-1] - csq[:-1]) - (n - k) * high_mean**2)
    # cuts between tied values are not real partitions
    sse = np.where(xs[1:] > xs[:-1], sse, np.inf)
    best = int(np.argmin(sse))
    high = np.zeros(n, dtype=bool)
    high[order[best + 1 :]] = True
    return high, float(low_mean[best]), float(high_mean[best])


def count_signals(values: np.ndarray, b_tune: float) -> int:
    """Number of entries peeled off as signal by repeated 2-means on magnitudes."""
    candidates = np.abs(np.asarray(values, dtype=np.float64))
    count = 0
    while candidates.size >= 2:
        split = two_means_split(candidates)
        if split is None:
            break
        high, low_c, high_c = split
        if high_c - low_c <= b_tune:
            break
        count += int(high.sum())
        candidates = candidates[~high]
    return count


ACTIVATION_B_MULTIPLIER = 2.0
CONNECTIVITY_B_MULTIPLIER = 1.5


def default_b_tune(samples: np.ndarray, multiplier: float = ACTIVATION_B_MULTIPLIER) -> float:
    """``multiplier`` times the pooled across-draw standard deviation of the coordinates."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 2:
        return 0.0
    return multiplier * float(np.sqrt(np.mean(np.var(samples, axis=0, ddof=1))))


@dataclass
class TwoMeansResult:
    counts: np.ndarray
    n_signals: int
    estimate: np.ndarray
    mask: np.ndarray
    b_tune: float


def sequential_two_means(samples, b_tune: float | None = None) -> TwoMeansResult:
    """Signal count per draw and the sparse posterior-median estimate.

    ``samples`` is (S, p). The final count H is the rounded posterior median
    of the per-draw counts; the estimate keeps the H largest-magnitude
    entries of the posterior median and zeroes the rest.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 1 or samples.shape[1] < 1:
        raise ValueError("need at least one draw of at least one coordinate")
    if b_tune is None:
        b_tune = default_b_tune(samples)
    if b_tune < 0:
        raise ValueError("b_tune must be nonnegative")
    counts = np.array([count_signals(row, b_tune) for row in samples])
    n_signals = int(np.floor(np.median(counts) + 0.5))
    median = np.median(samples, axis=0)
    mask = np.zeros(samples.shape[1], dtype=bool)
    if n_signals > 0:
        top = np.argsort(-np.abs(median), kind="stable")[:n_signals]
        mask[top] = True
    estimate = np.where(mask, median, 0.0)
    return TwoMeansResult(counts, n_signals, estimate, mask, float(b_tune))


# DIC

def dic_from_loglik(plugin_loglik: float, draw_logliks: Sequence[float]) -> tuple[float, float]:
    """(DIC, p_DIC) from the plug-in log-likelihood and per-draw log-likelihoods."""
    draws = np.asarray(draw_logliks, dtype=np.float64)
    if draws.size < 1:
        raise ValueError("no draws")
    p_dic = 2.0 * (plugin_loglik - float(np.mean(draws)))
    return -2.0 * plugin_loglik + 2.0 * p_dic, p_dic


def plugin_estimates(store: ChainStore, indices=None):
    """Posterior means of B_g (per region), effects and sigma2 over the given records."""
    if indices is None:
        indices = store.kept()
    if len(indices) == 0:
        raise ValueError("empty chain")
    coefs = [store.coefficient_draws(g, indices).mean(axis=0) for g in range(store.n_regions)]
    return coefs, store.effects[indices].mean(axis=0), float(store.sigma2[indices].mean())


def dic(store: ChainStore, data, stride: int | None = None, details: bool = False):
    """DIC with posterior-mean plug-ins and the stride-thinned draw average.

    ``data`` is a Dataset or its per-region sufficient statistics.
    """
    stats = region_stats(data) if isinstance(data, Dataset) else data
    stride = store.meta.get("thin_dic", 4) if stride is None else stride
    thinned = store.kept(stride)
    if len(thinned) < 2:
        raise ValueError("DIC needs at least two thinned post-burn-in draws")
    coefs, effects, sigma2 = plugin_estimates(store)
    plugin = log_likelihood(stats, coefs, effects, sigma2)
    draws = [
        log_likelihood(
            stats,
            [store.coefficient(g, s) for g in range(store.n_regions)],
            store.effects[s],
            store.sigma2[s],
        )
        for s in thinned
    ]
    value, p_dic = dic_from_loglik(plugin, draws)
    if details:
        return {"dic": value, "p_dic": p_dic, "plugin_loglik": plugin, "mean_loglik": float(np.mean(draws))}
    return value


# Scores

def rmse_coefficients(estimate, truth) -> float:
    """sqrt(sum_g sum_v (Bbar_{g,v} - B0_{g,v})^2) over lists of region tensors."""
    if isinstance(estimate, np.ndarray):
        estimate, truth = [estimate], [truth]
    if len(estimate) != len(truth):
        raise ValueError("estimate and truth cover different region counts")
    total = 0.0
    for e, t in zip(estimate, truth):
        e = np.asarray(e, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if e.shape != t.shape:
            raise ValueError(f"shape mismatch {e.shape} vs {t.shape}")
        total += float(np.sum((e - t) ** 2))
    return math.sqrt(total)


def roc_auc(scores, truth_mask) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    mask = np.asarray(truth_mask).ravel().astype(bool)
    if scores.shape != mask.shape:
        raise ValueError("scores and mask differ in size")
    n_pos = int(mask.sum())
    n_neg = mask.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("truth mask needs at least one positive and one negative")
    ranks = sps.rankdata(scores)
    return float((ranks[mask].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


MIN_INTERVAL_DRAWS = 40


def interval_metrics(draws, truth, level: float = 0.95) -> tuple[float, float]:
    """Mean length and coverage of equal-tailed credible intervals, per cell."""
    draws = np.asarray(draws, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64).ravel()
    draws = draws.reshape(draws.shape[0], -1)
    if draws.shape[0] < MIN_INTERVAL_DRAWS:
        raise ValueError(f"interval metrics need at least {MIN_INTERVAL_DRAWS} draws")
    if draws.shape[1] != truth.size:
        raise ValueError("draws and truth differ in cell count")
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(draws, [tail, 1.0 - tail], axis=0)
    covered = (truth >= lower) & (truth <= upper)
    return float(np.mean(upper - lower)), float(np.mean(covered))


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    centered = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(series) -> float:
    """Initial-positive-sequence ESS, capped at the series length."""
    x = np.asarray(series, dtype=np.float64).ravel()
    n = x.size
    if n < 10:
        raise ValueError("ESS needs a series of length >= 10")
    if np.all(x == x[0]) or not np.var(x) > 0:
        return float(n)
    rho = autocorrelation(x)
    total = 0.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        total += pair
    tau = 2.0 * total - 1.0
    if not tau > 0:
        return float(n)
    return float(min(n / tau, n))


# Connectivity selection

@dataclass
class ConnectivitySelection:
    mask: np.ndarray
    precision: np.ndarray
    partial_correlation: np.ndarray
    pairs: list[tuple[int, int]]
    counts: np.ndarray = field(repr=False, default=None)


def partial_correlation_draws(precision_draws: np.ndarray) -> np.ndarray:
    """Partial-correlation matrix of every precision draw, shape (S, G, G)."""
    draws = np.asarray(precision_draws, dtype=np.float64)
    diag = np.einsum("sii->si", draws)
    if np.any(diag <= 0):
        raise ValueError("precision draws must have a positive diagonal")
    scale = np.sqrt(diag)
    rho = -draws / scale[:, :, None] / scale[:, None, :]
    idx = np.arange(draws.shape[1])
    rho[:, idx, idx] = 1.0
    return rho


def select_connectivity(precision_draws, b_tune: float | None = None) -> ConnectivitySelection:
    """Sequential 2-means over region pairs, then partial correlations of the sparse median.

    Each draw is first mapped to partial correlations so that pairs of
    regions with very different effect variances are compared on one scale;
    the 2-means runs on their upper-triangle entries. Selected pairs keep the
    posterior-median precision entry, the others are zeroed, and the result
    is converted to partial correlations.
    """
    draws = np.asarray(precision_draws, dtype=np.float64)
    if draws.ndim != 3 or draws.shape[0] < 1 or draws.shape[1] != draws.shape[2]:
        raise ValueError("expected a (S, G, G) stack of precision draws")
    size = draws.shape[1]
    median = np.median(draws, axis=0)
    mask = np.zeros((size, size), dtype=bool)
    counts = np.zeros(draws.shape[0], dtype=int)
    iu = np.triu_indices(size, k=1)
    if iu[0].size:
        rho = partial_correlation_draws(draws)[:, iu[0], iu[1]]
        if b_tune is None:
            b_tune = default_b_tune(rho, CONNECTIVITY_B_MULTIPLIER)
        result = sequential_two_means(rho, b_tune)
        counts = result.counts
        mask[iu] = result.mask
        mask = mask | mask.T
    estimate = np.where(mask | np.eye(size, dtype=bool), median, 0.0)
    pairs = [(int(a), int(b)) for a, b in zip(*iu) if mask[a, b]]
    return ConnectivitySelection(mask, estimate, partial_correlation(estimate), pairs, counts)


# Whole-chain summary

@dataclass
class PosteriorSummary:
    label: str
    rank: int
    mean: list[np.ndarray]
    median: list[np.ndarray]
    lower: list[np.ndarray]
    upper: list[np.ndarray]
    mask: list[np.ndarray]
    n_signals: int
    connectivity: ConnectivitySelection
    dic: float
    p_dic: float
    ess_median: float
    wall_hours: float
    metrics: dict


def summarize(
    store: ChainStore,
    dataset: Dataset,
    truth: Truth | None = None,
    b_tune: float | None = None,
    thin_dic: int | None = None,
    ess_cells: int | None = None,
) -> PosteriorSummary:
    """Everything reported for one fitted model.

    Metrics use all post-burn-in draws; only DIC thins. ``ess_cells``
    limits the ESS median to the first that many cells per region. Interval
    metrics are left as None when fewer than 40 draws are kept.
    """
    kept = store.kept()
    shapes = [tuple(s) for s in store.meta["region_shapes"]]
    draws = [store.coefficient_draws(g, kept) for g in range(store.n_regions)]
    mean = [d.mean(axis=0).reshape(s) for d, s in zip(draws, shapes)]
    median = [np.median(d, axis=0).reshape(s) for d, s in zip(draws, shapes)]
    lower = [np.quantile(d, 0.025, axis=0).reshape(s) for d, s in zip(draws, shapes)]
    upper = [np.quantile(d, 0.975, axis=0).reshape(s) for d, s in zip(draws, shapes)]

    joint = np.concatenate(draws, axis=1)
    selection = sequential_two_means(joint, b_tune)
    bounds = np.cumsum([0] + [int(np.prod(s)) for s in shapes])
    mask = [selection.mask[bounds[g] : bounds[g + 1]].reshape(shapes[g]) for g in range(len(shapes))]

    connectivity = select_connectivity(store.precision[kept], None)
    info = dic(store, dataset, thin_dic, details=True)

    ess = []
    for d in draws:
        cols = d if ess_cells is None else d[:, :ess_cells]
        ess.extend(effective_sample_size(c) for c in cols.T)
    ess_median = float(np.median(ess)) if ess else float("nan")

    metrics = {
        "rank": store.label,
        "log_dic": math.log(info["dic"]) if info["dic"] > 0 else float("nan"),
        "rmse_b": None,
        "auc": None,
        "ci_length": None,
        "ci_coverage": None,
        "wall_hours": float(store.sweep_seconds[: store.n_records].sum() / 3600.0),
    }
    if truth is not None:
        flat_truth = np.concatenate([np.ravel(t) for t in truth.coefficients])
        metrics["rmse_b"] = rmse_coefficients(mean, truth.coefficients)
        active = flat_truth != 0
        if active.any() and (~active).any():
            metrics["auc"] = roc_auc(np.abs(np.concatenate([m.ravel() for m in mean])), active)
        if joint.shape[0] >= MIN_INTERVAL_DRAWS:
            length, coverage = interval_metrics(joint, flat_truth)
            metrics["ci_length"] = length
            metrics["ci_coverage"] = coverage

    return PosteriorSummary(
        label=store.label,
        rank=store.rank,
        mean=mean,
        median=median,
        lower=lower,
        upper=upper,
        mask=mask,
        n_signals=selection.n_signals,
        connectivity=connectivity,
        dic=info["dic"],
        p_dic=info["p_dic"],
        ess_median=ess_median,
        wall_hours=metrics["wall_hours"],
        metrics=metrics,
    )
