"""Chain orchestration: sweep scheduling, storage, checkpoints and rank sweeps.

One sweep runs, in order: the region activation updates (concurrently over
regions, each with its own RNG stream), the shared noise variance (a barrier
over all regions), the subject effects, and the graphical-lasso block
updates. Results depend only on the seed and config, never on the number
of workers.
"""
from __future__ import annotations

import math
import os
import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import activation as act
from . import connectivity as conn
from .rng import RngHandle
from .simulate import Dataset
from .tensor_core import compose

HYPER_KEYS = ("a_lambda", "b_lambda", "a_tau", "b_tau", "a_sigma", "b_sigma", "a_zeta", "b_zeta")
BASELINE = "vectorized"
INIT_MODES = ("least_squares", "small")


class ChainError(RuntimeError):
    """A sampler failure, tagged with the iteration at which it happened."""

    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"chain failed at iteration {iteration}: {cause!r}")
        self.iteration = iteration
        self.cause = cause


@dataclass
class RunConfig:
    ranks: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    iterations: int = 1100
    burnin: int = 100
    thin_dic: int = 4
    seed: int = 0
    workers: int = 1
    baseline: bool = False
    hyper: dict = field(default_factory=dict)
    n_inner: int = 50
    proposal_sd: float = 0.01
    checkpoint_every: int = 0
    b_tune: float | None = None
    init: str = "least_squares"

    def validate(self):
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if not self.ranks and not self.baseline:
            raise ValueError("ranks: at least one rank (or the baseline) is required")
        if any(int(r) < 1 for r in self.ranks):
            raise ValueError("ranks: every rank must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("burnin must satisfy 0 <= burnin < iterations")
        if self.thin_dic < 1:
            raise ValueError("thin_dic must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.n_inner < 1:
            raise ValueError("n_inner must be >= 1")
        if not self.proposal_sd > 0:
            raise ValueError("proposal_sd must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if self.b_tune is not None and not self.b_tune > 0:
            raise ValueError("b_tune must be positive")
        unknown = set(self.hyper) - set(HYPER_KEYS)
        if unknown:
            raise ValueError(f"hyper: unknown keys {sorted(unknown)}")
        for key, value in self.hyper.items():
            if not float(value) > 0:
                raise ValueError(f"hyper.{key} must be positive")

    def shrinkage_hyper(self, rank: int, ndim: int) -> act.ShrinkageHyper:
        over = {k: float(v) for k, v in self.hyper.items() if k not in ("a_zeta", "b_zeta")}
        return act.ShrinkageHyper.defaults(rank, ndim, **over)

    def baseline_hyper(self, ndim: int) -> act.ShrinkageHyper:
        over = {k: float(v) for k, v in self.hyper.items() if k not in ("a_zeta", "b_zeta")}
        return act.baseline_hyper(ndim, **over)

    def graph_hyper(self) -> conn.GraphHyper:
        hyper = conn.GraphHyper(
            a_zeta=float(self.hyper.get("a_zeta", 1.0)), b_zeta=float(self.hyper.get("b_zeta", 0.01))
        )
        hyper.validate()
        return hyper


class ChainStore:
    """Append-only record of every sweep of one chain.

    Margins are stored per region as a ``(S, sum_j p_j, R)`` array (modes
    stacked along the first axis); coefficient tensors are composed on
    demand. ``sweep_seconds`` is wall-clock and is excluded from equality.
    """

    def __init__(self, meta: dict, n_subjects: int, n_regions: int):
        self.meta = dict(meta)
        s = int(meta["iterations"])
        rank = int(meta["rank_fitted"])
        self.dims = [tuple(d) for d in meta["dims"]]
        self.margins = [np.zeros((s, sum(d), rank)) for d in self.dims]
        self.effects = np.zeros((s, n_subjects, n_regions))
        self.precision = np.zeros((s, n_regions, n_regions))
        self.sigma2 = np.zeros(s)
        self.phi = np.zeros((s, n_regions, rank))
        self.tau = np.zeros((s, n_regions))
        self.alpha = np.zeros((s, n_regions))
        self.zeta = np.zeros(s)
        self.sweep_seconds = np.zeros(s)
        self.n_records = 0

    ARRAYS = ("effects", "precision", "sigma2", "phi", "tau", "alpha", "zeta")

    @property
    def iterations(self) -> int:
        return int(self.meta["iterations"])

    @property
    def burnin(self) -> int:
        return int(self.meta["burnin"])

    @property
    def rank(self) -> int:
        return int(self.meta["rank_fitted"])

    @property
    def label(self) -> str:
        return str(self.meta["label"])

    @property
    def n_regions(self) -> int:
        return len(self.dims)

    def append(self, margins, effects, precision, sigma2, phi, tau, alpha, zeta, seconds):
        s = self.n_records
        if s >= self.iterations:
            raise IndexError("chain store is full")
        for g, m in enumerate(margins):
            self.margins[g][s] = np.concatenate(m, axis=0)
        self.effects[s] = effects
        self.precision[s] = precision
        self.sigma2[s] = sigma2
        self.phi[s] = phi
        self.tau[s] = tau
        self.alpha[s] = alpha
        self.zeta[s] = zeta
        self.sweep_seconds[s] = seconds
        self.n_records += 1

    def is_burnin(self) -> np.ndarray:
        return np.arange(self.iterations) < self.burnin

    def kept(self, stride: int = 1) -> np.ndarray:
        """Post-burn-in record indices, every ``stride``-th one."""
        return np.arange(self.burnin, self.n_records, stride)

    def region_margins(self, g: int, s: int) -> list[np.ndarray]:
        flat = self.margins[g][s]
        bounds = np.cumsum((0,) + self.dims[g])
        return [flat[bounds[j] : bounds[j + 1]] for j in range(len(self.dims[g]))]

    def coefficient(self, g: int, s: int) -> np.ndarray:
        """B_g at record s, in the region's original tensor shape."""
        return compose(self.region_margins(g, s)).reshape(self.meta["region_shapes"][g])

    def coefficient_draws(self, g: int, indices: Sequence[int] | None = None) -> np.ndarray:
        """Stack of composed B_g over the given records, shape (S', n_cells)."""
        if indices is None:
            indices = self.kept()
        return np.stack([self.coefficient(g, s).ravel() for s in indices]) if len(indices) else np.zeros((0, 0))

    def equal_draws(self, other: "ChainStore") -> bool:
        """Bitwise equality of every sampled quantity (timings excluded)."""
        if self.n_records != other.n_records or self.dims != other.dims:
            return False
        if any(not np.array_equal(a, b) for a, b in zip(self.margins, other.margins)):
            return False
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self.ARRAYS)


def region_stats(dataset: Dataset) -> list[act.RegionStats]:
    return [act.RegionStats.from_responses(y, dataset.covariate) for y in dataset.responses]


def log_likelihood(
    stats: Sequence[act.RegionStats] | Dataset,
    coefs: Sequence[np.ndarray],
    effects: np.ndarray,
    sigma2: float,
) -> float:
    """Gaussian log-likelihood of all cells under the additive mixed-effect model."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if isinstance(stats, Dataset):
        stats = region_stats(stats)
    n_obs = sum(s.n_obs for s in stats)
    rss = 0.0
    for g, (s, b) in enumerate(zip(stats, coefs)):
        b = np.asarray(b, dtype=np.float64).reshape(s.dims)
        rss += s.rss(b, effects[:, g])
    return -0.5 * n_obs * math.log(2 * math.pi * sigma2) - rss / (2.0 * sigma2)


@dataclass
class _ChainState:
    regions: list[act.RegionState]
    graph: conn.ConnectivityState
    sigma2: float
    iteration: int
    rng_states: list[dict]


class ChainRunner:
    """Sampler for one fitted model (a PARAFAC rank or the vectorized baseline)."""

    def __init__(self, config: RunConfig, dataset: Dataset, rank: int | None):
        config.validate()
        self.config = config
        self.dataset = dataset
        self.baseline = rank is None
        self.label = BASELINE if self.baseline else f"rank{rank}"
        self.rank = 1 if self.baseline else int(rank)
        self.chain_id = 0 if self.baseline else self.rank
        self.shapes = dataset.dims
        ndim = dataset.ndim
        raw = region_stats(dataset)
        if self.baseline:
            self.stats = [act.vectorize_stats(s) for s in raw]
            self.hyper = config.baseline_hyper(ndim)
        else:
            self.stats = raw
            self.hyper = config.shrinkage_hyper(self.rank, ndim)
        self.graph_hyper = config.graph_hyper()
        self.ysum, self.sx, self.n_voxels = conn.region_totals(self.stats)
        self.rngs = [
            RngHandle(config.seed, stream=k, chain=self.chain_id).generator()
            for k in range(dataset.n_regions + 1)
        ]
        self.state = self._initial_state()
        self.store = ChainStore(self._meta(), dataset.n_subjects, dataset.n_regions)

    def _meta(self) -> dict:
        return {
            "label": self.label,
            "kind": BASELINE if self.baseline else "parafac",
            "rank_fitted": self.rank,
            "dims": [list(s.dims) for s in self.stats],
            "region_shapes": [list(d) for d in self.shapes],
            "iterations": self.config.iterations,
            "burnin": self.config.burnin,
            "thin_dic": self.config.thin_dic,
            "seed": self.config.seed,
            "chain_id": self.chain_id,
            "n_inner": self.config.n_inner,
            "proposal_sd": self.config.proposal_sd,
            "init": self.config.init,
            "hyper": {
                "a_lambda": self.hyper.a_lambda,
                "b_lambda": self.hyper.b_lambda,
                "a_tau": self.hyper.a_tau,
                "b_tau": self.hyper.b_tau,
                "a_sigma": self.hyper.a_sigma,
                "b_sigma": self.hyper.b_sigma,
                "a_zeta": self.graph_hyper.a_zeta,
                "b_zeta": self.graph_hyper.b_zeta,
                "alpha_grid": [float(a) for a in self.hyper.alpha_grid],
            },
        }

    def _initial_state(self) -> _ChainState:
        regions = [
            act.init_region(
                s.dims,
                self.rank,
                self.hyper,
                self.rngs[g + 1],
                target=s.least_squares() if self.config.init == "least_squares" else None,
            )
            for g, s in enumerate(self.stats)
        ]
        n_obs = sum(s.n_obs for s in self.stats)
        sigma2 = sum(s.yy for s in self.stats) / n_obs
        graph = conn.ConnectivityState.initial(self.dataset.n_subjects, self.dataset.n_regions)
        return _ChainState(regions, graph, sigma2, 0, [])

    def _region_task(self, g: int):
        st = self.state
        act.sweep_region(
            st.regions[g],
            self.stats[g],
            st.graph.effects[:, g],
            st.sigma2,
            self.hyper,
            self.rngs[g + 1],
            n_inner=self.config.n_inner,
            proposal_sd=self.config.proposal_sd,
        )

    def sweep(self, pool: ThreadPoolExecutor | None = None):
        st = self.state
        regions = range(len(self.stats))
        if pool is None:
            for g in regions:
                self._region_task(g)
        else:
            for future in [pool.submit(self._region_task, g) for g in regions]:
                future.result()
        coefs = [r.coefficient() for r in st.regions]
        rng0 = self.rngs[0]
        st.sigma2 = act.update_sigma_y(self.stats, coefs, st.graph.effects, self.hyper, rng0)
        coef_sums = np.array([b.sum() for b in coefs])
        st.graph.effects = conn.update_effects(
            self.ysum, self.sx, coef_sums, self.n_voxels, self.stats[0].n_time,
            st.graph.precision, st.sigma2, rng0,
        )
        conn.sweep_graph(st.graph, self.graph_hyper, rng0)
        st.iteration += 1

    def record(self, seconds: float):
        st = self.state
        self.store.append(
            [r.margins for r in st.regions],
            st.graph.effects,
            st.graph.precision,
            st.sigma2,
            np.stack([r.phi for r in st.regions]),
            np.array([r.tau for r in st.regions]),
            np.array([self.hyper.alpha_grid[r.alpha_index] for r in st.regions]),
            st.graph.zeta,
            seconds,
        )

    def checkpoint(self, path: str | os.PathLike):
        self.state.rng_states = [r.bit_generator.state for r in self.rngs]
        payload = {"label": self.label, "seed": self.config.seed, "state": self.state, "store": self.store}
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)
        os.replace(tmp, path)

    def restore(self, path: str | os.PathLike):
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        if payload["label"] != self.label or payload["seed"] != self.config.seed:
            raise ValueError(f"checkpoint {path} belongs to a different chain")
        if payload["store"].iterations != self.config.iterations:
            raise ValueError("checkpoint iteration count differs from the config")
        self.state = payload["state"]
        self.store = payload["store"]
        for r, s in zip(self.rngs, self.state.rng_states):
            r.bit_generator.state = s

    def run(self, checkpoint_path=None, resume: bool = False, stop_after: int | None = None) -> ChainStore:
        """Run to completion (or until ``stop_after`` sweeps, for interruption tests)."""
        if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
            self.restore(checkpoint_path)
        every = self.config.checkpoint_every
        pool = ThreadPoolExecutor(self.config.workers) if self.config.workers > 1 else None
        try:
            while self.state.iteration < self.config.iterations:
                if stop_after is not None and self.state.iteration >= stop_after:
                    break
                start = time.perf_counter()
                try:
                    self.sweep(pool)
                    self._check_finite()
                except Exception as exc:
                    raise ChainError(self.state.iteration + 1, exc) from exc
                self.record(time.perf_counter() - start)
                if checkpoint_path is not None and every and self.state.iteration % every == 0:
                    self.checkpoint(checkpoint_path)
        finally:
            if pool is not None:
                pool.shutdown()
        return self.store

    def _check_finite(self):
        st = self.state
        values = [st.sigma2, st.graph.zeta] + [r.tau for r in st.regions]
        if not all(np.isfinite(values)) or not np.all(np.isfinite(st.graph.precision)):
            raise FloatingPointError("non-finite parameter")
        for r in st.regions:
            if not all(np.all(np.isfinite(m)) for m in r.margins):
                raise FloatingPointError("non-finite margin")


def run_chain(
    config: RunConfig,
    dataset: Dataset,
    rank: int | None,
    checkpoint_path=None,
    resume: bool = False,
) -> ChainStore:
    """One chain for ``rank`` (``None`` fits the vectorized baseline)."""
    return ChainRunner(config, dataset, rank).run(checkpoint_path, resume)


def fit_rank_sweep(config: RunConfig, dataset: Dataset) -> dict:
    """One chain per configured rank (plus the baseline if flagged) and a DIC table.

    Returns ``{"chains": {label: ChainStore}, "dic": {label: value},
    "best": label of the lowest-DIC PARAFAC fit (or the baseline if alone)}``.
    """
    from .postprocess import dic

    config.validate()
    stats = region_stats(dataset)
    chains, table = {}, {}
    models = [int(r) for r in config.ranks] + ([None] if config.baseline else [])
    for rank in models:
        store = run_chain(config, dataset, rank)
        chains[store.label] = store
        table[store.label] = dic(store, stats, config.thin_dic)
    ranked = [k for k in table if k != BASELINE] or list(table)
    best = min(ranked, key=lambda k: table[k])
    return {"chains": chains, "dic": table, "best": best}


def config_dict(config: RunConfig) -> dict:
    return asdict(config)
