"""Timing of the compiled variate kernels against the pure-Python fallback.

Two levels are measured: the raw GIG and inverse-Gaussian array kernels,
and whole sampler sweeps on a small synthetic dataset. Both backends draw
identical variates, so the sweep timings compare equal work.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from . import rng as rngmod

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


@dataclass
class Timing:
    task: str
    backend: str
    seconds: float
    units: int

    @property
    def per_unit_us(self) -> float:
        return 1e6 * self.seconds / self.units


def available_backends() -> dict:
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


@contextlib.contextmanager
def use_backend(module):
    """Route every variate draw through ``module`` for the duration."""
    saved = rngmod.kernels
    rngmod.kernels = module
    try:
        yield
    finally:
        rngmod.kernels = saved


def _best_of(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _kernel_inputs(draws: int, seed: int):
    rng = np.random.default_rng(seed)
    # a spread of GIG regimes, as met by the local-scale updates
    nu = rng.choice([-1.5, 0.5, 0.25, 2.0], size=draws)
    chi = rng.lognormal(-2.0, 2.0, size=draws)
    psi = rng.lognormal(0.0, 1.0, size=draws)
    mean = rng.lognormal(0.0, 1.0, size=draws)
    shape = rng.lognormal(0.0, 1.0, size=draws)
    return nu, chi, psi, mean, shape


def _sweep_dataset(seed: int):
    from .simulate import SimSpec, generate_dataset, simulation_rng

    spec = SimSpec(n_subjects=8, n_time=60, n_regions=4, dim_rate=8, pairs=[(0, 1, 0.9)])
    return generate_dataset(spec, simulation_rng(seed))


def run_benchmarks(draws: int = 200_000, repeat: int = 3, sweeps: int = 20, seed: int = 0) -> list[Timing]:
    """Time each kernel and a rank-3 sampler run under every available backend."""
    from .engine import ChainRunner, RunConfig

    nu, chi, psi, mean, shape = _kernel_inputs(draws, seed)
    data = _sweep_dataset(seed)
    results = []
    for name, module in available_backends().items():
        t = _best_of(lambda: module.gig_array(nu, chi, psi, np.random.default_rng(seed)), repeat)
        results.append(Timing("gig_array", name, t, draws))
        t = _best_of(lambda: module.invgauss_array(mean, shape, np.random.default_rng(seed)), repeat)
        results.append(Timing("invgauss_array", name, t, draws))
        with use_backend(module):
            config = RunConfig(ranks=[3], iterations=sweeps, burnin=0, seed=seed)
            t = _best_of(lambda: ChainRunner(config, data, 3).run(), max(1, repeat // 2))
        results.append(Timing("sampler_sweep_rank3", name, t, sweeps))
    return results


def format_table(results: list[Timing]) -> str:
    """Plain-text table with a speedup column relative to the Python backend."""
    base = {r.task: r.seconds for r in results if r.backend == "python"}
    lines = [f"{'task':<22}{'backend':<10}{'seconds':>10}{'us/unit':>12}{'speedup':>9}"]
    for r in results:
        speedup = base[r.task] / r.seconds if r.seconds > 0 else float("nan")
        lines.append(f"{r.task:<22}{r.backend:<10}{r.seconds:>10.4f}{r.per_unit_us:>12.3f}{speedup:>8.2f}x")
    if _compiled is None:
        lines.append("(compiled extension not built; only the Python fallback was timed)")
    return "\n".join(lines)
