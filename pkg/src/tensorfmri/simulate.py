"""Synthetic multi-subject tensor time series.

Block-design stimulus convolved with a double-gamma HRF, spherical 0/1
activation supports per region, region random effects drawn from a
correlation structure with a few strongly coupled pairs, and iid Gaussian
noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .tensor_core import n_cells


@dataclass
class BlockDesign:
    period: int
    n_time: int
    z: np.ndarray


@dataclass(frozen=True)
class HrfParams:
    delay: float = 6.0
    undershoot_delay: float = 12.0
    dispersion: float = 0.9
    undershoot_dispersion: float = 0.9
    undershoot_scale: float = 0.35

    def __post_init__(self):
        if self.delay <= 0 or self.undershoot_delay <= 0:
            raise ValueError("HRF delays must be positive")
        if self.dispersion <= 0 or self.undershoot_dispersion <= 0:
            raise ValueError("HRF dispersions must be positive")
        if not 0 <= self.undershoot_scale < 1:
            raise ValueError("HRF undershoot scale must lie in [0, 1)")


@dataclass
class SimSpec:
    n_subjects: int = 20
    n_time: int = 100
    n_regions: int = 10
    ndim: int = 3
    period: int = 30
    dim_rate: float = 10.0
    dim_floor: int = 5
    dims: list[tuple[int, ...]] | None = None
    activation_cap: float = 0.05
    cnr: float = 1.0
    snr: float = 5.0
    sigma2: float = 1.0
    pairs: list[tuple[int, int, float]] = field(
        default_factory=lambda: [(0, 1, 0.9), (2, 3, 0.9)]
    )
    hrf: HrfParams = field(default_factory=HrfParams)
    hrf_length: int = 32
    center: bool = False

    def validate(self):
        positive_int = ["n_subjects", "n_time", "n_regions", "ndim", "period", "hrf_length"]
        for name in positive_int:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.period > self.n_time:
            raise ValueError("period must not exceed n_time")
        if self.dim_rate <= 0:
            raise ValueError("dim_rate must be positive")
        if not 0 < self.activation_cap < 1:
            raise ValueError("activation_cap must lie in (0, 1)")
        for name in ("cnr", "snr", "sigma2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dims is not None:
            if len(self.dims) != self.n_regions:
                raise ValueError("dims must list one shape per region")
            if any(len(d) != self.ndim or min(d) < 1 for d in self.dims):
                raise ValueError(f"every region shape needs {self.ndim} positive dims")
        for g, h, rho in self.pairs:
            if not (0 <= g < self.n_regions and 0 <= h < self.n_regions) or g == h:
                raise ValueError(f"invalid connected pair ({g}, {h})")
            if not -1 <= rho <= 1:
                raise ValueError(f"correlation {rho} outside [-1, 1]")


@dataclass
class Truth:
    coefficients: list[np.ndarray]
    effects: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray


@dataclass
class Dataset:
    """Responses ``responses[g]`` of shape ``(n, T, *dims[g])`` and covariate ``x`` of shape ``(T,)``."""

    responses: list[np.ndarray]
    covariate: np.ndarray
    truth: Truth | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_subjects(self) -> int:
        return self.responses[0].shape[0]

    @property
    def n_time(self) -> int:
        return self.responses[0].shape[1]

    @property
    def n_regions(self) -> int:
        return len(self.responses)

    @property
    def dims(self) -> list[tuple[int, ...]]:
        return [tuple(y.shape[2:]) for y in self.responses]

    @property
    def ndim(self) -> int:
        return self.responses[0].ndim - 2


def make_block_design(period: int, n_time: int) -> BlockDesign:
    """Indicator z_t = 1 iff kP < t < kP + P/2 for some k >= 0, t = 1..T."""
    if period <= 0 or n_time <= 0:
        raise ValueError("period and n_time must be positive")
    t = np.arange(1, n_time + 1)
    phase = t % period
    z = ((phase > 0) & (phase < period / 2)).astype(np.float64)
    return BlockDesign(period=period, n_time=n_time, z=z)


def _gamma_bump(t, delay, dispersion):
    peak = delay * dispersion
    return (t / peak) ** delay * np.exp(-(t - peak) / dispersion)


def hrf_kernel(params: HrfParams = HrfParams(), length: int = 32, dt: float = 1.0) -> np.ndarray:
    """Double-gamma HRF sampled at ``0, dt, ..., (length-1) dt``, peak-normalized."""
    if length <= 0 or dt <= 0:
        raise ValueError("length and dt must be positive")
    t = np.arange(length) * dt
    h = _gamma_bump(t, params.delay, params.dispersion) - params.undershoot_scale * _gamma_bump(
        t, params.undershoot_delay, params.undershoot_dispersion
    )
    peak = np.max(h)
    if not peak > 0:
        raise ValueError("kernel has no positive lobe on the sampled grid")
    return h / peak


def convolve_stimulus(z, h) -> np.ndarray:
    """Causal convolution x_t = sum_k h_k z_{t-k}, truncated to len(z)."""
    z = np.asarray(getattr(z, "z", z), dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or z.ndim != 1:
        raise ValueError("stimulus and kernel must be vectors")
    if h.size > z.size:
        raise ValueError("kernel longer than the stimulus series")
    # accumulate lag by lag so every x_t is summed in ascending k
    x = np.zeros_like(z)
    for k, hk in enumerate(h):
        x[k:] += hk * z[: z.size - k]
    return x


def make_regions(
    n_regions: int, rate: float, rng: np.random.Generator, ndim: int = 3, floor: int = 5
) -> list[tuple[int, ...]]:
    """Poisson(rate) margin lengths, each redrawn until it reaches ``floor``."""
    if n_regions < 1:
        raise ValueError("n_regions must be >= 1")
    dims = []
    for _ in range(n_regions):
        shape = []
        for _ in range(ndim):
            p = int(rng.poisson(rate))
            while p < floor:
                p = int(rng.poisson(rate))
            shape.append(p)
        dims.append(tuple(shape))
    return dims


def ball_size(radius: int, ndim: int) -> int:
    """Number of lattice points within Euclidean distance ``radius`` of the origin."""
    r = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([r] * ndim), indexing="ij")
    return int(np.sum(sum(g**2 for g in grids) <= radius**2))


def sphere_radius(dims: Sequence[int], cap: float) -> int:
    """Largest integer radius whose full ball fits in the tensor and respects the cap."""
    limit = cap * n_cells(dims)
    radius = 0
    while (
        2 * (radius + 1) + 1 <= min(dims) and ball_size(radius + 1, len(dims)) <= limit
    ):
        radius += 1
    return radius


def make_true_coefficients(
    dims: Sequence[int],
    activation_cap: float,
    rng: np.random.Generator,
    center: Sequence[int] | None = None,
    radius: int | None = None,
) -> np.ndarray:
    """0/1 tensor with one spherical support, clipped to the tensor bounds."""
    if not 0 < activation_cap < 1:
        raise ValueError("activation_cap must lie in (0, 1)")
    dims = tuple(int(p) for p in dims)
    if radius is None:
        radius = sphere_radius(dims, activation_cap)
    if center is None:
        center = [int(rng.integers(radius, p - radius)) if p > 2 * radius else p // 2 for p in dims]
    grids = np.meshgrid(*[np.arange(p) for p in dims], indexing="ij")
    dist2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return (dist2 <= radius**2).astype(np.float64)


def make_connectivity_covariance(
    n_regions: int, pairs: Sequence[tuple[int, int, float]], snr: float, sigma2: float
) -> np.ndarray:
    """Region-effect covariance: correlation rho on listed pairs, diagonal snr * sigma2."""
    corr = np.eye(n_regions)
    for g, h, rho in pairs:
        corr[g, h] = corr[h, g] = rho
    cov = snr * sigma2 * corr
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("connectivity specification is not positive definite") from exc
    return cov


def generate_dataset(spec: SimSpec, rng: np.random.Generator) -> Dataset:
    """Draw one dataset from the additive mixed-effect forward model."""
    spec.validate()
    dims = spec.dims or make_regions(spec.n_regions, spec.dim_rate, rng, spec.ndim, spec.dim_floor)
    dims = [tuple(int(p) for p in d) for d in dims]
    noise_sd = float(np.sqrt(spec.sigma2))
    amplitude = spec.cnr * noise_sd
    coefficients = [amplitude * make_true_coefficients(d, spec.activation_cap, rng) for d in dims]

    design = make_block_design(spec.period, spec.n_time)
    kernel = hrf_kernel(spec.hrf, min(spec.hrf_length, spec.n_time))
    x = convolve_stimulus(design, kernel)

    cov = make_connectivity_covariance(spec.n_regions, spec.pairs, spec.snr, spec.sigma2)
    chol = np.linalg.cholesky(cov)
    effects = rng.standard_normal((spec.n_subjects, spec.n_regions)) @ chol.T

    responses = []
    for g, (d, b) in enumerate(zip(dims, coefficients)):
        signal = x[:, None] * b.reshape(1, -1)
        noise = noise_sd * rng.standard_normal((spec.n_subjects, spec.n_time, b.size))
        y = signal[None, :, :] + effects[:, g][:, None, None] + noise
        if spec.center:
            y -= y.mean(axis=1, keepdims=True)
        responses.append(y.reshape((spec.n_subjects, spec.n_time) + d))

    truth = Truth(
        coefficients=coefficients,
        effects=effects,
        covariance=cov,
        precision=np.linalg.inv(cov),
    )
    return Dataset(responses=responses, covariate=x, truth=truth)


SIMULATION_CHAIN = 1_000_000


def simulation_rng(seed: int) -> np.random.Generator:
    """Stream used to draw a dataset; disjoint from every sampler chain."""
    return rngmod.RngHandle(seed, stream=0, chain=SIMULATION_CHAIN).generator()
