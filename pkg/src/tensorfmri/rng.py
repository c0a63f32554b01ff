"""Seeded random streams and the variate generators used by the sampler.

Every sampler function takes a ``numpy.random.Generator``. Streams are
derived from ``(seed, chain, stream)`` through ``numpy.random.SeedSequence``
spawn keys, so each region of each chain owns an independent, replayable
stream regardless of how work is scheduled across threads.

Stream layout used by the engine: stream 0 drives the shared updates
(noise variance, random effects, precision matrix); stream ``g + 1`` drives
region ``g``. The chain id is the fitted rank (0 for the vectorized
baseline).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._backend import kernels


@dataclass(frozen=True)
class RngHandle:
    seed: int
    stream: int = 0
    chain: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.chain, self.stream))
        return np.random.Generator(np.random.PCG64(seq))


def _check_positive(**params):
    for name, value in params.items():
        if not np.all(np.asarray(value) > 0) or not np.all(np.isfinite(value)):
            raise ValueError(f"{name} must be positive and finite, got {value}")


def draw_gamma(shape, rate, rng: np.random.Generator, size=None):
    """Gamma variate(s) parameterized by shape and rate (mean shape/rate)."""
    _check_positive(shape=shape, rate=rate)
    return rng.standard_gamma(shape, size=size) / rate


def draw_exponential(rate, rng: np.random.Generator, size=None):
    _check_positive(rate=rate)
    return rng.standard_exponential(size=size) / rate


def draw_inverse_gamma(shape, scale, rng: np.random.Generator, size=None):
    """Inverse-gamma variate(s); density prop. to x^(-shape-1) exp(-scale/x)."""
    _check_positive(shape=shape, scale=scale)
    return scale / rng.standard_gamma(shape, size=size)


def draw_beta(a, b, rng: np.random.Generator, size=None):
    _check_positive(a=a, b=b)
    return rng.beta(a, b, size=size)


def draw_gig(nu: float, chi: float, psi: float, rng: np.random.Generator) -> float:
    """Generalized inverse Gaussian variate.

    Density proportional to ``x**(nu - 1) * exp(-(chi / x + psi * x) / 2)``.
    Uses the ratio-of-uniforms family (with and without mode shift) and a
    three-piece rejection hat for the non-log-concave corner; ``chi == 0``
    and ``psi == 0`` dispatch to the gamma and inverse-gamma limits.
    """
    return kernels.gig_one(float(nu), float(chi), float(psi), rng)


def draw_gig_array(nu, chi, psi, rng: np.random.Generator) -> np.ndarray:
    """Independent GIG draws; parameters broadcast to a common shape."""
    nu, chi, psi = np.broadcast_arrays(
        np.asarray(nu, dtype=np.float64),
        np.asarray(chi, dtype=np.float64),
        np.asarray(psi, dtype=np.float64),
    )
    shape = nu.shape
    out = kernels.gig_array(nu.ravel(), chi.ravel(), psi.ravel(), rng)
    return out.reshape(shape)


def draw_inverse_gaussian(mean: float, shape: float, rng: np.random.Generator) -> float:
    return kernels.invgauss_one(float(mean), float(shape), rng)


def draw_inverse_gaussian_array(mean, shape, rng: np.random.Generator) -> np.ndarray:
    mean, shape_ = np.broadcast_arrays(
        np.asarray(mean, dtype=np.float64), np.asarray(shape, dtype=np.float64)
    )
    out = kernels.invgauss_array(mean.ravel(), shape_.ravel(), rng)
    return out.reshape(mean.shape)


def cholesky(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises ``numpy.linalg.LinAlgError`` if not PD."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    return np.linalg.cholesky(matrix)


def draw_mvn(mean, matrix, rng: np.random.Generator, precision: bool = False) -> np.ndarray:
    """Multivariate normal draw.

    With ``precision=True`` the matrix is the inverse covariance; the draw
    solves against its Cholesky factor and never forms the inverse.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    chol = cholesky(matrix)
    if chol.shape[0] != mean.shape[0]:
        raise ValueError("mean and matrix dimensions differ")
    z = rng.standard_normal(mean.shape[0])
    if precision:
        return mean + linalg.solve_triangular(chol, z, lower=True, trans="T")
    return mean + chol @ z


def draw_mvn_canonical(linear, prec, rng: np.random.Generator) -> np.ndarray:
    """Draw(s) from N(prec^-1 linear, prec^-1) with one factorization.

    ``linear`` may be a vector or a matrix whose rows are independent
    right-hand sides sharing the same precision.
    """
    linear = np.asarray(linear, dtype=np.float64)
    chol = cholesky(prec)
    rhs = linear.T if linear.ndim == 2 else linear
    mean = linalg.cho_solve((chol, True), rhs)
    z = rng.standard_normal(rhs.shape)
    draw = mean + linalg.solve_triangular(chol, z, lower=True, trans="T")
    return draw.T if linear.ndim == 2 else draw


def normalize_log_weights(log_w) -> np.ndarray | None:
    """Max-subtracted, normalized weights; ``None`` if every entry is -inf."""
    log_w = np.asarray(log_w, dtype=np.float64)
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise ValueError("log weights must be finite or -inf")
    top = np.max(log_w)
    if top == -np.inf:
        return None
    w = np.exp(log_w - top)
    return w / w.sum()


def draw_categorical(weights, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to nonnegative ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be a nonempty vector of finite nonnegative values")
    total = w.sum()
    if total <= 0:
        raise ValueError("all categorical weights are zero")
    cdf = np.cumsum(w / total)
    u = rng.random()
    return int(min(np.searchsorted(cdf, u, side="right"), w.size - 1))
