"""Region random effects and the Bayesian graphical lasso on their precision.

Subject effects ``d_i ~ N(0, Sigma^-1)`` with a double-exponential prior on
the off-diagonal entries of ``Sigma`` (scale mixture over latent variances
``Upsilon``) and exponential priors on its diagonal, both driven by the rate
``zeta ~ Gamma(a_zeta, b_zeta)``. ``Sigma`` is updated one column at a time
with the block sampler of Wang (2012), which never touches the intractable
normalizing constant of the truncated prior.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from . import rng as rngmod

SCALE_FLOOR = 1e-12


@dataclass
class GraphHyper:
    a_zeta: float = 1.0
    b_zeta: float = 0.01

    def validate(self):
        if not (self.a_zeta > 0 and self.b_zeta > 0):
            raise ValueError("a_zeta and b_zeta must be positive")


@dataclass
class ConnectivityState:
    """``effects`` is (n, G); ``precision`` and ``scales`` are (G, G)."""

    effects: np.ndarray
    precision: np.ndarray
    scales: np.ndarray
    zeta: float

    @classmethod
    def initial(cls, n_subjects: int, n_regions: int) -> "ConnectivityState":
        scales = np.ones((n_regions, n_regions))
        np.fill_diagonal(scales, 0.0)
        return cls(
            effects=np.zeros((n_subjects, n_regions)),
            precision=np.eye(n_regions),
            scales=scales,
            zeta=1.0,
        )

    @property
    def n_regions(self) -> int:
        return self.precision.shape[0]

    def copy(self) -> "ConnectivityState":
        return ConnectivityState(
            self.effects.copy(), self.precision.copy(), self.scales.copy(), self.zeta
        )


def compute_scatter(effects: np.ndarray) -> np.ndarray:
    """S = sum_i d_i d_i' for effects stacked as rows."""
    d = np.atleast_2d(np.asarray(effects, dtype=np.float64))
    if d.shape[0] < 1:
        raise ValueError("at least one subject is required")
    return d.T @ d


def effects_conditional(
    ysum: np.ndarray,
    sx: np.ndarray,
    coef_sums: np.ndarray,
    n_voxels: np.ndarray,
    n_time: int,
    precision: np.ndarray,
    sigma2: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Canonical parameters of the subject-effect conditionals.

    ``ysum[i, g]`` is the sum of region g's responses for subject i and
    ``sx[i]`` the subject's covariate sum, so the residual total after
    removing the activation term is ``ysum - sx * sum(B_g)``. Returns the
    (n, G) linear terms and the shared (G, G) precision
    ``Sigma + T V / sigma2``.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    resid = ysum - np.outer(sx, coef_sums)
    linear = resid / sigma2
    prec = precision + np.diag(n_time * np.asarray(n_voxels, dtype=np.float64) / sigma2)
    return linear, prec


def update_effects(
    ysum: np.ndarray,
    sx: np.ndarray,
    coef_sums: np.ndarray,
    n_voxels: np.ndarray,
    n_time: int,
    precision: np.ndarray,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Fresh (n, G) effects, one multivariate normal draw per subject."""
    linear, prec = effects_conditional(ysum, sx, coef_sums, n_voxels, n_time, precision, sigma2)
    return rngmod.draw_mvn_canonical(linear, prec, rng)


def _others(g: int, size: int) -> np.ndarray:
    return np.array([k for k in range(size) if k != g], dtype=np.intp)


def column_conditional(
    precision: np.ndarray, scales: np.ndarray, zeta: float, scatter: np.ndarray, n: int, g: int
):
    """Parameters of the column-g block update.

    Returns ``(shape, rate, linear, col_prec, inv_rest)``: the Gamma law of
    the Schur complement ``delta``, the canonical Gaussian law of the
    off-diagonal column ``eta`` and ``Sigma_{-g,-g}^-1``.
    """
    size = precision.shape[0]
    shape = n / 2.0 + 1.0
    rate = (scatter[g, g] + zeta) / 2.0
    if size == 1:
        return shape, rate, None, None, None
    idx = _others(g, size)
    rest = precision[np.ix_(idx, idx)]
    chol = linalg.cholesky(rest, lower=True)
    inv_rest = linalg.cho_solve((chol, True), np.eye(size - 1))
    inv_rest = 0.5 * (inv_rest + inv_rest.T)
    col_prec = (scatter[g, g] + zeta) * inv_rest + np.diag(1.0 / scales[idx, g])
    linear = -scatter[idx, g]
    return shape, rate, linear, col_prec, inv_rest


def update_precision_column(
    precision: np.ndarray,
    scales: np.ndarray,
    zeta: float,
    scatter: np.ndarray,
    n: int,
    g: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Return a copy of ``precision`` with row and column g redrawn."""
    shape, rate, linear, col_prec, inv_rest = column_conditional(
        precision, scales, zeta, scatter, n, g
    )
    delta = float(rngmod.draw_gamma(shape, rate, rng))
    out = precision.copy()
    if linear is None:
        out[g, g] = delta
        return out
    eta = rngmod.draw_mvn_canonical(linear, col_prec, rng)
    idx = _others(g, precision.shape[0])
    out[idx, g] = eta
    out[g, idx] = eta
    out[g, g] = delta + float(eta @ inv_rest @ eta)
    return out


def latent_scale_params(precision: np.ndarray, zeta: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Upper-triangle index pair and inverse-Gaussian (mean, shape) of ``1 / Upsilon``."""
    iu = np.triu_indices(precision.shape[0], k=1)
    mag = np.maximum(np.abs(precision[iu]), SCALE_FLOOR)
    return iu, zeta / mag, zeta**2


def update_latent_scales(precision: np.ndarray, zeta: float, rng: np.random.Generator) -> np.ndarray:
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    size = precision.shape[0]
    iu, mean, shape = latent_scale_params(precision, zeta)
    scales = np.zeros((size, size))
    if mean.size:
        u = rngmod.draw_inverse_gaussian_array(mean, shape, rng)
        scales[iu] = 1.0 / u
        scales[(iu[1], iu[0])] = 1.0 / u
    return scales


def zeta_conditional(precision: np.ndarray, hyper: GraphHyper) -> tuple[float, float]:
    size = precision.shape[0]
    shape = hyper.a_zeta + size * (size + 1) / 2.0
    rate = hyper.b_zeta + float(np.sum(np.abs(precision))) / 2.0
    return shape, rate


def update_zeta(precision: np.ndarray, hyper: GraphHyper, rng: np.random.Generator) -> float:
    shape, rate = zeta_conditional(precision, hyper)
    return float(rngmod.draw_gamma(shape, rate, rng))


def sweep_graph(state: ConnectivityState, hyper: GraphHyper, rng: np.random.Generator) -> ConnectivityState:
    """Columns g = 0..G-1, then zeta (with the latent scales integrated out), then the scales."""
    scatter = compute_scatter(state.effects)
    n = state.effects.shape[0]
    precision = state.precision
    for g in range(state.n_regions):
        precision = update_precision_column(precision, state.scales, state.zeta, scatter, n, g, rng)
    state.precision = precision
    state.zeta = update_zeta(precision, hyper, rng)
    state.scales = update_latent_scales(precision, state.zeta, rng)
    return state


def partial_correlation(precision: np.ndarray) -> np.ndarray:
    """rho_kl = -Sigma_kl / sqrt(Sigma_kk Sigma_ll), unit diagonal."""
    p = np.asarray(precision, dtype=np.float64)
    diag = np.diag(p)
    if np.any(diag <= 0):
        raise ValueError("precision diagonal must be positive")
    scale = np.sqrt(diag)
    rho = -p / np.outer(scale, scale)
    np.fill_diagonal(rho, 1.0)
    return rho


def is_positive_definite(matrix: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return False
    return True


def region_totals(stats: Sequence) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack per-region response totals: ``ysum`` (n, G), ``sx`` (n,), voxel counts (G,)."""
    ysum = np.stack([s.ysum for s in stats], axis=1)
    return ysum, stats[0].sx, np.array([s.n_voxels for s in stats], dtype=np.float64)
