"""PARAFAC activation coefficients under the multiway stick-breaking prior.

Per region g the coefficient tensor is ``B_g = sum_r beta_{g,1,r} o ... o beta_{g,D,r}``
with margins ``beta_{g,j,r} ~ N(0, phi_{g,r} tau_g W_{g,j,r})``, local scales
``omega ~ Exp(lambda^2 / 2)``, rates ``lambda ~ Gamma(a_lambda, b_lambda)``,
stick weights ``phi`` built from ``xi ~ Beta(1, alpha_g)``, global scale
``tau_g ~ Gamma(a_tau, b_tau)`` and ``alpha_g`` uniform on a 10-point grid.

All likelihood work goes through per-region sufficient statistics, so one
sweep costs O(R * D * cells) per region independently of ``n * T``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .tensor_core import compose, cp_als, outer_contraction


@dataclass
class ShrinkageHyper:
    a_lambda: float
    b_lambda: float
    a_tau: float
    b_tau: float
    a_sigma: float
    b_sigma: float
    alpha_grid: np.ndarray

    @classmethod
    def defaults(cls, rank: int, ndim: int, grid_size: int = 10, **overrides) -> "ShrinkageHyper":
        a_lambda = overrides.pop("a_lambda", 3.0)
        values = dict(
            a_lambda=a_lambda,
            b_lambda=a_lambda ** (1.0 / (2 * ndim)),
            a_tau=float(ndim - 1),
            b_tau=float(rank) ** (1.0 / ndim - 1.0),
            a_sigma=1.0,
            b_sigma=-math.log(0.95),
            alpha_grid=alpha_grid(rank, ndim, grid_size),
        )
        unknown = set(overrides) - set(values)
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        values.update(overrides)
        hyper = cls(**values)
        hyper.validate()
        return hyper

    def validate(self):
        for name in ("a_lambda", "b_lambda", "a_tau", "b_tau", "a_sigma", "b_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        grid = np.asarray(self.alpha_grid, dtype=np.float64)
        if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
            raise ValueError("alpha grid must be a nonempty vector of positive values")
        self.alpha_grid = grid


def alpha_grid(rank: int, ndim: int, size: int = 10) -> np.ndarray:
    """Equally spaced grid on [R^-D, R^-0.1]; collapses to the single value 1 when R = 1."""
    lo, hi = float(rank) ** (-ndim), float(rank) ** (-0.10)
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, size)


@dataclass
class RegionStats:
    """Sufficient statistics of one region's responses.

    ``xy`` is ``sum_{i,t} x_{i,t} Y_{i,t}`` (a tensor), ``sxx`` the total
    ``sum x^2``, ``sx[i] = sum_t x_{i,t}``, ``ysum[i] = sum_{t,v} Y_{i,t,v}``
    and ``yy`` the total sum of squares.
    """

    dims: tuple[int, ...]
    xy: np.ndarray
    sxx: float
    sx: np.ndarray
    ysum: np.ndarray
    yy: float
    n_time: int

    @classmethod
    def from_responses(cls, y: np.ndarray, x: np.ndarray) -> "RegionStats":
        y = np.asarray(y, dtype=np.float64)
        n, t = y.shape[:2]
        dims = tuple(y.shape[2:])
        x = np.asarray(x, dtype=np.float64)
        xs = np.broadcast_to(x, (n, t))
        flat = y.reshape(n, t, -1)
        xy = np.einsum("it,itv->v", xs, flat).reshape(dims)
        return cls(
            dims=dims,
            xy=xy,
            sxx=float(np.sum(xs**2)),
            sx=xs.sum(axis=1),
            ysum=flat.sum(axis=(1, 2)),
            yy=float(np.sum(flat**2)),
            n_time=t,
        )

    @property
    def n_subjects(self) -> int:
        return self.sx.shape[0]

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_obs(self) -> int:
        return self.n_subjects * self.n_time * self.n_voxels

    def least_squares(self) -> np.ndarray:
        """Voxelwise least-squares coefficients with subject means as effects."""
        d_hat = self.ysum / (self.n_time * self.n_voxels)
        return (self.xy - float(np.dot(d_hat, self.sx))) / self.sxx

    def effect_cross(self, d_g: np.ndarray) -> float:
        """``sum_i d_{i,g} sum_t x_{i,t}``."""
        return float(np.dot(d_g, self.sx))

    def rss(self, coef: np.ndarray, d_g: np.ndarray) -> float:
        """Residual sum of squares of ``Y - B x - d`` over subjects, times and voxels."""
        b_sum = float(coef.sum())
        value = (
            self.yy
            - 2.0 * float(np.vdot(coef, self.xy))
            - 2.0 * float(np.dot(d_g, self.ysum))
            + self.sxx * float(np.vdot(coef, coef))
            + 2.0 * b_sum * self.effect_cross(d_g)
            + self.n_time * self.n_voxels * float(np.dot(d_g, d_g))
        )
        return max(value, 0.0)


@dataclass
class RegionState:
    margins: list[np.ndarray]
    omega: list[np.ndarray]
    lam: np.ndarray
    xi: np.ndarray
    phi: np.ndarray
    tau: float
    alpha_index: int
    xi_accepted: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.xi_accepted is None:
            self.xi_accepted = np.zeros(max(self.rank - 1, 0), dtype=np.int64)

    @property
    def rank(self) -> int:
        return self.margins[0].shape[1]

    @property
    def ndim(self) -> int:
        return len(self.margins)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.margins)

    def coefficient(self) -> np.ndarray:
        return compose(self.margins)

    def copy(self) -> "RegionState":
        return RegionState(
            margins=[m.copy() for m in self.margins],
            omega=[w.copy() for w in self.omega],
            lam=self.lam.copy(),
            xi=self.xi.copy(),
            phi=self.phi.copy(),
            tau=self.tau,
            alpha_index=self.alpha_index,
            xi_accepted=self.xi_accepted.copy(),
        )


def stick_weights(xi: np.ndarray) -> np.ndarray:
    """phi_r = xi_r prod_{l<r} (1 - xi_l), last weight takes the remaining stick."""
    xi = np.asarray(xi, dtype=np.float64)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - xi)])
    return np.concatenate([xi, [1.0]]) * remaining


INIT_SCALE = 0.01


def init_region(
    dims: Sequence[int],
    rank: int,
    hyper: ShrinkageHyper,
    rng: np.random.Generator,
    scale: float | None = None,
    target: np.ndarray | None = None,
) -> RegionState:
    """Starting state of one region.

    Margins are ``scale``-sized Gaussian noise, added to a rank-``rank`` CP
    fit of ``target`` when one is given (a data-informed start).
    """
    scale = INIT_SCALE if scale is None else scale
    margins = [scale * rng.standard_normal((p, rank)) for p in dims]
    if target is not None:
        fit = cp_als(np.asarray(target).reshape(tuple(dims)), rank, rng)
        margins = [m + f for m, f in zip(margins, fit)]
    xi = np.array([1.0 / (rank - r) for r in range(rank - 1)])
    return RegionState(
        margins=margins,
        omega=[np.ones((p, rank)) for p in dims],
        lam=np.full((len(dims), rank), hyper.a_lambda / hyper.b_lambda),
        xi=xi,
        phi=stick_weights(xi),
        tau=1.0,
        alpha_index=len(hyper.alpha_grid) // 2,
    )


def margin_quadratic_forms(state: RegionState) -> np.ndarray:
    """Q_r = sum_j beta_{j,r}' W_{j,r}^-1 beta_{j,r} for every rank."""
    return sum(np.sum(m**2 / w, axis=0) for m, w in zip(state.margins, state.omega))


# Step 1: alpha by griddy Gibbs

def alpha_log_weights(
    state: RegionState, hyper: ShrinkageHyper, n_inner: int, rng: np.random.Generator
) -> np.ndarray:
    """Monte Carlo log marginal weight of every alpha grid value.

    For each grid value, ``n_inner`` prior draws of (phi, tau) are made and
    the Gaussian log density of the margins is averaged (in the log domain)
    over them.
    """
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    grid = hyper.alpha_grid
    rank = state.rank
    q = margin_quadratic_forms(state)
    total_p = sum(state.dims)
    u = rng.random((grid.size, n_inner, rank - 1))
    tau = rng.standard_gamma(hyper.a_tau, size=(grid.size, n_inner)) / hyper.b_tau
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # 1 - xi ~ Beta(alpha, 1) = U^(1/alpha), kept on the log scale
        log_rest = np.log(u) / grid[:, None, None]
        log_xi = np.log(-np.expm1(log_rest))
        cum = np.concatenate(
            [np.zeros((grid.size, n_inner, 1)), np.cumsum(log_rest, axis=2)], axis=2
        )
        log_phi = np.concatenate([log_xi, np.zeros((grid.size, n_inner, 1))], axis=2) + cum
        log_scale = log_phi + np.log(tau)[:, :, None]
        ll = np.sum(-0.5 * total_p * log_scale - 0.5 * q * np.exp(-log_scale), axis=2)
    ll = np.where(np.isnan(ll), -np.inf, ll)
    top = np.max(ll, axis=1, keepdims=True)
    finite = np.isfinite(top[:, 0])
    out = np.full(grid.size, -np.inf)
    out[finite] = top[finite, 0] + np.log(np.mean(np.exp(ll[finite] - top[finite]), axis=1))
    return out


def sample_grid_index(log_weights: np.ndarray, rng: np.random.Generator) -> int:
    w = rngmod.normalize_log_weights(log_weights)
    if w is None:
        warnings.warn("all alpha grid weights underflowed; sampling uniformly", RuntimeWarning)
        w = np.full(len(log_weights), 1.0 / len(log_weights))
    return rngmod.draw_categorical(w, rng)


def update_alpha_griddy(
    state: RegionState, hyper: ShrinkageHyper, n_inner: int, rng: np.random.Generator
) -> int:
    """New grid index for alpha_g."""
    if hyper.alpha_grid.size == 1:
        return 0
    return sample_grid_index(alpha_log_weights(state, hyper, n_inner, rng), rng)


# Step 2: stick fractions by random-walk Metropolis-Hastings

def xi_log_target(xi: np.ndarray, r: int, q: np.ndarray, tau: float, total_p: int, alpha: float) -> float:
    """Log full conditional of xi_r (up to a constant) given every other parameter."""
    x = xi[r]
    if not 0.0 < x < 1.0:
        return -np.inf
    phi = stick_weights(xi)
    later = phi[r:]
    if np.any(later <= 0.0):
        return -np.inf
    value = np.sum(-0.5 * total_p * np.log(later) - q[r:] / (2.0 * tau * later))
    return float(value + (alpha - 1.0) * math.log1p(-x))


def update_xi_mh(
    state: RegionState,
    r: int,
    alpha: float,
    rng: np.random.Generator,
    proposal_sd: float = 0.01,
) -> tuple[float, bool]:
    """One random-walk step for xi_r; returns (value, accepted)."""
    current = float(state.xi[r])
    proposal = current + proposal_sd * rng.standard_normal()
    if not 0.0 < proposal < 1.0:
        return current, False
    q = margin_quadratic_forms(state)
    total_p = sum(state.dims)
    trial = state.xi.copy()
    trial[r] = proposal
    log_ratio = xi_log_target(trial, r, q, state.tau, total_p, alpha) - xi_log_target(
        state.xi, r, q, state.tau, total_p, alpha
    )
    u = rng.random()
    if u == 0.0 or math.log(u) < log_ratio or log_ratio == 0.0:
        return proposal, True
    return current, False


# Steps 3-5: global scale, margin rates, local scales

def tau_conditional(state: RegionState, hyper: ShrinkageHyper) -> tuple[float, float, float]:
    """GIG parameters (nu, chi, psi) of the conditional of tau_g."""
    nu = hyper.a_tau - state.rank * sum(state.dims) / 2.0
    chi = float(np.sum(margin_quadratic_forms(state) / state.phi))
    psi = 2.0 * hyper.b_tau
    return nu, chi, psi


def update_tau(state: RegionState, hyper: ShrinkageHyper, rng: np.random.Generator) -> float:
    nu, chi, psi = tau_conditional(state, hyper)
    if chi <= 0.0 and nu <= 0.0:
        warnings.warn("tau conditional has chi = 0 with nu <= 0; clamping chi", RuntimeWarning)
        chi = 1e-300
    return rngmod.draw_gig(nu, chi, psi, rng)


def lambda_conditional(state: RegionState, hyper: ShrinkageHyper) -> tuple[np.ndarray, np.ndarray]:
    """Gamma (shape, rate) arrays of shape (D, R) for the margin rates."""
    scale = np.sqrt(state.phi * state.tau)
    shape = np.array([[hyper.a_lambda + p] * state.rank for p in state.dims], dtype=np.float64)
    rate = np.stack([hyper.b_lambda + np.sum(np.abs(m), axis=0) / scale for m in state.margins])
    return shape, rate


def update_lambda(state: RegionState, hyper: ShrinkageHyper, j: int, r: int, rng: np.random.Generator) -> float:
    shape, rate = lambda_conditional(state, hyper)
    return float(rngmod.draw_gamma(shape[j, r], rate[j, r], rng))


def update_lambdas(state: RegionState, hyper: ShrinkageHyper, rng: np.random.Generator) -> np.ndarray:
    shape, rate = lambda_conditional(state, hyper)
    return rngmod.draw_gamma(shape, rate, rng)


def omega_conditional(state: RegionState, j: int) -> tuple[float, np.ndarray, np.ndarray]:
    """GIG parameters for every local scale of mode j, arrays of shape (p_j, R)."""
    chi = state.margins[j] ** 2 / (state.tau * state.phi)
    psi = np.broadcast_to(state.lam[j] ** 2, chi.shape)
    return 0.5, chi, psi


def update_omega(state: RegionState, j: int, r: int, ell: int, rng: np.random.Generator) -> float:
    nu, chi, psi = omega_conditional(state, j)
    return rngmod.draw_gig(nu, chi[ell, r], psi[ell, r], rng)


def update_omegas(state: RegionState, rng: np.random.Generator) -> list[np.ndarray]:
    """All local scales in one kernel call (mode-major, then row, then rank)."""
    chis, psis = [], []
    for j in range(state.ndim):
        _, chi, psi = omega_conditional(state, j)
        chis.append(chi.ravel())
        psis.append(psi.ravel())
    draws = rngmod.draw_gig_array(0.5, np.concatenate(chis), np.concatenate(psis), rng)
    out, start = [], 0
    for m in state.margins:
        out.append(draws[start : start + m.size].reshape(m.shape))
        start += m.size
    return out


# Step 6: margins

def margin_conditional(
    state: RegionState, stats: RegionStats, j: int, r: int, d_g: np.ndarray, sigma2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and precision (both length p_j) of the Gaussian conditional of beta_{j,r}."""
    margins = state.margins
    others = [margins[k][:, r] for k in range(state.ndim) if k != j]
    norm2 = float(np.prod([v @ v for v in others])) if others else 1.0
    prior_prec = 1.0 / (state.phi[r] * state.tau * state.omega[j][:, r])
    prec = prior_prec + stats.sxx * norm2 / sigma2

    linear = outer_contraction(stats.xy, others, j) if others else stats.xy.copy()
    other_sums = float(np.prod([v.sum() for v in others])) if others else 1.0
    linear = linear - stats.effect_cross(d_g) * other_sums
    for ell in range(state.rank):
        if ell == r:
            continue
        inner = float(
            np.prod([margins[k][:, ell] @ margins[k][:, r] for k in range(state.ndim) if k != j])
        )
        linear = linear - stats.sxx * inner * margins[j][:, ell]
    mean = linear / sigma2 / prec
    return mean, prec


def update_margin(
    state: RegionState,
    stats: RegionStats,
    j: int,
    r: int,
    d_g: np.ndarray,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    mean, prec = margin_conditional(state, stats, j, r, d_g, sigma2)
    if not np.all(prec > 0) or not np.all(np.isfinite(prec)):
        raise FloatingPointError(f"non-positive margin precision for mode {j}, rank {r}")
    return mean + rng.standard_normal(mean.shape) / np.sqrt(prec)


def sweep_region(
    state: RegionState,
    stats: RegionStats,
    d_g: np.ndarray,
    sigma2: float,
    hyper: ShrinkageHyper,
    rng: np.random.Generator,
    n_inner: int = 50,
    proposal_sd: float = 0.01,
) -> RegionState:
    """One pass of steps 1-6 for a region, in place; returns the state."""
    state.alpha_index = update_alpha_griddy(state, hyper, n_inner, rng)
    alpha = float(hyper.alpha_grid[state.alpha_index])
    for r in range(state.rank - 1):
        value, accepted = update_xi_mh(state, r, alpha, rng, proposal_sd)
        if accepted:
            state.xi[r] = value
            state.phi = stick_weights(state.xi)
            state.xi_accepted[r] += 1
    state.tau = update_tau(state, hyper, rng)
    state.lam = update_lambdas(state, hyper, rng)
    state.omega = update_omegas(state, rng)
    for r in range(state.rank):
        for j in range(state.ndim):
            state.margins[j][:, r] = update_margin(state, stats, j, r, d_g, sigma2, rng)
    return state


# Shared noise variance

def sigma_conditional(
    stats: Sequence[RegionStats], coefs: Sequence[np.ndarray], effects: np.ndarray, hyper: ShrinkageHyper
) -> tuple[float, float]:
    """Inverse-gamma (shape, scale) of the noise variance conditional."""
    n_obs = sum(s.n_obs for s in stats)
    rss = sum(s.rss(b, effects[:, g]) for g, (s, b) in enumerate(zip(stats, coefs)))
    return hyper.a_sigma + n_obs / 2.0, hyper.b_sigma + rss / 2.0


def update_sigma_y(
    stats: Sequence[RegionStats],
    coefs: Sequence[np.ndarray],
    effects: np.ndarray,
    hyper: ShrinkageHyper,
    rng: np.random.Generator,
) -> float:
    shape, scale = sigma_conditional(stats, coefs, effects, hyper)
    return float(rngmod.draw_inverse_gamma(shape, scale, rng))


# Vectorized-GDP competitor

def vectorize_stats(stats: RegionStats) -> RegionStats:
    """View a region's statistics as a one-mode tensor over its voxels."""
    return RegionStats(
        dims=(stats.n_voxels,),
        xy=stats.xy.reshape(-1),
        sxx=stats.sxx,
        sx=stats.sx,
        ysum=stats.ysum,
        yy=stats.yy,
        n_time=stats.n_time,
    )


def baseline_hyper(ndim: int, **overrides) -> ShrinkageHyper:
    """Hyperparameters of the voxelwise competitor: the rank-1 defaults of the original order."""
    hyper = ShrinkageHyper.defaults(rank=1, ndim=ndim, **overrides)
    hyper.alpha_grid = np.array([1.0])
    return hyper


def init_baseline_region(
    n_voxels: int, hyper: ShrinkageHyper, rng: np.random.Generator
) -> RegionState:
    return init_region((n_voxels,), 1, hyper, rng)


def update_vectorized_gdp(
    state: RegionState,
    stats: RegionStats,
    d_g: np.ndarray,
    sigma2: float,
    hyper: ShrinkageHyper,
    rng: np.random.Generator,
) -> RegionState:
    """One sweep of the voxelwise competitor.

    The competitor's hierarchy (b_v ~ N(0, tau omega_v), omega_v ~
    Exp(lambda^2/2), one lambda and tau per region) is exactly a rank-1,
    single-mode PARAFAC model over the vectorized region, so the same
    conditional updates apply.
    """
    if state.rank != 1 or state.ndim != 1:
        raise ValueError("baseline state must be rank 1 over a single vectorized mode")
    return sweep_region(state, stats, d_g, sigma2, hyper, rng)
