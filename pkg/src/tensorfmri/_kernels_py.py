"""Pure-Python reference implementation of the variate kernels.

Mirrors ``_kernels.pyx`` statement for statement: both consume the
underlying bit generator through the same primitives (standard uniform,
standard normal, standard gamma) in the same order, so for a given
``numpy.random.Generator`` state the two backends return identical draws.
"""
import math

import numpy as np

# Below this value of sqrt(chi * psi) the GIG is replaced by its gamma /
# inverse-gamma limit; the rejection setups overflow long before that matters.
OMEGA_FLOOR = 1e-150


def _gig_mode(lam, omega):
    if lam >= 1.0:
        return (math.sqrt((lam - 1.0) * (lam - 1.0) + omega * omega) + (lam - 1.0)) / omega
    return omega / (math.sqrt((1.0 - lam) * (1.0 - lam) + omega * omega) + (1.0 - lam))


def _rou_noshift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + math.sqrt((lam + 1.0) * (lam + 1.0) + omega * omega)) / omega
    um = math.exp(0.5 * (lam + 1.0) * math.log(ym) - s * (ym + 1.0 / ym) - nc)
    while True:
        u = um * rng.random()
        v = rng.random()
        if v == 0.0 or u == 0.0:
            continue
        x = u / v
        if math.log(v) <= t * math.log(x) - s * (x + 1.0 / x) - nc:
            return x


def _rou_shift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = (2.0 * a * a * a) / 27.0 - (a * b) / 3.0 + c
    arg = -q / (2.0 * math.sqrt(-(p * p * p) / 27.0))
    arg = min(1.0, max(-1.0, arg))
    fi = math.acos(arg)
    fak = 2.0 * math.sqrt(-p / 3.0)
    y1 = fak * math.cos(fi / 3.0) - a / 3.0
    y2 = fak * math.cos(fi / 3.0 + 4.0 / 3.0 * math.pi) - a / 3.0
    uplus = (y1 - xm) * math.exp(t * math.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * math.exp(t * math.log(y2) - s * (y2 + 1.0 / y2) - nc)
    while True:
        u = uminus + rng.random() * (uplus - uminus)
        v = rng.random()
        if v == 0.0:
            continue
        x = u / v + xm
        if x > 0.0 and math.log(v) <= t * math.log(x) - s * (x + 1.0 / x) - nc:
            return x


def _concave_hat(lam, omega, rng):
    # three-piece hat: constant on [0, x0], power on [x0, 2/omega], exponential tail
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = math.exp((lam - 1.0) * math.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    a0 = k0 * x0
    if x0 >= 2.0 / omega:
        k1 = 0.0
        a1 = 0.0
        k2 = x0 ** (lam - 1.0)
        a2 = k2 * 2.0 * math.exp(-omega * x0 / 2.0) / omega
    else:
        k1 = math.exp(-omega)
        if lam == 0.0:
            a1 = k1 * math.log(2.0 / (omega * omega))
        else:
            a1 = k1 / lam * ((2.0 / omega) ** lam - x0 ** lam)
        k2 = (2.0 / omega) ** (lam - 1.0)
        a2 = k2 * 2.0 * math.exp(-1.0) / omega
    total = a0 + a1 + a2
    while True:
        v = total * rng.random()
        if v <= a0:
            x = x0 * v / a0
            hx = k0
        else:
            v = v - a0
            if v <= a1:
                if lam == 0.0:
                    x = omega * math.exp(math.exp(omega) * v)
                    hx = k1 / x
                else:
                    x = (x0 ** lam + lam / k1 * v) ** (1.0 / lam)
                    hx = k1 * x ** (lam - 1.0)
            else:
                v = v - a1
                edge = x0 if x0 > 2.0 / omega else 2.0 / omega
                x = -2.0 / omega * math.log(math.exp(-omega / 2.0 * edge) - omega / (2.0 * k2) * v)
                hx = k2 * math.exp(-omega / 2.0 * x)
        u = rng.random() * hx
        if not x > 0.0:
            continue
        if u == 0.0 or math.log(u) <= (lam - 1.0) * math.log(x) - omega / 2.0 * (x + 1.0 / x):
            return x


def gig_one(nu, chi, psi, rng):
    """One GIG(nu, chi, psi) variate, density prop. to x^(nu-1) exp(-(chi/x + psi x)/2)."""
    if not (math.isfinite(nu) and math.isfinite(chi) and math.isfinite(psi)):
        raise ValueError(f"non-finite GIG parameters nu={nu}, chi={chi}, psi={psi}")
    if chi < 0.0 or psi < 0.0 or (chi == 0.0 and nu <= 0.0) or (psi == 0.0 and nu >= 0.0):
        raise ValueError(f"invalid GIG parameters nu={nu}, chi={chi}, psi={psi}")
    omega = math.sqrt(chi * psi)
    if omega < OMEGA_FLOOR:
        if nu > 0.0:
            return rng.standard_gamma(nu) * (2.0 / psi)
        return 1.0 / (rng.standard_gamma(-nu) * (2.0 / chi))
    lam = abs(nu)
    alpha = math.sqrt(chi / psi)
    if lam > 2.0 or omega > 3.0:
        y = _rou_shift(lam, omega, rng)
    elif lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        y = _rou_noshift(lam, omega, rng)
    else:
        y = _concave_hat(lam, omega, rng)
    return alpha / y if nu < 0.0 else alpha * y


def invgauss_one(mean, shape, rng):
    """One inverse-Gaussian variate by the transformation-with-rejection method."""
    if not (mean > 0.0 and shape > 0.0) or not (math.isfinite(mean) and math.isfinite(shape)):
        raise ValueError(f"invalid inverse-Gaussian parameters mean={mean}, shape={shape}")
    z = rng.standard_normal()
    y = mean * z * z
    # cancellation-free form of mean + mean*(y - sqrt(4*shape*y + y*y))/(2*shape)
    if y == 0.0:
        x = mean
    else:
        x = mean - 2.0 * mean * y / (y + math.sqrt(y * y + 4.0 * shape * y))
    if rng.random() * (mean + x) <= mean:
        return x
    return mean * mean / x


def gig_array(nu, chi, psi, rng):
    nu = np.ascontiguousarray(nu, dtype=np.float64)
    chi = np.ascontiguousarray(chi, dtype=np.float64)
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    out = np.empty(nu.shape[0])
    for i in range(nu.shape[0]):
        out[i] = gig_one(float(nu[i]), float(chi[i]), float(psi[i]), rng)
    return out


def invgauss_array(mean, shape, rng):
    mean = np.ascontiguousarray(mean, dtype=np.float64)
    shape = np.ascontiguousarray(shape, dtype=np.float64)
    out = np.empty(mean.shape[0])
    for i in range(mean.shape[0]):
        out[i] = invgauss_one(float(mean[i]), float(shape[i]), rng)
    return out
