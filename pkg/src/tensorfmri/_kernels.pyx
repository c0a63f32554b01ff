# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GIG and inverse-Gaussian kernels.

Statement-for-statement twin of ``_kernels_py``; draws come from the
Generator's own bit generator so both backends agree bitwise.
"""
from cpython.pycapsule cimport PyCapsule_IsValid, PyCapsule_GetPointer
from libc.math cimport sqrt, log, exp, pow, acos, cos, fabs, isfinite, M_PI
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_standard_uniform, random_standard_normal, random_standard_gamma)

import numpy as np

cdef double OMEGA_FLOOR = 1e-150


cdef bitgen_t* _bitgen(object rng) except NULL:
    capsule = rng.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("invalid bit generator")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _gig_mode(double lam, double omega) noexcept nogil:
    if lam >= 1.0:
        return (sqrt((lam - 1.0) * (lam - 1.0) + omega * omega) + (lam - 1.0)) / omega
    return omega / (sqrt((1.0 - lam) * (1.0 - lam) + omega * omega) + (1.0 - lam))


cdef double _rou_noshift(double lam, double omega, bitgen_t* bg) noexcept nogil:
    cdef double t = 0.5 * (lam - 1.0)
    cdef double s = 0.25 * omega
    cdef double xm = _gig_mode(lam, omega)
    cdef double nc = t * log(xm) - s * (xm + 1.0 / xm)
    cdef double ym = ((lam + 1.0) + sqrt((lam + 1.0) * (lam + 1.0) + omega * omega)) / omega
    cdef double um = exp(0.5 * (lam + 1.0) * log(ym) - s * (ym + 1.0 / ym) - nc)
    cdef double u, v, x
    while True:
        u = um * random_standard_uniform(bg)
        v = random_standard_uniform(bg)
        if v == 0.0 or u == 0.0:
            continue
        x = u / v
        if log(v) <= t * log(x) - s * (x + 1.0 / x) - nc:
            return x


cdef double _rou_shift(double lam, double omega, bitgen_t* bg) noexcept nogil:
    cdef double t = 0.5 * (lam - 1.0)
    cdef double s = 0.25 * omega
    cdef double xm = _gig_mode(lam, omega)
    cdef double nc = t * log(xm) - s * (xm + 1.0 / xm)
    cdef double a = -(2.0 * (lam + 1.0) / omega + xm)
    cdef double b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    cdef double c = xm
    cdef double p = b - a * a / 3.0
    cdef double q = (2.0 * a * a * a) / 27.0 - (a * b) / 3.0 + c
    cdef double arg = -q / (2.0 * sqrt(-(p * p * p) / 27.0))
    arg = min(1.0, max(-1.0, arg))
    cdef double fi = acos(arg)
    cdef double fak = 2.0 * sqrt(-p / 3.0)
    cdef double y1 = fak * cos(fi / 3.0) - a / 3.0
    cdef double y2 = fak * cos(fi / 3.0 + 4.0 / 3.0 * M_PI) - a / 3.0
    cdef double uplus = (y1 - xm) * exp(t * log(y1) - s * (y1 + 1.0 / y1) - nc)
    cdef double uminus = (y2 - xm) * exp(t * log(y2) - s * (y2 + 1.0 / y2) - nc)
    cdef double u, v, x
    while True:
        u = uminus + random_standard_uniform(bg) * (uplus - uminus)
        v = random_standard_uniform(bg)
        if v == 0.0:
            continue
        x = u / v + xm
        if x > 0.0 and log(v) <= t * log(x) - s * (x + 1.0 / x) - nc:
            return x


cdef double _concave_hat(double lam, double omega, bitgen_t* bg) noexcept nogil:
    cdef double xm = _gig_mode(lam, omega)
    cdef double x0 = omega / (1.0 - lam)
    cdef double k0 = exp((lam - 1.0) * log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    cdef double a0 = k0 * x0
    cdef double k1, a1, k2, a2, total, v, x, hx, u, edge
    if x0 >= 2.0 / omega:
        k1 = 0.0
        a1 = 0.0
        k2 = pow(x0, lam - 1.0)
        a2 = k2 * 2.0 * exp(-omega * x0 / 2.0) / omega
    else:
        k1 = exp(-omega)
        if lam == 0.0:
            a1 = k1 * log(2.0 / (omega * omega))
        else:
            a1 = k1 / lam * (pow(2.0 / omega, lam) - pow(x0, lam))
        k2 = pow(2.0 / omega, lam - 1.0)
        a2 = k2 * 2.0 * exp(-1.0) / omega
    total = a0 + a1 + a2
    while True:
        v = total * random_standard_uniform(bg)
        if v <= a0:
            x = x0 * v / a0
            hx = k0
        else:
            v = v - a0
            if v <= a1:
                if lam == 0.0:
                    x = omega * exp(exp(omega) * v)
                    hx = k1 / x
                else:
                    x = pow(pow(x0, lam) + lam / k1 * v, 1.0 / lam)
                    hx = k1 * pow(x, lam - 1.0)
            else:
                v = v - a1
                edge = x0 if x0 > 2.0 / omega else 2.0 / omega
                x = -2.0 / omega * log(exp(-omega / 2.0 * edge) - omega / (2.0 * k2) * v)
                hx = k2 * exp(-omega / 2.0 * x)
        u = random_standard_uniform(bg) * hx
        if not x > 0.0:
            continue
        if u == 0.0 or log(u) <= (lam - 1.0) * log(x) - omega / 2.0 * (x + 1.0 / x):
            return x


cdef int _gig_one(double nu, double chi, double psi, bitgen_t* bg, double* out) noexcept nogil:
    cdef double omega, lam, alpha, y
    if not (isfinite(nu) and isfinite(chi) and isfinite(psi)):
        return -1
    if chi < 0.0 or psi < 0.0 or (chi == 0.0 and nu <= 0.0) or (psi == 0.0 and nu >= 0.0):
        return -1
    omega = sqrt(chi * psi)
    if omega < OMEGA_FLOOR:
        if nu > 0.0:
            out[0] = random_standard_gamma(bg, nu) * (2.0 / psi)
        else:
            out[0] = 1.0 / (random_standard_gamma(bg, -nu) * (2.0 / chi))
        return 0
    lam = fabs(nu)
    alpha = sqrt(chi / psi)
    if lam > 2.0 or omega > 3.0:
        y = _rou_shift(lam, omega, bg)
    elif lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        y = _rou_noshift(lam, omega, bg)
    else:
        y = _concave_hat(lam, omega, bg)
    out[0] = alpha / y if nu < 0.0 else alpha * y
    return 0


cdef int _invgauss_one(double mean, double shape, bitgen_t* bg, double* out) noexcept nogil:
    cdef double z, y, x
    if not (mean > 0.0 and shape > 0.0) or not (isfinite(mean) and isfinite(shape)):
        return -1
    z = random_standard_normal(bg)
    y = mean * z * z
    if y == 0.0:
        x = mean
    else:
        x = mean - 2.0 * mean * y / (y + sqrt(y * y + 4.0 * shape * y))
    if random_standard_uniform(bg) * (mean + x) <= mean:
        out[0] = x
    else:
        out[0] = mean * mean / x
    return 0


def gig_one(double nu, double chi, double psi, rng):
    cdef bitgen_t* bg = _bitgen(rng)
    cdef double out
    cdef int status
    with rng.bit_generator.lock:
        status = _gig_one(nu, chi, psi, bg, &out)
    if status != 0:
        raise ValueError(f"invalid GIG parameters nu={nu}, chi={chi}, psi={psi}")
    return out


def invgauss_one(double mean, double shape, rng):
    cdef bitgen_t* bg = _bitgen(rng)
    cdef double out
    cdef int status
    with rng.bit_generator.lock:
        status = _invgauss_one(mean, shape, bg, &out)
    if status != 0:
        raise ValueError(f"invalid inverse-Gaussian parameters mean={mean}, shape={shape}")
    return out


def gig_array(nu, chi, psi, rng):
    cdef const double[::1] nu_v = np.ascontiguousarray(nu, dtype=np.float64)
    cdef const double[::1] chi_v = np.ascontiguousarray(chi, dtype=np.float64)
    cdef const double[::1] psi_v = np.ascontiguousarray(psi, dtype=np.float64)
    cdef Py_ssize_t n = nu_v.shape[0], i, bad = -1
    result = np.empty(n)
    cdef double[::1] out = result
    cdef bitgen_t* bg = _bitgen(rng)
    with rng.bit_generator.lock, nogil:
        for i in range(n):
            if _gig_one(nu_v[i], chi_v[i], psi_v[i], bg, &out[i]) != 0:
                bad = i
                break
    if bad >= 0:
        raise ValueError(
            f"invalid GIG parameters nu={nu_v[bad]}, chi={chi_v[bad]}, psi={psi_v[bad]}")
    return result


def invgauss_array(mean, shape, rng):
    cdef const double[::1] mean_v = np.ascontiguousarray(mean, dtype=np.float64)
    cdef const double[::1] shape_v = np.ascontiguousarray(shape, dtype=np.float64)
    cdef Py_ssize_t n = mean_v.shape[0], i, bad = -1
    result = np.empty(n)
    cdef double[::1] out = result
    cdef bitgen_t* bg = _bitgen(rng)
    with rng.bit_generator.lock, nogil:
        for i in range(n):
            if _invgauss_one(mean_v[i], shape_v[i], bg, &out[i]) != 0:
                bad = i
                break
    if bad >= 0:
        raise ValueError(
            f"invalid inverse-Gaussian parameters mean={mean_v[bad]}, shape={shape_v[bad]}")
    return result
