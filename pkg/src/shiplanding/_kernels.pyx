# cython: language_level=3
"""Compiled hot kernels. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, INFINITY

cnp.import_array()


def ratio_test(const double[::1] ap, const double[::1] r, const cnp.npy_bool[::1] blocked, double tol):
    cdef Py_ssize_t i, n = ap.shape[0], best = -1
    cdef double best_ratio = INFINITY, ratio, ri
    for i in range(n):
        if ap[i] > tol and not blocked[i]:
            ri = r[i]
            if ri < 0.0:
                ri = 0.0
            ratio = ri / ap[i]
            if ratio < best_ratio:
                best_ratio = ratio
                best = i
    return best_ratio, best


def most_violated(const double[::1] r):
    cdef Py_ssize_t i, n = r.shape[0], best = -1
    cdef double val = INFINITY
    if n == 0:
        return 0.0, -1
    for i in range(n):
        if r[i] < val:
            val = r[i]
            best = i
    return val, best


cdef inline void _deriv(double* s, double thrust, double phi_c, double theta_c,
                        const double* d, double e_phi, double e_theta,
                        const double* drag, const double* coef, double g,
                        double* out) noexcept nogil:
    cdef double phi = s[6] + e_phi
    cdef double theta = s[8] + e_theta
    cdef double cphi = cos(phi)
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    out[3] = -thrust * cphi * sin(theta) - drag[0] * s[3] + d[0]
    out[4] = thrust * sin(phi) - drag[1] * s[4] + d[1]
    out[5] = thrust * cphi * cos(theta) - g - drag[2] * s[5] + d[2]
    out[6] = s[7]
    out[7] = -coef[0] * s[7] - coef[1] * (s[6] - phi_c)
    out[8] = s[9]
    out[9] = -coef[2] * s[9] - coef[3] * (s[8] - theta_c)


def plant_rk4(state, double thrust, double phi_c, double theta_c, d,
              double e_phi, double e_theta, drag, coef, double g, double dt):
    cdef double[::1] s0 = np.ascontiguousarray(state, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef double[::1] dr = np.ascontiguousarray(drag, dtype=np.float64)
    cdef double[::1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef double k1[10]
    cdef double k2[10]
    cdef double k3[10]
    cdef double k4[10]
    cdef double tmp[10]
    cdef int i
    out = np.empty(10)
    cdef double[::1] o = out
    _deriv(&s0[0], thrust, phi_c, theta_c, &dv[0], e_phi, e_theta, &dr[0], &cf[0], g, k1)
    for i in range(10):
        tmp[i] = s0[i] + 0.5 * dt * k1[i]
    _deriv(tmp, thrust, phi_c, theta_c, &dv[0], e_phi, e_theta, &dr[0], &cf[0], g, k2)
    for i in range(10):
        tmp[i] = s0[i] + 0.5 * dt * k2[i]
    _deriv(tmp, thrust, phi_c, theta_c, &dv[0], e_phi, e_theta, &dr[0], &cf[0], g, k3)
    for i in range(10):
        tmp[i] = s0[i] + dt * k3[i]
    _deriv(tmp, thrust, phi_c, theta_c, &dv[0], e_phi, e_theta, &dr[0], &cf[0], g, k4)
    for i in range(10):
        o[i] = s0[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return out
