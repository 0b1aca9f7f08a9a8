"""Pure numpy versions of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and the same tie-breaking, so the two are interchangeable.
"""

import math

import numpy as np


def ratio_test(ap, r, blocked, tol):
    """Longest feasible step along a search direction.

    Scans rows with ``ap[i] > tol`` that are not ``blocked`` and returns the
    smallest ratio ``max(r[i], 0) / ap[i]`` with its row index. Ties go to the
    lowest index. Returns ``(inf, -1)`` when no row limits the step.
    """
    mask = ap > tol
    mask &= ~blocked
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return math.inf, -1
    ratios = np.maximum(r[idx], 0.0) / ap[idx]
    j = int(np.argmin(ratios))
    return float(ratios[j]), int(idx[j])


def most_violated(r):
    """Index and value of the most negative slack, lowest index on ties."""
    if r.shape[0] == 0:
        return 0.0, -1
    j = int(np.argmin(r))
    return float(r[j]), j


def _plant_deriv(s, thrust, phi_c, theta_c, d, e_phi, e_theta, drag, coef, g):
    phi = s[6] + e_phi
    theta = s[8] + e_theta
    cphi = math.cos(phi)
    # -R e_z T + e_z g in NED with psi = 0, z flipped to height-up
    ax = -thrust * cphi * math.sin(theta)
    ay = thrust * math.sin(phi)
    az = thrust * cphi * math.cos(theta) - g
    out = np.empty(10)
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    out[3] = ax - drag[0] * s[3] + d[0]
    out[4] = ay - drag[1] * s[4] + d[1]
    out[5] = az - drag[2] * s[5] + d[2]
    out[6] = s[7]
    out[7] = -coef[0] * s[7] - coef[1] * (s[6] - phi_c)
    out[8] = s[9]
    out[9] = -coef[2] * s[9] - coef[3] * (s[8] - theta_c)
    return out


def plant_rk4(state, thrust, phi_c, theta_c, d, e_phi, e_theta, drag, coef, g, dt):
    """One RK4 step of the translational plant with attitude reference dynamics.

    ``state`` is ``[p(3), v(3), phi_r, dphi_r, theta_r, dtheta_r]`` in the
    height-up planner frame. ``coef`` holds the reference-filter coefficients
    ``(rate_phi, stiff_phi, rate_theta, stiff_theta)``.
    """
    s = np.asarray(state, dtype=float)
    args = (thrust, phi_c, theta_c, d, e_phi, e_theta, drag, coef, g)
    k1 = _plant_deriv(s, *args)
    k2 = _plant_deriv(s + 0.5 * dt * k1, *args)
    k3 = _plant_deriv(s + 0.5 * dt * k2, *args)
    k4 = _plant_deriv(s + dt * k3, *args)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
