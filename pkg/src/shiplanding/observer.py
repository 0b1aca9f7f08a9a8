"""Disturbance observer, ancillary feedback law and the augmented error system."""

from dataclasses import dataclass

import numpy as np

from . import model


class StabilityError(ValueError):
    pass


# default gains, per-axis order [p, v, a_r, j_r, dbar] and [p_z, v_z, dbar_z]
K_LON = (0.6, 1.4, 0.5, 0.0, 0.5)
K_LAT = (0.4, 1.0, 0.5, 0.0, 0.5)
K_VERT = (2.0, 3.0, 0.0)
K_D = (1.5, 1.5, 1.0)
OBSERVER_POLE = 0.8


@dataclass(frozen=True, eq=False)
class AncillaryGains:
    K: np.ndarray
    K_d: np.ndarray


@dataclass(frozen=True, eq=False)
class ObserverState:
    s: np.ndarray
    L: np.ndarray


def default_gains(k_lon=K_LON, k_lat=K_LAT, k_vert=K_VERT, k_d=K_D):
    K = np.zeros((model.N_INPUT, model.N_STATE))
    lon, lat, vert = model.axis_blocks()
    K[0, lon] = k_lon
    K[1, lat] = k_lat
    K[2, vert] = k_vert
    return AncillaryGains(K, np.diag(np.asarray(k_d, dtype=float)))


def velocity_observer_gain(sys, pole=OBSERVER_POLE):
    """``L`` reading only velocity measurements, placing ``I - L W`` at ``pole * I``."""
    L = np.zeros((model.N_DIST, sys.n))
    for i, vi in enumerate(model.VEL):
        L[i, vi] = (1.0 - pole) / sys.W[vi, i]
    return L


def observer_matrix(L, sys):
    return np.eye(L.shape[0]) - L @ sys.W


def init_observer(L, x0, d_hat0=None):
    """Observer state whose first estimate equals ``d_hat0`` (zero by default)."""
    d0 = np.zeros(L.shape[0]) if d_hat0 is None else np.asarray(d_hat0, dtype=float)
    return ObserverState(d0 - L @ x0, L)


def observer_step(obs, x, u, sys):
    """Return ``(next state, current estimate)``.

    ``d_hat_k = s_k + L x_k``;
    ``s_{k+1} = A_W s_k - L((A - I) x_k + B u_k + W L x_k)``.
    """
    L = obs.L
    A_W = observer_matrix(L, sys)
    Lx = L @ x
    d_hat = obs.s + Lx
    s1 = A_W @ obs.s - L @ ((sys.A - np.eye(sys.n)) @ x + sys.B @ u + sys.W @ Lx)
    return ObserverState(s1, L), d_hat


def clamp_estimate(d_hat, box):
    box = np.asarray(box, dtype=float)
    return np.clip(d_hat, -box, box)


def ancillary_control(v, x, z, d_hat, gains):
    """``u = v - K (x - z) - K_d d_hat``."""
    return v - gains.K @ (np.asarray(x) - np.asarray(z)) - gains.K_d @ d_hat


def spectral_radius(M):
    return float(max(abs(np.linalg.eigvals(M)))) if M.size else 0.0


def build_augmented_error_system(sys, gains, L, drop=model.DBAR):
    """Augmented error system on ``xi = (x - z, d_hat)``.

    ``A_xi = [[A - B K, -B K_d], [0, A_W]]``, ``B_xi = [W; L W]``. The rows and
    columns listed in ``drop`` (the constant-disturbance states, whose error is
    identically zero) are removed from the state error block.
    """
    A_cl = sys.A - sys.B @ gains.K
    A_W = observer_matrix(L, sys)
    keep = np.array([i for i in range(sys.n) if i not in set(np.atleast_1d(drop).tolist())])
    Ae = A_cl[np.ix_(keep, keep)]
    rho_x = spectral_radius(Ae)
    rho_w = spectral_radius(A_W)
    if rho_x >= 1.0:
        raise StabilityError(f"A - B K is not stable (spectral radius {rho_x:.6f})")
    if rho_w >= 1.0:
        raise StabilityError(f"observer matrix is not stable (spectral radius {rho_w:.6f})")
    ne, l = keep.shape[0], A_W.shape[0]
    At = np.zeros((ne + l, ne + l))
    At[:ne, :ne] = Ae
    At[:ne, ne:] = -(sys.B @ gains.K_d)[keep]
    At[ne:, ne:] = A_W
    Bt = np.vstack([sys.W[keep], L @ sys.W])
    return At, Bt, keep
