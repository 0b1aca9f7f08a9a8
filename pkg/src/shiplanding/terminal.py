"""Touchdown reference controller and backward-reachable terminal set."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are
from scipy.optimize import linprog

from . import model, sets


class TerminalSetWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class TouchdownConfig:
    K_TD: np.ndarray
    z_r: np.ndarray
    N_TD: int
    F_TD: sets.HPolytope
    X_TD_start: sets.HPolytope | None = None

    @property
    def n(self):
        return self.K_TD.shape[1]


@dataclass(frozen=True)
class TouchdownBounds:
    p_h: float = 0.42
    v_h: float = 0.42
    a_r: tuple = (1.0, 0.68)
    j_r: float = 3.0
    p_z: tuple = (-0.5, 1.2)
    v_z: tuple = (-1.15, -0.25)
    dbar: tuple = (0.8, 0.8, 0.4)
    descent_rate: float = 0.7


def touchdown_gain(sys, q_h=(1.0, 20.0, 20.0, 0.1), r_h=2.0, k_vz=3.0):
    """Touchdown feedback for the 13-state model.

    Horizontal axes use discrete LQR on ``[p, v, a_r, j_r]``; the constant
    disturbance is cancelled through a gain of ``1 + K_a`` so the steady-state
    acceleration offsets it. The vertical axis regulates velocity only.
    """
    K = np.zeros((model.N_INPUT, model.N_STATE))
    lon, lat, vert = model.axis_blocks()
    for ax, blk in enumerate((lon, lat)):
        core = blk[:4]
        A = sys.A[np.ix_(core, core)]
        B = sys.B[core, ax:ax + 1]
        Q = np.diag(q_h)
        R = np.array([[r_h]])
        P = solve_discrete_are(A, B, Q, R)
        k = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A).ravel()
        K[ax, core] = k
        K[ax, blk[4]] = 1.0 + k[2]
    K[2, vert[1]] = k_vz
    K[2, vert[2]] = 1.0
    return K


def touchdown_setpoint(K, params, descent_rate=0.7):
    """Setpoint giving a steady descent at ``descent_rate`` under drag."""
    z_r = np.zeros(model.N_STATE)
    k_v = K[2, model.IDX["v_z"]]
    z_r[model.IDX["v_z"]] = -descent_rate * (k_v + params.drag[2]) / k_v
    return z_r


def touchdown_box(bounds):
    lo = np.full(model.N_STATE, -np.inf)
    hi = np.full(model.N_STATE, np.inf)
    I = model.IDX
    for ax, (p, v, a, j, d) in enumerate((("p_x", "v_x", "a_rx", "j_rx", "dbar_x"),
                                          ("p_y", "v_y", "a_ry", "j_ry", "dbar_y"))):
        lo[I[p]], hi[I[p]] = -bounds.p_h, bounds.p_h
        lo[I[v]], hi[I[v]] = -bounds.v_h, bounds.v_h
        lo[I[a]], hi[I[a]] = -bounds.a_r[ax], bounds.a_r[ax]
        lo[I[j]], hi[I[j]] = -bounds.j_r, bounds.j_r
        lo[I[d]], hi[I[d]] = -bounds.dbar[ax], bounds.dbar[ax]
    lo[I["p_z"]], hi[I["p_z"]] = bounds.p_z
    lo[I["v_z"]], hi[I["v_z"]] = bounds.v_z
    lo[I["dbar_z"]], hi[I["dbar_z"]] = -bounds.dbar[2], bounds.dbar[2]
    return sets.HPolytope.box(lo, hi)


def height_halfspace(n=model.N_STATE, above=True):
    """``{p_z >= 0}`` (``above``) or ``{p_z <= 0}``."""
    a = np.zeros(n)
    a[model.IDX["p_z"]] = -1.0 if above else 1.0
    return sets.HPolytope(a.reshape(1, -1), [0.0])


def default_config(sys, params, bounds=None, N_TD=50, **gain_kw):
    bounds = bounds or TouchdownBounds()
    K = touchdown_gain(sys, **gain_kw)
    z_r = touchdown_setpoint(K, params, bounds.descent_rate)
    return TouchdownConfig(K, z_r, int(N_TD), touchdown_box(bounds))


def closed_loop(cfg, sys):
    """``(A_TD, offset)`` with ``z' = A_TD z + offset``."""
    A_TD = sys.A - sys.B @ cfg.K_TD
    return A_TD, sys.B @ cfg.K_TD @ cfg.z_r


def touchdown_step(z, cfg, sys):
    """Nominal touchdown update; returns ``(z_next, v_td)``."""
    v = -cfg.K_TD @ (np.asarray(z) - cfg.z_r)
    return sys.A @ z + sys.B @ v, v


def start_set(cfg, Z, F_z_minus=None):
    """Landed-success set: ``(F_TD intersect {p_z <= 0}) - Z`` unless given explicitly."""
    if cfg.X_TD_start is not None:
        return cfg.X_TD_start
    F_z_minus = F_z_minus if F_z_minus is not None else height_halfspace(cfg.n, above=False)
    return sets.erode(sets.intersect(cfg.F_TD, F_z_minus), Z)


def lp_support(P, a):
    """``max a'x`` over the polytope ``P``; ``inf`` if unbounded, ``-inf`` if empty."""
    res = linprog(-np.asarray(a, dtype=float), A_ub=P.normals, b_ub=P.offsets,
                  bounds=[(None, None)] * P.dim, method="highs")
    if res.status == 2:
        return -np.inf
    if res.status == 3:
        return np.inf
    return float(-res.fun)


def validate_start_set(cfg, Z, F_z_minus=None, tol=1e-9):
    """Check ``X_TD + Z subset of F_TD intersect F_z_minus`` facet by facet."""
    F_z_minus = F_z_minus if F_z_minus is not None else height_halfspace(cfg.n, above=False)
    X = start_set(cfg, Z, F_z_minus)
    target = sets.intersect(cfg.F_TD, F_z_minus)
    hz = sets.support(Z, target.normals)
    for a, b, h in zip(target.normals, target.offsets, hz):
        if lp_support(X, a) + h > b + tol:
            return False
    return True


def compute_terminal_set(cfg, Z, sys, F_z_plus=None, F_z_minus=None, prune_every=5, prune=True):
    """Backward recursion from the landed set for ``N_TD`` steps.

    ``R_0 = X_TD``, ``R_{k+1} = A_TD^-1 (R_k - B K_TD z_r) intersect (F_TD - Z)``
    and the result is ``R_N intersect (F_z_plus - Z)``. An empty result is
    reported with a warning, not an exception.
    """
    F_z_plus = F_z_plus if F_z_plus is not None else height_halfspace(cfg.n, above=True)
    F_z_minus = F_z_minus if F_z_minus is not None else height_halfspace(cfg.n, above=False)
    A_TD, offset = closed_loop(cfg, sys)
    safe = sets.erode(cfg.F_TD, Z)
    R = start_set(cfg, Z, F_z_minus)
    for k in range(cfg.N_TD):
        R = sets.intersect(sets.affine_preimage(A_TD, offset, R), safe)
        if prune and prune_every and (k + 1) % prune_every == 0:
            R = sets.prune_redundant(R)
    X = sets.intersect(R, sets.erode(F_z_plus, Z))
    if prune:
        X = sets.prune_redundant(X)
    if sets.is_empty(X):
        warnings.warn("terminal set is empty: no nominal end state admits a safe touchdown; "
                      "choose a different touchdown gain, window or safe set", TerminalSetWarning)
    return X


def simulate(z0, cfg, sys, steps=None):
    """Nominal touchdown trajectory of length ``steps + 1``."""
    steps = cfg.N_TD if steps is None else steps
    A_TD, offset = closed_loop(cfg, sys)
    out = np.empty((steps + 1, len(z0)))
    out[0] = z0
    for k in range(steps):
        out[k + 1] = A_TD @ out[k] + offset
    return out


def shift_velocity(P, v_ship, index=model.VEL):
    """Express a ship-relative set in absolute velocities (translate by ``v_ship``)."""
    shift = np.zeros(P.dim)
    shift[np.asarray(index)[:len(v_ship)]] = v_ship
    return sets.HPolytope(P.normals, P.offsets + P.normals @ shift)
