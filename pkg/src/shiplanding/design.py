"""Offline design: model, gains, tube, tightened constraints and terminal set.

Everything here depends only on the scenario configuration (not on the
maneuver), so it is computed once and cached on disk.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import config as config_mod
from . import model, observer, sets, shmpc, terminal

log = logging.getLogger(__name__)

TUBE_SECTIONS = ("model", "gains", "rpi", "disturbance")
DESIGN_SECTIONS = TUBE_SECTIONS + ("constraints", "touchdown", "ship")


@dataclass(eq=False)
class Design:
    cfg: dict
    params: model.PlanningModelParams
    sys: model.DiscreteLinearSystem
    gains: observer.AncillaryGains
    L: np.ndarray
    A_xi: np.ndarray
    B_xi: np.ndarray
    xi_keep: np.ndarray
    D_v: sets.Zonotope
    Z_xi: sets.Zonotope
    Z: sets.Zonotope  # state error tube in the 13-state layout
    F: shmpc.StageConstraints
    F_bar: shmpc.StageConstraints
    td: terminal.TouchdownConfig
    XT_bar: sets.HPolytope
    dbar: np.ndarray  # ship-relative constant disturbance given to the planner
    eps0_halfwidths: np.ndarray  # box inscribed in the tube

    @property
    def eps0_set(self):
        """Box inscribed in the tube, on its non-degenerate coordinates."""
        h = self.eps0_halfwidths
        idx = np.flatnonzero(h > 0)
        n = self.sys.n
        A = np.zeros((2 * idx.shape[0], n))
        A[np.arange(idx.shape[0]), idx] = 1.0
        A[idx.shape[0] + np.arange(idx.shape[0]), idx] = -1.0
        c = self.Z.center[idx]
        b = np.concatenate([h[idx] + c, h[idx] - c])
        return sets.HPolytope(A, b)

    @property
    def tube_box(self):
        return self.Z.outer_box()


def params_from(cfg):
    m = cfg["model"]
    return model.PlanningModelParams(tuple(m["drag"]), tuple(m["att_bandwidth"]), tuple(m["att_damping"]),
                                     float(m["gravity"]), float(m["sample_time"]), bool(m["standard_form"]))


def stage_constraints(cfg, n_input=model.N_INPUT):
    """Stage set over ``[u; x]`` with box, height-acceleration and descent-rate rows."""
    c = cfg["constraints"]
    I = model.IDX
    n = model.N_STATE
    rows, offs, kinds = [], [], []

    def add(coef, off, kind):
        a = np.zeros(n_input + n)
        for j, v in coef.items():
            a[j] = v
        rows.append(a)
        offs.append(off)
        kinds.append(kind)

    def bound(j, lo, hi, kind):
        add({j: 1.0}, hi, kind)
        add({j: -1.0}, -lo, kind)

    for j in range(2):
        bound(j, -c["u_h"], c["u_h"], shmpc.INPUT)
    bound(2, c["u_z"][0], c["u_z"][1], shmpc.INPUT)
    u = n_input
    for name in ("p_x", "p_y"):
        bound(u + I[name], -c["p_h"], c["p_h"], shmpc.STATE)
    add({u + I["p_z"]: 1.0}, c["p_z"][1], shmpc.STATE)
    add({u + I["p_z"]: -1.0}, -c["p_z"][0], shmpc.HEIGHT)
    for name in ("v_x", "v_y"):
        bound(u + I[name], -c["v_h"], c["v_h"], shmpc.STATE)
    bound(u + I["v_z"], c["v_z"][0], c["v_z"][1], shmpc.STATE)
    for name in ("a_rx", "a_ry"):
        bound(u + I[name], -c["a_r"], c["a_r"], shmpc.STATE)
    for name in ("j_rx", "j_ry"):
        bound(u + I[name], -c["j_r"], c["j_r"], shmpc.STATE)
    # acceleration allowed to grow with height: +-a_r - gamma_a p_z <= b_a
    for name in ("a_rx", "a_ry"):
        for s in (1.0, -1.0):
            add({u + I[name]: s, u + I["p_z"]: -c["gamma_a"]}, c["b_a"], shmpc.HEIGHT)
    # sink rate limited by forward airspeed: -v_z - gamma (v_x + v_ship) <= b
    ship = cfg["ship"]["speed"]
    add({u + I["v_z"]: -1.0, u + I["v_x"]: -c["gamma_vrs"]}, c["b_vrs"] + c["gamma_vrs"] * ship, shmpc.VRS)
    poly = sets.HPolytope(np.array(rows), np.array(offs))
    return shmpc.StageConstraints(poly, tuple(kinds), n_input)


def touchdown_config(cfg, sys, params):
    t = cfg["touchdown"]
    bounds = terminal.TouchdownBounds(t["p_h"], t["v_h"], tuple(t["a_r"]), t["j_r"], tuple(t["p_z"]),
                                      tuple(t["v_z"]), tuple(t["dbar"]), t["descent_rate"])
    return terminal.default_config(sys, params, bounds, N_TD=t["N_TD"], q_h=tuple(t["lqr_q"]),
                                   r_h=t["lqr_r"], k_vz=t["k_vz"])


def _cache_paths(cfg, cache):
    tube = config_mod.section_hash(cfg, *TUBE_SECTIONS)
    full = config_mod.section_hash(cfg, *DESIGN_SECTIONS)
    return cache / f"tube_{tube}.json", cache / f"terminal_{full}.json", cache / f"eps0_{tube}.json"


def build(cfg, cache=None, use_cache=True):
    """Assemble the full design; ``cache`` is a directory or ``None`` for the default."""
    params = params_from(cfg)
    sys = model.build_model(params)
    g = cfg["gains"]
    gains = observer.default_gains(tuple(g["k_lon"]), tuple(g["k_lat"]), tuple(g["k_vert"]), tuple(g["k_d"]))
    L = observer.velocity_observer_gain(sys, g["observer_pole"])
    A_xi, B_xi, keep = observer.build_augmented_error_system(sys, gains, L)
    dv = np.asarray(cfg["disturbance"]["dv_box"], dtype=float)
    D_v = sets.Zonotope.box(dv)

    cache_root = config_mod.cache_dir(cache) if use_cache else None
    tube_path = term_path = eps_path = None
    if cache_root is not None:
        tube_path, term_path, eps_path = _cache_paths(cfg, cache_root)

    if tube_path is not None and tube_path.exists():
        Z_xi = sets.load_json(tube_path)
    else:
        r = cfg["rpi"]
        Z_xi = sets.mrpi_approx(A_xi, sets.affine_image(B_xi, None, D_v), r["eps"], r["max_steps"])
        if tube_path is not None:
            sets.save_json(Z_xi, tube_path)
    Z = project_tube(Z_xi, keep, sys.n)
    if eps_path is not None and eps_path.exists():
        with open(eps_path) as fh:
            eps0 = np.array(json.load(fh)["halfwidths"], dtype=float)
    else:
        eps0 = sets.inscribed_box(Z)
        if eps_path is not None:
            with open(eps_path, "w") as fh:
                json.dump({"halfwidths": eps0.tolist()}, fh)

    F = stage_constraints(cfg)
    input_tube = sets.affine_image(-gains.K_d, None, D_v)
    F_bar, _ = shmpc.tighten(F, None, Z, gains.K, input_tube)

    td = touchdown_config(cfg, sys, params)
    if term_path is not None and term_path.exists():
        XT_bar = sets.load_json(term_path)
    else:
        XT_bar = terminal.compute_terminal_set(td, Z, sys)
        if term_path is not None:
            sets.save_json(XT_bar, term_path)
    dbar = np.asarray(config_mod.wind_dbar(cfg), dtype=float)
    return Design(cfg, params, sys, gains, L, A_xi, B_xi, keep, D_v, Z_xi, Z, F, F_bar, td, XT_bar, dbar, eps0)


def project_tube(Z_xi, keep, n):
    """State-error part of the augmented tube, embedded in the full state layout."""
    E = np.zeros((n, Z_xi.dim))
    E[keep, np.arange(keep.shape[0])] = 1.0
    return sets.affine_image(E, None, Z_xi)


def terminal_target(design):
    """Center of the terminal cost for the planner's current constant disturbance."""
    cfg = design.cfg
    I = model.IDX
    z = np.zeros(design.sys.n)
    z[I["p_z"]] = cfg["mpc"]["terminal_height"]
    z[I["v_z"]] = -cfg["touchdown"]["descent_rate"]
    z[I["a_rx"]] = -design.dbar[0]
    z[I["a_ry"]] = -design.dbar[1]
    z[model.DBAR] = design.dbar
    return z


def mpc_config(design, x0, dbar=None):
    """Planner configuration for a maneuver starting at ``x0``."""
    cfg = design.cfg
    m = cfg["mpc"]
    n = design.sys.n
    I = model.IDX
    N0 = int(m["N0"])
    Q = np.zeros((n, n))
    for j in model.POS:
        Q[j, j] = m["q_pos"]
    for j in model.VEL:
        Q[j, j] = m["q_vel"]
    R = m["r_input"] * np.eye(design.sys.m)
    P = m["p_other"] * np.eye(n)
    for j in np.concatenate([model.POS, model.VEL]):
        P[j, j] = m["p_pos"] if j in model.POS else m["p_vel"]
    P0 = m["p0"] * np.eye(n)
    z_T = terminal_target(design)
    if dbar is not None:
        z_T[I["a_rx"]], z_T[I["a_ry"]] = -dbar[0], -dbar[1]
        z_T[model.DBAR] = dbar
    # straight-line reference from the start to the terminal target
    s = (np.arange(N0) / N0)[:, None]
    ref = np.zeros((N0, n))
    ref[:, model.POS] = x0[model.POS] + s * (z_T[model.POS] - x0[model.POS])
    return shmpc.ShmpcConfig(N0, int(m["Nbar"]), Q, R, P, P0, design.F_bar, design.XT_bar, design.eps0_set,
                             z_T, model.DBAR, I["p_z"], ref, int(m["stride"]), float(m["low_height"]))


def summary(design):
    """Set statistics for reporting."""
    h = design.Z.interval_hull()
    return {
        "tube_generators": int(design.Z_xi.n_generators),
        "tube_halfwidths": {lbl: float(v) for lbl, v in zip(model.STATE_LABELS, h)},
        "stage_rows": int(design.F_bar.poly.n_facets),
        "terminal_facets": int(design.XT_bar.n_facets),
        "terminal_empty": bool(sets.is_empty(design.XT_bar)),
    }


def dump_summary(design, path):
    with open(path, "w") as fh:
        json.dump(summary(design), fh, indent=2)
