"""Closed-loop landing simulation.

The plant is the nonlinear translational model with the attitude reference
dynamics, driven by thrust and attitude commands obtained from the planner's
acceleration through the inverse transform. The deck moves with constant
velocity along +x; the controller only sees ship-relative positions and
velocities.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import config as config_mod
from . import kernels, model, observer, shmpc
from . import design as design_mod

log = logging.getLogger(__name__)

PLANT_NONLINEAR = "nonlinear"
PLANT_LINEAR = "linear"


class SimError(RuntimeError):
    pass


class ScenarioRejected(SimError):
    """The first QP is infeasible: the maneuver cannot be started from here."""


class MidRunFailure(SimError):
    def __init__(self, message, k, dump=None):
        super().__init__(message)
        self.k = k
        self.dump = dump or {}


class ReportError(SimError):
    pass


class AttitudeRangeError(SimError):
    pass


# --- scenario ------------------------------------------------------------


@dataclass
class DisturbanceConfig:
    d_bar: np.ndarray  # ground-frame constant part
    dv_box: np.ndarray
    gust_level: float = 0.4
    gust_modes: int = 6
    attitude_error: float = 0.0
    duration: float = 10.9
    seed: int = 0
    amplitudes: np.ndarray | None = None  # (3, modes), drawn from the seed when None
    cycles: np.ndarray | None = None
    phases: np.ndarray | None = None
    att_amp: np.ndarray | None = None
    att_cycles: np.ndarray | None = None
    att_phases: np.ndarray | None = None

    def __post_init__(self):
        self.d_bar = np.asarray(self.d_bar, dtype=float)
        self.dv_box = np.asarray(self.dv_box, dtype=float)
        rng = np.random.default_rng(self.seed)
        M = max(int(self.gust_modes), 1)
        if self.cycles is None:
            # whole periods over the maneuver so every mode has zero mean
            self.cycles = rng.integers(1, 9, size=(3, M)).astype(float)
        if self.phases is None:
            self.phases = rng.uniform(0.0, 2.0 * np.pi, size=(3, M))
        if self.amplitudes is None:
            w = rng.uniform(0.2, 1.0, size=(3, M))
            w /= w.sum(axis=1, keepdims=True)
            self.amplitudes = w * (self.gust_level * self.dv_box)[:, None]
            if self.gust_modes == 0:
                self.amplitudes = np.zeros((3, M))
        if self.att_cycles is None:
            self.att_cycles = rng.integers(2, 12, size=2).astype(float)
        if self.att_phases is None:
            self.att_phases = rng.uniform(0.0, 2.0 * np.pi, size=2)
        if self.att_amp is None:
            self.att_amp = np.full(2, float(self.attitude_error))


@dataclass
class ManeuverScenario:
    tag: str
    start: np.ndarray  # ship-relative position
    start_velocity: np.ndarray  # ship-relative velocity
    ship_speed: float
    ship_heading: float  # rad, fixed and aligned with the helicopter
    N0: int
    N_TD: int
    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise SimError("sample time must be positive")
        self.start = np.asarray(self.start, dtype=float)
        self.start_velocity = np.asarray(self.start_velocity, dtype=float)


def scenario_from_config(cfg, tag):
    if tag not in cfg["maneuvers"]:
        raise SimError(f"unknown maneuver '{tag}'")
    man = cfg["maneuvers"][tag]
    return ManeuverScenario(tag, man["start"], man.get("velocity", [0.0, 0.0, 0.0]), cfg["ship"]["speed"], 0.0,
                            int(cfg["mpc"]["N0"]), int(cfg["touchdown"]["N_TD"]), cfg["model"]["sample_time"])


def disturbance_from_config(cfg, seed=0, scenario=None):
    d = cfg["disturbance"]
    dur = 10.9 if scenario is None else (scenario.N0 + scenario.N_TD) * scenario.tau
    return DisturbanceConfig(np.asarray(config_mod.absolute_dbar(cfg)), d["dv_box"], d["gust_level"],
                             d["gust_modes"], d["attitude_error"], dur, seed)


def gen_disturbance(cfg, t):
    """Ground-frame disturbance ``d_bar + d^v(t)``; ``d^v`` is clamped to ``dv_box``."""
    return cfg.d_bar + gust(cfg, t)


def gust(cfg, t):
    arg = 2.0 * np.pi * cfg.cycles * (t / cfg.duration) + cfg.phases
    dv = np.sum(cfg.amplitudes * np.sin(arg), axis=1)
    return np.clip(dv, -cfg.dv_box, cfg.dv_box)


def attitude_error(cfg, t):
    """Inner-loop tracking error ``(e_phi, e_theta)`` at time ``t``."""
    return cfg.att_amp * np.sin(2.0 * np.pi * cfg.att_cycles * (t / cfg.duration) + cfg.att_phases)


def ship_step(t, scenario):
    """Deck position and velocity at time ``t`` (deck starts at the origin)."""
    h = scenario.ship_heading
    vel = scenario.ship_speed * np.array([math.cos(h), math.sin(h), 0.0])
    return vel * t, vel


# --- plant -----------------------------------------------------------------


@dataclass
class PlantState:
    p: np.ndarray
    v: np.ndarray
    phi_r: float
    dphi_r: float
    theta_r: float
    dtheta_r: float
    phi: float = 0.0  # true attitude = reference + tracking error
    theta: float = 0.0

    def vector(self):
        return np.concatenate([self.p, self.v, [self.phi_r, self.dphi_r, self.theta_r, self.dtheta_r]])

    @classmethod
    def from_vector(cls, s, e_phi=0.0, e_theta=0.0):
        return cls(s[0:3].copy(), s[3:6].copy(), float(s[6]), float(s[7]), float(s[8]), float(s[9]),
                   float(s[6] + e_phi), float(s[8] + e_theta))


def plant_coefficients(params):
    rate_t, stiff_t = params.filter_coefficients(0)
    rate_p, stiff_p = params.filter_coefficients(1)
    return (rate_p, stiff_p, rate_t, stiff_t)


def plant_step(state, cmd, d_true, tau, params, e_att=(0.0, 0.0)):
    """One RK4 step of the nonlinear plant under ``cmd``; ``e_att`` is the attitude tracking error."""
    s = kernels.plant_rk4(state.vector(), cmd.thrust, cmd.phi, cmd.theta, np.asarray(d_true, dtype=float),
                          float(e_att[0]), float(e_att[1]), np.asarray(params.drag, dtype=float),
                          np.asarray(plant_coefficients(params)), params.gravity, tau)
    if not np.all(np.isfinite(s)):
        raise AttitudeRangeError("plant state is not finite")
    out = PlantState.from_vector(s, *e_att)
    if abs(out.phi) >= np.pi / 2 or abs(out.theta) >= np.pi / 2:
        raise AttitudeRangeError(f"attitude out of range (phi={out.phi:.3f}, theta={out.theta:.3f})")
    return out


# --- log and report ----------------------------------------------------------

CSV_COLUMNS = (["t"] + [f"x_{s}" for s in model.STATE_LABELS] + [f"z_{s}" for s in model.STATE_LABELS]
               + ["u_x", "u_y", "u_z", "v_x", "v_y", "v_z", "d_x", "d_y", "d_z", "dhat_x", "dhat_y", "dhat_z",
                  "solve_ms", "qp_iters"])


@dataclass
class TrajectoryLog:
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    z: list = field(default_factory=list)
    u: list = field(default_factory=list)
    v: list = field(default_factory=list)
    d: list = field(default_factory=list)
    d_hat: list = field(default_factory=list)
    solve_ms: list = field(default_factory=list)
    qp_iters: list = field(default_factory=list)
    # plant-side records used by the report (one per step, plus the final state)
    plant_rel: list = field(default_factory=list)  # [p_rel(3), v_rel(3), phi, theta]
    plant_abs: list = field(default_factory=list)
    deck: list = field(default_factory=list)
    touchdown: dict | None = None
    N0: int = 0
    tau: float = 0.02

    def append(self, t, x, z, u, v, d, d_hat, ms, iters):
        self.t.append(t)
        self.x.append(np.array(x))
        self.z.append(np.array(z))
        self.u.append(np.array(u))
        self.v.append(np.array(v))
        self.d.append(np.array(d))
        self.d_hat.append(np.array(d_hat))
        self.solve_ms.append(float(ms))
        self.qp_iters.append(int(iters))

    def __len__(self):
        return len(self.t)

    def arrays(self):
        return {k: np.asarray(getattr(self, k)) for k in ("t", "x", "z", "u", "v", "d", "d_hat", "solve_ms", "qp_iters")}

    def write_csv(self, path, timing=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for i in range(len(self)):
                ms = self.solve_ms[i] if timing else 0.0
                row = [self.t[i], *self.x[i], *self.z[i], *self.u[i], *self.v[i], *self.d[i], *self.d_hat[i], ms]
                w.writerow([repr(float(v)) for v in row] + [self.qp_iters[i]])


@dataclass
class TouchdownReport:
    d_phi_deg: float
    d_theta_deg: float
    d_p_h: float
    d_v_h: float
    d_v_z: float
    T: float
    step: int
    success: bool
    reasons: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass(frozen=True)
class ReportBounds:
    max_roll_deg: float = 4.0
    max_pitch_deg: float = 6.0
    max_p_h: float = 0.6
    max_v_h: float = 0.6
    max_v_z: float = 1.15
    t_min: float = 9.9
    t_max: float = 10.9


def report_bounds(cfg):
    r = cfg["report"]
    tau = cfg["model"]["sample_time"]
    N0, N_TD = cfg["mpc"]["N0"], cfg["touchdown"]["N_TD"]
    return ReportBounds(r["max_roll_deg"], r["max_pitch_deg"], r["max_p_h"], r["max_v_h"], r["max_v_z"],
                        N0 * tau, (N0 + N_TD) * tau)


def compute_report(log, bounds=None):
    """Ship-relative touchdown metrics from a finished log."""
    td = log.touchdown
    if td is None:
        raise ReportError("no touchdown recorded")
    bounds = bounds or ReportBounds()
    rel = np.asarray(td["state"], dtype=float)  # [p(3), v(3), phi, theta]
    r = TouchdownReport(
        math.degrees(abs(rel[6])), math.degrees(abs(rel[7])),
        float(np.hypot(rel[0], rel[1])), float(np.hypot(rel[3], rel[4])), float(abs(rel[5])),
        float(td["t"]), int(td["step"]), True)
    checks = [
        (r.d_phi_deg <= bounds.max_roll_deg, "roll"),
        (r.d_theta_deg <= bounds.max_pitch_deg, "pitch"),
        (r.d_p_h <= bounds.max_p_h, "horizontal position"),
        (r.d_v_h <= bounds.max_v_h, "horizontal velocity"),
        (r.d_v_z <= bounds.max_v_z, "vertical velocity"),
        (bounds.t_min - 1e-9 <= r.T <= bounds.t_max + 1e-9, "touchdown time"),
    ]
    r.reasons = [name for ok, name in checks if not ok]
    if td.get("premature"):
        r.reasons.append("premature ground contact")
    r.success = not r.reasons
    return r


# --- closed loop -------------------------------------------------------------


@dataclass
class RunResult:
    log: TrajectoryLog
    report: TouchdownReport | None
    violations: list
    scenario: ManeuverScenario
    seed: int
    terminal_ok: bool

    @property
    def success(self):
        return self.report is not None and self.report.success and not self.violations and self.terminal_ok


def _tube_box(design):
    Z = design.Z
    return Z.center, Z.interval_hull()


def _trim_state(scenario, design, params):
    """Plant and controller states for a trimmed start at ``scenario.start``."""
    dbar = design.dbar
    a = np.array([-dbar[0], -dbar[1], 0.0])
    cmd = model.planner_to_command(a, params.gravity)
    deck_p, deck_v = ship_step(0.0, scenario)
    plant = PlantState(deck_p + scenario.start, deck_v + scenario.start_velocity,
                       cmd.phi, 0.0, cmd.theta, 0.0, cmd.phi, cmd.theta)
    x = np.zeros(design.sys.n)
    x[model.POS] = scenario.start
    x[model.VEL] = scenario.start_velocity
    x[model.ACC] = -dbar[:2]
    x[model.DBAR] = dbar
    return plant, x


def run_landing(design, scenario, dist, *, plant=PLANT_NONLINEAR, check_invariants=False,
                dbar_planner=None, controller=None, bounds=None):
    """Two-stage loop: shrinking-horizon planning for ``N0`` steps, then touchdown control.

    Returns a :class:`RunResult`. Raises :class:`ScenarioRejected` when the
    first QP is infeasible and :class:`MidRunFailure` on later failures.
    """
    sys, params, gains = design.sys, design.params, design.gains
    n, tau = sys.n, scenario.tau
    N0, N_TD = scenario.N0, scenario.N_TD
    dbar = design.dbar if dbar_planner is None else np.asarray(dbar_planner, dtype=float)

    plant_state, x_int = _trim_state(scenario, design, params)
    x_int[model.DBAR] = dbar
    if controller is None:
        controller = shmpc.ShmpcController(sys, design_mod.mpc_config(design, x_int, dbar))
    obs = observer.init_observer(design.L, x_int)
    td = design.td
    zc, zh = _tube_box(design)
    F = design.F.poly
    F_TD = td.F_TD
    log_ = TrajectoryLog(N0=N0, tau=tau)
    violations = []
    warm = None
    z = v = None
    terminal_ok = True
    g = params.gravity
    x_lin = x_int.copy()  # true state of the linear plant option

    def measure(k):
        t = k * tau
        deck_p, deck_v = ship_step(t, scenario)
        x = x_int.copy()
        if plant == PLANT_LINEAR:
            x[:] = x_lin
            x[model.DBAR] = dbar
        else:
            x[model.POS] = plant_state.p - deck_p
            x[model.VEL] = plant_state.v - deck_v
        return x

    def rel_record(k):
        deck_p, deck_v = ship_step(k * tau, scenario)
        log_.deck.append(np.concatenate([deck_p, deck_v]))
        if plant == PLANT_LINEAR:
            log_.plant_abs.append(np.concatenate([x_lin[model.POS] + deck_p, x_lin[model.VEL] + deck_v]))
            return np.concatenate([x_lin[model.POS], x_lin[model.VEL], [0.0, 0.0]])
        log_.plant_abs.append(np.concatenate([plant_state.p, plant_state.v]))
        return np.concatenate([plant_state.p - deck_p, plant_state.v - deck_v,
                               [plant_state.phi, plant_state.theta]])

    prev_rel = rel_record(0)
    log_.plant_rel.append(prev_rel)
    for k in range(N0 + N_TD + 1):
        t = k * tau
        x = measure(k)
        d_hat = obs.s + obs.L @ x
        ms, iters = 0.0, 0
        if k < N0:
            try:
                res, warm = controller.solve_step(x, k, dbar, warm)
            except shmpc.InfeasibleStep as err:
                if k == 0:
                    raise ScenarioRejected("initial QP is infeasible") from err
                raise MidRunFailure(f"QP infeasible at step {k}", k, {"x": x.tolist(), "rows": len(err.rows)}) from err
            except shmpc.ShmpcError as err:
                raise MidRunFailure(str(err), k, {"x": x.tolist()}) from err
            z, v = res.z0, res.v0
            z_next = res.trajectory[1]
            ms, iters = res.solve_ms, res.iterations
        else:
            if k == N0:
                z = z_next
                if not design.XT_bar.contains(z, tol=1e-7):
                    terminal_ok = False
                    violations.append((k, "terminal set"))
            else:
                z = sys.A @ z + sys.B @ v
            v = -td.K_TD @ (z - td.z_r)
        u = observer.ancillary_control(v, x, z, d_hat, gains)

        if check_invariants:
            err = x - z
            if np.any(np.abs(err - zc) > zh + 1e-6):
                violations.append((k, "tube"))
            if k < N0:
                if F.violation(np.concatenate([u, x])) > 1e-6:
                    violations.append((k, "constraints"))
                if k > 0 and x[model.IDX["p_z"]] <= 0.0:
                    violations.append((k, "premature contact"))
            elif F_TD.violation(x) > 1e-6:
                violations.append((k, "touchdown safe set"))

        d_v = gust(dist, t)
        d_rel = dbar + d_v if plant == PLANT_LINEAR else gen_disturbance(dist, t) - _ship_drag(scenario, params)
        log_.append(t, x, z, u, v, d_rel, d_hat, ms, iters)

        if k == N0 + N_TD:
            break
        obs, _ = observer.observer_step(obs, x, u, sys)
        # propagate
        if plant == PLANT_LINEAR:
            x_lin = sys.A @ x_lin + sys.B @ u + sys.W @ d_v
        else:
            e_att = attitude_error(dist, t)
            try:
                cmd = model.planner_to_command(u, g)
                plant_state = plant_step(plant_state, cmd, gen_disturbance(dist, t), tau, params, e_att)
            except (model.ModelError, AttitudeRangeError) as err:
                raise MidRunFailure(str(err), k, {"x": x.tolist(), "u": u.tolist()}) from err
        x_int = sys.A @ x_int + sys.B @ u  # filter states are driven by u only
        rel = rel_record(k + 1)
        log_.plant_rel.append(rel)
        h0, h1 = prev_rel[2], rel[2]
        if h1 <= 0.0 < h0 or (k + 1 < N0 and h1 <= 0.0):
            s = h0 / (h0 - h1) if h0 > h1 else 1.0
            state = prev_rel + s * (rel - prev_rel)
            log_.touchdown = {"t": (k + s) * tau, "step": k + 1, "state": state.tolist(),
                              "premature": k + 1 < N0}
            if k + 1 < N0:
                violations.append((k + 1, "premature contact"))
            break
        prev_rel = rel

    report = None
    if log_.touchdown is not None:
        report = compute_report(log_, bounds)
    else:
        violations.append((len(log_), "no touchdown in window"))
    return RunResult(log_, report, violations, scenario, dist.seed, terminal_ok)


def _ship_drag(scenario, params):
    """Ground-to-ship-frame shift of the disturbance (drag of the ship's own velocity)."""
    _, vel = ship_step(0.0, scenario)
    return np.asarray(params.drag) * vel


def run_maneuver(cfg, tag, seed=0, design=None, **kw):
    """Convenience wrapper: build (or reuse) the design and run one maneuver."""
    design = design or design_mod.build(cfg)
    scen = scenario_from_config(cfg, tag)
    dist = disturbance_from_config(cfg, seed, scen)
    dbar_err = cfg["disturbance"].get("dbar_error", 0.0)
    dbar_planner = None
    if dbar_err:
        rng = np.random.default_rng([seed, 7])
        dbar_planner = design.dbar + rng.uniform(-dbar_err, dbar_err, 3)
    kw.setdefault("bounds", report_bounds(cfg))
    return run_landing(design, scen, dist, dbar_planner=dbar_planner, **kw)
