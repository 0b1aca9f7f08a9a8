"""Linear planning model and the acceleration/attitude transform pair.

State layout (13): ``[p_x, v_x, a_rx, j_rx, dbar_x, p_y, v_y, a_ry, j_ry, dbar_y,
p_z, v_z, dbar_z]`` with ``p_z`` the height above the deck (positive up).
Input: commanded acceleration ``a_c`` (3). Disturbance ``d^v`` (3) enters the
velocity rows.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

STATE_LABELS = (
    "p_x", "v_x", "a_rx", "j_rx", "dbar_x",
    "p_y", "v_y", "a_ry", "j_ry", "dbar_y",
    "p_z", "v_z", "dbar_z",
)
IDX = {name: i for i, name in enumerate(STATE_LABELS)}
POS = np.array([IDX["p_x"], IDX["p_y"], IDX["p_z"]])
VEL = np.array([IDX["v_x"], IDX["v_y"], IDX["v_z"]])
ACC = np.array([IDX["a_rx"], IDX["a_ry"]])
JERK = np.array([IDX["j_rx"], IDX["j_ry"]])
DBAR = np.array([IDX["dbar_x"], IDX["dbar_y"], IDX["dbar_z"]])
CORE = np.array([i for i in range(13) if i not in DBAR])

N_STATE = 13
N_INPUT = 3
N_DIST = 3


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class PlanningModelParams:
    drag: tuple = (0.05, 0.05, 0.1)
    att_bandwidth: tuple = (2.45, 2.45)  # (theta, phi)
    att_damping: tuple = (1.84, 1.84)  # (theta, phi)
    gravity: float = 9.81
    sample_time: float = 0.02
    standard_form: bool = False

    def __post_init__(self):
        if len(self.drag) != 3 or min(self.drag) < 0:
            raise ModelError("drag must be three non-negative values")
        if min(self.att_bandwidth) <= 0:
            raise ModelError("attitude bandwidths must be positive")
        if not all(0 < z <= 2 for z in self.att_damping):
            raise ModelError("attitude damping must lie in (0, 2]")
        if self.sample_time <= 0:
            raise ModelError("sample time must be positive")

    def filter_coefficients(self, axis):
        """``(rate, stiffness)`` of the reference filter for axis 0 (lon/theta) or 1 (lat/phi).

        The printed filter puts ``w^2`` on the rate term and ``2 w zeta`` on the
        stiffness term; ``standard_form`` swaps them.
        """
        w, z = self.att_bandwidth[axis], self.att_damping[axis]
        if self.standard_form:
            return 2.0 * w * z, w * w
        return w * w, 2.0 * w * z


@dataclass(frozen=True, eq=False)
class DiscreteLinearSystem:
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    tau: float
    state_labels: tuple = field(default=STATE_LABELS)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def step(self, x, u, d=None):
        x1 = self.A @ x + self.B @ u
        if d is not None:
            x1 = x1 + self.W @ d
        return x1


def _axis_core(drag, rate, stiff):
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -drag, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -stiff, -rate],
    ])
    B = np.array([0.0, 0.0, 0.0, stiff])
    return A, B


def build_continuous(params):
    """Continuous ``(A_c, B_c, W_c)`` of the 10-state core (no constant-disturbance states).

    Core order: ``[p_x, v_x, a_rx, j_rx, p_y, v_y, a_ry, j_ry, p_z, v_z]``.
    """
    A = np.zeros((10, 10))
    B = np.zeros((10, 3))
    W = np.zeros((10, 3))
    for ax in range(2):
        rate, stiff = params.filter_coefficients(ax)
        Aa, Ba = _axis_core(params.drag[ax], rate, stiff)
        s = 4 * ax
        A[s:s + 4, s:s + 4] = Aa
        B[s:s + 4, ax] = Ba
        W[s + 1, ax] = 1.0
    A[8, 9] = 1.0
    A[9, 9] = -params.drag[2]
    B[9, 2] = 1.0
    W[9, 2] = 1.0
    return A, B, W


def zoh(Ac, Bc, Wc, tau):
    """Exact zero-order-hold discretization of ``(A_c, [B_c W_c])``."""
    n, m, l = Ac.shape[0], Bc.shape[1], Wc.shape[1]
    M = np.zeros((n + m + l, n + m + l))
    M[:n, :n] = Ac
    M[:n, n:n + m] = Bc
    M[:n, n + m:] = Wc
    E = expm(M * tau)
    return E[:n, :n], E[:n, n:n + m], E[:n, n + m:]


def discretize(cont, tau):
    """Discretize the core and append the constant-disturbance states."""
    if tau <= 0:
        raise ModelError("sample time must be positive")
    Ad, Bd, Wd = zoh(*cont, tau)
    return augment_disturbance((Ad, Bd, Wd), tau)


def augment_disturbance(core, tau):
    """Insert one constant-disturbance state per axis.

    The new state feeds the same rows as the corresponding column of ``W``;
    its own row is the identity.
    """
    Ad, Bd, Wd = core
    n = N_STATE
    A = np.zeros((n, n))
    B = np.zeros((n, N_INPUT))
    W = np.zeros((n, N_DIST))
    A[np.ix_(CORE, CORE)] = Ad
    B[CORE] = Bd
    W[CORE] = Wd
    for ax in range(3):
        A[CORE, DBAR[ax]] = Wd[:, ax]
        A[DBAR[ax], DBAR[ax]] = 1.0
    return DiscreteLinearSystem(A, B, W, tau)


def build_model(params=None):
    params = params or PlanningModelParams()
    return discretize(build_continuous(params), params.sample_time)


def axis_blocks():
    """Index arrays of the three decoupled axes in the 13-state layout."""
    return (np.arange(0, 5), np.arange(5, 10), np.arange(10, 13))


# --- acceleration <-> attitude -------------------------------------------
#
# The transform pair works in a z-down frame, where hover means a_c = 0 and
# thrust T = g. The planner uses height-up, so its vertical component is
# negated at this boundary and nowhere else.


@dataclass(frozen=True)
class AttitudeCommand:
    thrust: float
    theta: float
    phi: float


def to_z_down(a_planner):
    a = np.array(a_planner, dtype=float)
    a[2] = -a[2]
    return a


def from_z_down(a_ned):
    return to_z_down(a_ned)


def inverse_transform(a_c, g=9.81):
    """Thrust and attitude commands producing the z-down acceleration ``a_c``."""
    ax, ay, az = (float(v) for v in a_c)
    den = az - g
    if abs(den) < 1e-9:
        raise ModelError("free-fall singularity: a_c,z equals g")
    T = float(np.sqrt(ax * ax + ay * ay + den * den))
    theta = float(np.arctan(ax / den))
    s = ay / T
    if abs(s) > 1.0:
        raise ModelError("roll command out of range")
    phi = float(np.arcsin(s))
    return AttitudeCommand(T, theta, phi)


def rotation(phi, theta, psi=0.0):
    """Body-to-world rotation for roll ``phi``, pitch ``theta``, yaw ``psi`` (z-y-x)."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    Rz = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cf, -sf], [0.0, sf, cf]])
    return Rz @ Ry @ Rx


def forward_transform(cmd, g=9.81):
    """z-down acceleration ``-R e_z T + e_z g`` with zero yaw."""
    R = rotation(cmd.phi, cmd.theta)
    ez = np.array([0.0, 0.0, 1.0])
    return -R @ ez * cmd.thrust + ez * g


def planner_to_command(a_planner, g=9.81):
    return inverse_transform(to_z_down(a_planner), g)


def command_to_planner(cmd, g=9.81):
    return from_z_down(forward_transform(cmd, g))
