"""Move-blocked shrinking-horizon MPC.

The decision vector at step ``k`` is ``y = (z0, V)`` where ``z0`` is the nominal
initial state and ``V`` stacks one input per remaining input block. Block
boundaries are fixed in absolute maneuver time, so as the horizon shrinks the
current block loses its elapsed steps and later blocks are untouched. All
prediction quantities are tabulated once over absolute time; a step then only
slices those tables.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import qp, sets

INPUT, STATE, HEIGHT, VRS = "input", "state", "height", "vrs"


class ShmpcError(RuntimeError):
    pass


class InfeasibleStep(ShmpcError):
    def __init__(self, k, solution, rows):
        super().__init__(f"QP infeasible at step {k}")
        self.k = k
        self.solution = solution
        self.rows = rows


def block_lengths(N0, Nbar):
    """Lengths of the input blocks over a fresh horizon of ``N0`` steps.

    The first ``Nbar - 1`` blocks share ``floor((N0 - 1) / (Nbar - 1))`` steps
    each and the last block takes the remainder.
    """
    if N0 < 1 or Nbar < 1:
        raise ValueError("horizon and block count must be positive")
    nb = min(Nbar, N0)
    if nb == 1:
        return [N0]
    q = (N0 - 1) // (nb - 1)
    lengths = [q] * (nb - 1)
    lengths.append(N0 - q * (nb - 1))
    return lengths


def block_starts(N0, Nbar):
    return np.concatenate([[0], np.cumsum(block_lengths(N0, Nbar))[:-1]]).astype(int)


def blocking_matrix(N_k, Nbar, N0=None):
    """Blocking matrix ``M_k`` (``N_k`` rows, one column per remaining block).

    ``N0`` is the full maneuver length; by default the horizon is fresh
    (``N0 = N_k``). Rows correspond to absolute steps ``N0 - N_k .. N0 - 1``.
    """
    N0 = N_k if N0 is None else N0
    if not 1 <= N_k <= N0 or Nbar < 1:
        raise ValueError(f"invalid sizes N_k={N_k}, Nbar={Nbar}, N0={N0}")
    k = N0 - N_k
    lengths = block_lengths(N0, Nbar)
    owner = np.repeat(np.arange(len(lengths)), lengths)[k:]
    cols = owner - owner[0]
    M = np.zeros((N_k, cols[-1] + 1))
    M[np.arange(N_k), cols] = 1.0
    return M


@dataclass(frozen=True, eq=False)
class StageConstraints:
    """Stage set over ``[u; x]`` with a kind tag per row."""

    poly: sets.HPolytope
    kinds: tuple
    n_input: int

    def __post_init__(self):
        if len(self.kinds) != self.poly.n_facets:
            raise ValueError("one kind tag per row required")

    @property
    def Fu(self):
        return self.poly.normals[:, :self.n_input]

    @property
    def Fx(self):
        return self.poly.normals[:, self.n_input:]

    @property
    def f(self):
        return self.poly.offsets

    def with_poly(self, poly):
        return StageConstraints(poly, self.kinds, self.n_input)


def stage_tube(Z, K, input_tube=None):
    """Zonotope over ``[u; x]``: ``{(-K e, e) | e in Z}`` plus an extra input-only part."""
    K = np.atleast_2d(K)
    M = np.vstack([-K, np.eye(Z.dim)])
    T = sets.affine_image(M, None, Z)
    if input_tube is not None:
        pad = sets.Zonotope(np.concatenate([input_tube.center, np.zeros(Z.dim)]),
                            np.vstack([input_tube.generators,
                                       np.zeros((Z.dim, input_tube.n_generators))]))
        T = sets.minkowski_sum(T, pad)
    return T


def tighten(F, XT, Z, K, input_tube=None):
    """Tightened stage and terminal sets: ``F - (K Z x Z)`` and ``X_T - Z``.

    ``F`` may be an ``HPolytope`` or ``StageConstraints``; the same type is
    returned. Empty results raise ``ShmpcError``.
    """
    poly = F.poly if isinstance(F, StageConstraints) else F
    Fb = sets.erode(poly, stage_tube(Z, K, input_tube))
    XTb = sets.erode(XT, Z) if XT is not None else None
    if sets.is_empty(Fb):
        raise ShmpcError("tightened stage set is empty")
    if XTb is not None and sets.is_empty(XTb):
        raise ShmpcError("tightened terminal set is empty")
    if isinstance(F, StageConstraints):
        Fb = F.with_poly(Fb)
    return Fb, XTb


@dataclass(eq=False)
class ShmpcConfig:
    N0: int
    Nbar: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    P0: np.ndarray
    F_bar: StageConstraints
    XT_bar: sets.HPolytope
    eps0_set: sets.HPolytope  # constraint on x_k - z0
    z_T: np.ndarray  # terminal cost center
    dbar_index: np.ndarray
    height_index: int
    reference: np.ndarray | None = None  # (N0, n) stage reference for z
    stride: int = 5
    low_height: float = 5.0
    lazy_rounds: int = 4
    lazy_tol: float = 1e-9

    def __post_init__(self):
        if not 1 <= self.Nbar <= self.N0:
            raise ValueError("need 1 <= Nbar <= N0")
        for name in ("P", "P0"):
            M = getattr(self, name)
            if np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) <= 0:
                raise ValueError(f"{name} must be positive definite")
        Hs = np.block([[self.Q, np.zeros((self.Q.shape[0], self.R.shape[0]))],
                       [np.zeros((self.R.shape[0], self.Q.shape[0])), self.R]])
        if np.min(np.linalg.eigvalsh(0.5 * (Hs + Hs.T))) < -1e-12:
            raise ValueError("stage cost must be positive semi-definite")

    @property
    def H(self):
        n, m = self.Q.shape[0], self.R.shape[0]
        out = np.zeros((n + m, n + m))
        out[:n, :n] = self.Q
        out[n:, n:] = self.R
        return out


@dataclass(eq=False)
class QpInstance:
    hessian: np.ndarray
    gradient: np.ndarray
    ineq_normals: np.ndarray
    ineq_offsets: np.ndarray
    eq_normals: np.ndarray
    eq_offsets: np.ndarray
    row_keys: np.ndarray
    k: int
    n_blocks: int
    n_state: int
    n_input: int

    @property
    def n_decision(self):
        return self.hessian.shape[0]


@dataclass
class StepResult:
    z0: np.ndarray
    v0: np.ndarray
    trajectory: np.ndarray  # (N_k + 1, n) nominal states z_k .. z_N0
    inputs: np.ndarray  # (N_k, m) nominal inputs
    V: np.ndarray  # (n_blocks, m)
    cost: float
    iterations: int
    solve_ms: float
    active: int
    rows: int
    lazy_rounds: int


@dataclass
class WarmState:
    k: int
    y: np.ndarray
    active_keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    trajectory: np.ndarray | None = None


def _positions(keys, wanted):
    """Indices of ``wanted`` keys within ``keys`` (missing ones are skipped)."""
    wanted = np.asarray(wanted, dtype=keys.dtype)
    if wanted.size == 0:
        return []
    order = np.argsort(keys, kind="stable")
    pos = np.searchsorted(keys, wanted, sorter=order)
    pos = np.minimum(pos, keys.shape[0] - 1)
    hit = keys[order[pos]] == wanted
    return order[pos[hit]].tolist()


def decode_key(key, n_rows, n_e):
    """Human-readable form of a row key: ``("stage", t, row)``, ``("eps0", i)`` or ``("terminal", i)``."""
    key = int(key)
    if key >= 0:
        return ("stage", key // n_rows, key % n_rows)
    if key >= -n_e:
        return ("eps0", -1 - key)
    return ("terminal", -1 - n_e - key)


class ShmpcController:
    """Precomputed prediction tables and the per-step QP."""

    def __init__(self, sys, cfg):
        self.sys = sys
        self.cfg = cfg
        n, m = sys.n, sys.m
        self.n, self.m = n, m
        N0, nb = cfg.N0, min(cfg.Nbar, cfg.N0)
        self.nb = nb
        self.starts = block_starts(N0, cfg.Nbar)
        self.owner = np.repeat(np.arange(nb), block_lengths(N0, cfg.Nbar))
        A, B = sys.A, sys.B
        # A^i, i = 0..N0
        Apow = np.empty((N0 + 1, n, n))
        Apow[0] = np.eye(n)
        for i in range(N0):
            Apow[i + 1] = A @ Apow[i]
        self.Apow = Apow
        # Gall[t]: response of z_t to each block input, from time 0
        G = np.zeros((N0 + 1, n, m * nb))
        for t in range(N0):
            G[t + 1] = A @ G[t]
            b = self.owner[t]
            G[t + 1][:, m * b:m * (b + 1)] += B
        self.G = G
        # cost tables
        Q = cfg.Q
        S = np.zeros((N0 + 1, n, n))  # S[j] = sum_{i<j} A^i' Q A^i
        for j in range(N0):
            S[j + 1] = S[j] + Apow[j].T @ Q @ Apow[j]
        self.S = S
        X = np.zeros((N0 + 1, n, m * nb))  # X[k] = sum_{t>=k} A^{t-k}' Q G[t]
        Y = np.zeros((N0 + 1, m * nb, m * nb))  # Y[k] = sum_{t>=k} G[t]' Q G[t]
        for t in range(N0 - 1, -1, -1):
            QG = Q @ G[t]
            X[t] = QG + A.T @ X[t + 1]
            Y[t] = Y[t + 1] + G[t].T @ QG
        self.X, self.Y = X, Y
        ref = np.zeros((N0, n)) if cfg.reference is None else np.asarray(cfg.reference, dtype=float)
        self.ref = ref
        yv = np.zeros((N0 + 1, n))  # sum_{t>=k} A^{t-k}' Q r_t
        yg = np.zeros((N0 + 1, m * nb))  # sum_{t>=k} G[t]' Q r_t
        for t in range(N0 - 1, -1, -1):
            Qr = Q @ ref[t]
            yv[t] = Qr + A.T @ yv[t + 1]
            yg[t] = yg[t + 1] + G[t].T @ Qr
        self.yv, self.yg = yv, yg
        # constraint tables
        Fx, Fu = cfg.F_bar.Fx, cfg.F_bar.Fu
        self.Fx, self.Fu, self.f = Fx, Fu, cfg.F_bar.f
        self.FxA = np.einsum("rn,inj->irj", Fx, Apow)
        self.FxG = np.einsum("rn,tnj->trj", Fx, G)
        kinds = np.array(cfg.F_bar.kinds)
        self.rows_input = np.flatnonzero(kinds == INPUT)
        self.rows_state = np.flatnonzero(kinds == STATE)
        self.rows_low = np.flatnonzero((kinds == HEIGHT) | (kinds == VRS))
        self.HT = cfg.XT_bar.normals
        self.hT = cfg.XT_bar.offsets
        self.HTG = self.HT @ G[N0]
        self.E0 = cfg.eps0_set
        self.is_start = np.zeros(N0, dtype=bool)
        self.is_start[self.starts] = True

    # -- prediction -------------------------------------------------------
    def current_block(self, k):
        return int(self.owner[k])

    def remaining_blocks(self, k):
        return self.nb - self.current_block(k)

    def predict(self, k, z0, V):
        """Nominal states ``z_k .. z_N0`` and inputs from ``(z0, V)`` by direct simulation."""
        N_k = self.cfg.N0 - k
        cur = self.current_block(k)
        V = np.asarray(V).reshape(-1, self.m)
        z = np.empty((N_k + 1, self.n))
        u = np.empty((N_k, self.m))
        z[0] = z0
        for i in range(N_k):
            u[i] = V[self.owner[k + i] - cur]
            z[i + 1] = self.sys.A @ z[i] + self.sys.B @ u[i]
        return z, u

    def _transform(self, k):
        """Matrix ``T`` with ``(w, V) = T (z0, V)``."""
        cur = self.current_block(k)
        nv = self.m * (self.nb - cur)
        T = np.eye(self.n + nv)
        T[:self.n, self.n:self.n + self.m] = -self.G[k][:, self.m * cur:self.m * (cur + 1)]
        return T

    def predict_condensed(self, k, y):
        """Same as :meth:`predict` but through the tabulated condensed maps."""
        cur = self.current_block(k)
        w_V = self._transform(k) @ y
        w, V = w_V[:self.n], w_V[self.n:]
        N0 = self.cfg.N0
        Gs = self.G[k:N0 + 1, :, self.m * cur:]
        return np.einsum("inj,j->in", self.Apow[:N0 - k + 1], w) + Gs @ V

    # -- QP assembly ------------------------------------------------------
    def build_qp(self, x, k, dbar, extra_rows=(), low_mask=None):
        """Condensed QP at step ``k`` for measured state ``x`` and disturbance estimate ``dbar``."""
        cfg, n, m = self.cfg, self.n, self.m
        N0 = cfg.N0
        if not 0 <= k < N0:
            raise ShmpcError(f"step {k} outside the horizon")
        x = np.asarray(x, dtype=float)
        if x.shape != (n,):
            raise ShmpcError(f"state has shape {x.shape}, expected ({n},)")
        N_k = N0 - k
        cur = self.current_block(k)
        nbk = self.nb - cur
        nv = m * nbk
        cols = slice(m * cur, m * self.nb)

        # objective in (w, V)
        Hw = np.zeros((n + nv, n + nv))
        gw = np.zeros(n + nv)
        Hw[:n, :n] = self.S[N_k]
        Hw[:n, n:] = self.X[k][:, cols]
        Hw[n:, :n] = Hw[:n, n:].T
        Hw[n:, n:] = self.Y[k][cols, cols]
        gw[:n] = -self.yv[k]
        gw[n:] = -self.yg[k][cols]
        counts = np.bincount(self.owner[k:] - cur, minlength=nbk)
        for j in range(nbk):
            Hw[n + m * j:n + m * (j + 1), n + m * j:n + m * (j + 1)] += counts[j] * cfg.R
        Phi = self.Apow[N_k]
        GN = self.G[N0][:, cols]
        TN = np.hstack([Phi, GN])
        Hw += TN.T @ cfg.P @ TN
        gw -= TN.T @ cfg.P @ cfg.z_T
        T = self._transform(k)
        Hz = T.T @ Hw @ T
        gz = T.T @ gw
        # initial-error cost on x - z0
        Hz[:n, :n] += cfg.P0
        gz[:n] -= cfg.P0 @ x
        Hz = 2.0 * Hz
        gz = 2.0 * gz
        Hz = 0.5 * (Hz + Hz.T)

        # row keys: stage rows t * r + row (>= 0), error-set rows -1 - i,
        # terminal rows -1 - n_e - i; stable across steps for warm starting
        n_rows = self.f.shape[0]
        Ae, be = self.E0.normals, self.E0.offsets
        n_e = Ae.shape[0]
        C0 = np.zeros((n_e, n + nv))
        C0[:, :n] = -Ae
        b0 = be - Ae @ x
        k0 = -1 - np.arange(n_e)

        # stage rows at the selected times
        N_k_idx = np.arange(N_k)
        t_all = k + N_k_idx
        regular = (t_all % cfg.stride == 0) | self.is_start[k:N0] | (t_all == N0 - 1)
        regular[0] = True
        starts_now = self.is_start[k:N0].copy()
        starts_now[0] = True
        if low_mask is None:
            low_mask = np.ones(N_k, dtype=bool)
        sel = np.zeros((N_k, n_rows), dtype=bool)
        sel[np.ix_(regular, self.rows_state)] = True
        sel[np.ix_(starts_now, self.rows_input)] = True
        sel[np.ix_(low_mask | regular, self.rows_low)] = True
        for t, r in extra_rows:
            sel[t - k, r] = True
        ii, rr = np.nonzero(sel)
        tt = ii + k
        nr = ii.shape[0]
        Cs = np.empty((nr, n + nv))
        Cs[:, :n] = self.FxA[ii, rr]
        Cs[:, n:] = self.FxG[tt, rr][:, cols]
        bcol = n + m * (self.owner[tt] - cur)
        Cs[np.arange(nr)[:, None], bcol[:, None] + np.arange(m)] += self.Fu[rr]
        Gc = self.G[k][:, m * cur:m * (cur + 1)]
        Cs[:, n:n + m] -= Cs[:, :n] @ Gc
        bs = self.f[rr]
        ks = tt * n_rows + rr

        # terminal set at N0
        HA = self.HT @ Phi
        Ct = np.hstack([HA, self.HTG[:, cols]])
        Ct[:, n:n + m] -= HA @ Gc
        kt = -1 - n_e - np.arange(self.HT.shape[0])

        Aineq = np.vstack([C0, Cs, Ct])
        bineq = np.concatenate([b0, bs, self.hT])
        keys = np.concatenate([k0, ks, kt])
        keep = np.any(Aineq != 0.0, axis=1)
        if not np.all(keep):
            if np.any(bineq[~keep] < 0):
                raise ShmpcError("constant constraint row is violated")
            Aineq, bineq, keys = Aineq[keep], bineq[keep], keys[keep]
        E = np.zeros((len(cfg.dbar_index), n + nv))
        E[np.arange(len(cfg.dbar_index)), cfg.dbar_index] = 1.0
        e = np.asarray(dbar, dtype=float)
        return QpInstance(Hz, gz, Aineq, bineq, E, e, keys, k, nbk, n, m)

    # -- solve ------------------------------------------------------------
    def _low_mask(self, k, warm):
        N_k = self.cfg.N0 - k
        if warm is None or warm.trajectory is None:
            if self.cfg.reference is None:
                return np.ones(N_k, dtype=bool)
            return self.ref[k:, self.cfg.height_index] < self.cfg.low_height
        traj = warm.trajectory
        off = k - warm.k
        h = traj[off:off + N_k, self.cfg.height_index]
        mask = np.ones(N_k, dtype=bool)
        mask[:h.shape[0]] = h < self.cfg.low_height
        return mask

    def shift_warm(self, warm, k):
        """Shifted primal for step ``k`` from the solution at ``warm.k``."""
        if warm is None or warm.k >= k:
            return None
        traj = warm.trajectory
        off = k - warm.k
        if traj is None or off >= traj.shape[0]:
            return None
        cur_old = self.current_block(warm.k)
        cur = self.current_block(k)
        V_old = warm.y[self.n:].reshape(-1, self.m)
        V = V_old[cur - cur_old:]
        return np.concatenate([traj[off], V.ravel()])

    def solve_step(self, x, k, dbar, warm=None):
        """Solve the step-``k`` QP; returns ``(StepResult, WarmState)``."""
        t0 = time.perf_counter()
        cfg, n, m = self.cfg, self.n, self.m
        low = self._low_mask(k, warm)
        y0 = self.shift_warm(warm, k)
        keys_prev = warm.active_keys if warm is not None else np.zeros(0, dtype=int)
        extra = []
        total_iters = 0
        for rnd in range(cfg.lazy_rounds + 1):
            inst = self.build_qp(x, k, dbar, extra_rows=extra, low_mask=low)
            hint = qp.WarmStart(y0, _positions(inst.row_keys, keys_prev))
            sol = qp.solve_qp(inst.hessian, inst.gradient, inst.ineq_normals, inst.ineq_offsets,
                              hint, eq_normals=inst.eq_normals, eq_offsets=inst.eq_offsets)
            total_iters += sol.iterations
            if sol.status == qp.INFEASIBLE:
                raise InfeasibleStep(k, sol, inst.row_keys)
            if not sol.ok:
                raise ShmpcError(f"QP at step {k} stopped with status {sol.status}")
            y = sol.primal
            keys_prev = inst.row_keys[np.asarray(sol.active, dtype=int)]
            y0 = y
            traj, inputs = self._rollout(k, y)
            viol = self._full_check(k, traj, inputs)
            if not viol:
                break
            extra = extra + viol
        else:
            raise ShmpcError(f"lazy constraint rounds exhausted at step {k}")
        ms = 1e3 * (time.perf_counter() - t0)
        V = y[n:].reshape(-1, m)
        res = StepResult(y[:n].copy(), V[0].copy(), traj, inputs, V, sol.objective, total_iters,
                         ms, len(sol.active), inst.ineq_normals.shape[0], rnd)
        return res, WarmState(k, y, keys_prev, traj)

    def _rollout(self, k, y):
        traj = self.predict_condensed(k, y)
        cur = self.current_block(k)
        V = y[self.n:].reshape(-1, self.m)
        inputs = V[self.owner[k:] - cur]
        return traj, inputs

    def _full_check(self, k, traj, inputs):
        """Stage rows violated anywhere on the full-resolution trajectory."""
        N_k = self.cfg.N0 - k
        val = traj[:N_k] @ self.Fx.T + inputs @ self.Fu.T - self.f
        bad = np.argwhere(val > self.cfg.lazy_tol)
        return [(int(k + i), int(r)) for i, r in bad]

    def cost(self, k, x, y):
        """Objective value of ``y`` at step ``k`` (same scaling as the QP, without constants)."""
        inst = self.build_qp(x, k, y[self.cfg.dbar_index])
        return float(0.5 * y @ inst.hessian @ y + inst.gradient @ y)
