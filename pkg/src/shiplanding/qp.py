"""Dense convex QP solver (primal active-set).

Solves::

    minimize    0.5 x'Hx + g'x
    subject to  A x <= b,   E x = e

The Hessian is factored once (H = R'R). The working-set matrix
``U = R^-T A_W'`` is kept as a thin QR factorization that is extended by one
Gram-Schmidt column when a constraint enters and refactored when one leaves.
A feasible start comes either from the caller (warm start) or from a
regularized phase-1 problem, which also decides infeasibility.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from . import kernels

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

FEAS_TOL = 1e-8
PHASE1_REG = 1e-8


class QpError(RuntimeError):
    """Raised for malformed problem data."""


@dataclass
class WarmStart:
    """Primal point and active-set hint carried between related solves."""

    primal: np.ndarray | None = None
    active: list = field(default_factory=list)


@dataclass
class QpSolution:
    primal: np.ndarray
    dual: np.ndarray
    status: str
    iterations: int
    kkt_residual: float
    active: list = field(default_factory=list)
    eq_dual: np.ndarray | None = None
    objective: float = float("nan")
    farkas: np.ndarray | None = None
    phase1_iterations: int = 0

    @property
    def ok(self):
        return self.status == OPTIMAL


class _WorkingSet:
    """Thin QR of ``U = R^-T A_W'`` for the rows currently held active."""

    def __init__(self, R, n):
        self.R = R
        self.n = n
        self.rows = []  # (kind, index) with kind 0 = equality, 1 = inequality
        self.normals = []
        self.Q = np.zeros((n, 0))
        self.T = np.zeros((0, 0))

    def __len__(self):
        return len(self.rows)

    def try_add(self, key, a, dep_tol=1e-10):
        if len(self.rows) >= self.n:
            return False
        u = solve_triangular(self.R, a, trans="T", check_finite=False)
        un = np.linalg.norm(u)
        if un == 0.0:
            return False
        w = u.copy()
        t = np.zeros(len(self.rows))
        if self.rows:
            for _ in range(2):
                c = self.Q.T @ w
                w -= self.Q @ c
                t += c
        rho = np.linalg.norm(w)
        if rho <= dep_tol * un:
            return False
        k = len(self.rows)
        T = np.zeros((k + 1, k + 1))
        T[:k, :k] = self.T
        T[:k, k] = t
        T[k, k] = rho
        self.T = T
        self.Q = np.column_stack([self.Q, w / rho])
        self.rows.append(key)
        self.normals.append(a)
        return True

    def remove(self, pos):
        del self.rows[pos]
        del self.normals[pos]
        if not self.rows:
            self.Q = np.zeros((self.n, 0))
            self.T = np.zeros((0, 0))
            return
        U = solve_triangular(self.R, np.array(self.normals).T, trans="T", check_finite=False)
        Q, T = np.linalg.qr(U)
        self.Q, self.T = Q, T

    def step(self, c, floor, rw):
        """Null-space step and multipliers for the equality-constrained subproblem.

        ``rw`` holds the working-row residuals ``b_W - A_W x``; the returned
        correction moves those rows back onto their boundary. The step is
        ``None`` when the projected gradient is below ``floor`` in the Hessian
        metric.
        """
        if not self.rows:
            return (None if np.linalg.norm(c) <= floor else
                    -solve_triangular(self.R, c, check_finite=False)), np.zeros(0), None
        qc = self.Q.T @ c
        lam = -solve_triangular(self.T, qc, check_finite=False)
        cp = c - self.Q @ qc
        corr = None
        if np.any(rw != 0.0):
            y = solve_triangular(self.T, rw, trans="T", check_finite=False)
            corr = solve_triangular(self.R, self.Q @ y, check_finite=False)
        if len(self.rows) >= self.n or np.linalg.norm(cp) <= floor:
            return None, lam, corr
        return -solve_triangular(self.R, cp, check_finite=False), lam, corr


def _as_rows(A, b, n):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.size == 0:
        return np.zeros((0, n)), np.zeros(0)
    if A.shape[1] != n or A.shape[0] != b.shape[0]:
        raise QpError(f"constraint shapes {A.shape} / {b.shape} do not match n={n}")
    return A, b


def _normalize(A, b):
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0.0] = 1.0
    return A / norms[:, None], b / norms, norms


def _active_set_loop(H, g, R, A, b, E, e, x, seed, max_iter, tol):
    """Primal active-set iterations from a feasible ``x``.

    Rows of ``A`` must be unit-norm. Returns ``(x, lam, mu, ws, iters, status)``.
    """
    n = x.shape[0]
    m = A.shape[0]
    ws = _WorkingSet(R, n)
    for i in range(E.shape[0]):
        ws.try_add((0, i), E[i])
    in_ws = np.zeros(m, dtype=bool)
    r = b - A @ x
    for i in seed:
        if 0 <= i < m and not in_ws[i] and abs(r[i]) <= 1e-9 * (1.0 + abs(b[i])):
            if ws.try_add((1, i), A[i]):
                in_ws[i] = True

    status = MAX_ITER
    it = 0
    lam = np.zeros(0)
    skipped = []
    rmin = float(np.min(np.abs(np.diag(R)))) if n else 1.0
    gnorm = float(np.linalg.norm(g))
    while it < max_iter:
        it += 1
        hx = H @ x
        q = hx + g
        c = solve_triangular(R, q, trans="T", check_finite=False)
        floor = tol["step"] * max(1.0, gnorm, float(np.linalg.norm(hx))) / rmin
        rw = np.array([(e[i] - E[i] @ x) if kind == 0 else r[i] for kind, i in ws.rows])
        p, lam, corr = ws.step(c, floor, rw)
        if corr is not None:
            if p is None:
                x = x + corr
                r = b - A @ x
            else:
                p = p + corr
        if p is not None and np.max(np.abs(p)) <= 1e-14 * (1.0 + np.max(np.abs(x))):
            p = None
        if p is None:
            ineq_pos = [k for k, key in enumerate(ws.rows) if key[0] == 1]
            if not ineq_pos:
                status = OPTIMAL
                break
            lam_in = lam[ineq_pos]
            scale = max(1.0, np.max(np.abs(q)))
            j = int(np.argmin(lam_in))
            if lam_in[j] >= -tol["dual"] * scale:
                status = OPTIMAL
                break
            # most negative multiplier; argmin already takes the first on ties,
            # and positions are ordered by entry, so break ties by row index
            worst = lam_in[j]
            cands = [ineq_pos[k] for k in range(len(ineq_pos)) if lam_in[k] == worst]
            pos = min(cands, key=lambda k: ws.rows[k][1])
            row = ws.rows[pos][1]
            ws.remove(pos)
            in_ws[row] = False
            in_ws[skipped] = False
            skipped.clear()
            continue
        ap = A @ p
        pn = np.max(np.abs(p))
        alpha, idx = kernels.ratio_test(ap, r, in_ws, tol["ratio"] * pn)
        x = x + min(alpha, 1.0) * p
        r = b - A @ x
        if alpha < 1.0:
            if not ws.try_add((1, idx), A[idx]):
                # numerically dependent on the working set: skip it until the set shrinks
                in_ws[idx] = True
                skipped.append(idx)
                continue
            in_ws[idx] = True
    mu = np.zeros(E.shape[0])
    lam_full = np.zeros(m)
    for k, (kind, i) in enumerate(ws.rows):
        if k < lam.shape[0]:
            if kind == 0:
                mu[i] = lam[k]
            else:
                lam_full[i] = lam[k]
    return x, lam_full, mu, ws, it, status


def _kkt(H, g, A, b, E, e, x, lam, mu):
    grad = H @ x + g
    stat = grad + A.T @ lam + E.T @ mu
    scale = max(1.0, np.max(np.abs(g)) if g.size else 0.0, np.max(np.abs(H @ x)) if x.size else 0.0)
    res = np.max(np.abs(stat)) / scale if stat.size else 0.0
    if A.shape[0]:
        slack = A @ x - b
        bscale = max(1.0, np.max(np.abs(b)))
        res = max(res, max(0.0, np.max(slack)) / bscale)
        res = max(res, max(0.0, -np.min(lam)) / scale)
        res = max(res, np.max(np.abs(lam * slack)) / (scale * bscale))
    if E.shape[0]:
        res = max(res, np.max(np.abs(E @ x - e)) / max(1.0, np.max(np.abs(e))))
    return float(res)


def find_feasible_point(A, b, E=None, e=None, start=None, max_iter=None):
    """Phase 1: minimize ``t + reg/2 (|x - start|^2 + t^2)`` s.t. ``Ax - t <= b, t >= 0, Ex = e``.

    Returns ``(x, t, active_rows, farkas, iterations, status)`` where ``t`` is
    the smallest uniform violation found. ``status`` is ``optimal`` when the
    phase-1 problem itself converged.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    E = np.zeros((0, n)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
    e = np.zeros(0) if e is None else np.asarray(e, dtype=float).reshape(-1)
    x0 = np.zeros(n) if start is None else np.array(start, dtype=float)
    if E.shape[0]:
        x0 = x0 - np.linalg.lstsq(E, E @ x0 - e, rcond=None)[0]
    An, bn, norms = _normalize(A, b) if m else (A, b, np.ones(0))
    t0 = max(0.0, float(np.max(An @ x0 - bn))) if m else 0.0
    if t0 == 0.0:
        return x0, 0.0, [], None, 0, OPTIMAL

    # variables (x, t); rows: An x - t <= bn, -t <= 0
    A1 = np.zeros((m + 1, n + 1))
    A1[:m, :n] = An
    A1[:m, n] = -1.0
    A1[m, n] = -1.0
    b1 = np.concatenate([bn, [0.0]])
    A1n, b1n, n1 = _normalize(A1, b1)
    E1 = np.hstack([E, np.zeros((E.shape[0], 1))])
    H1 = PHASE1_REG * np.eye(n + 1)
    g1 = np.concatenate([-PHASE1_REG * x0, [1.0]])
    R1 = np.sqrt(PHASE1_REG) * np.eye(n + 1)
    y0 = np.concatenate([x0, [t0 * (1.0 + 1e-12) + 1e-300]])
    if max_iter is None:
        max_iter = 10 * (n + m + 10)
    tol = {"step": 1e-13, "dual": 1e-10, "ratio": 1e-12}
    y, lam, mu, ws, it, status = _active_set_loop(H1, g1, R1, A1n, b1n, E1, e, y0, [], max_iter, tol)
    # the proximal term can leave a tiny positive t; re-anchor and repeat
    for _ in range(3):
        if not (FEAS_TOL < y[n] < 1e-4) or status != OPTIMAL:
            break
        g1 = np.concatenate([-PHASE1_REG * y[:n], [1.0]])
        seed = [i for (kind, i) in ws.rows if kind == 1]
        y, lam, mu, ws, it2, status = _active_set_loop(H1, g1, R1, A1n, b1n, E1, e, y, seed, max_iter, tol)
        it += it2
    x, t = y[:n], y[n]
    act = [i for (kind, i) in ws.rows if kind == 1 and i < m]
    if t <= FEAS_TOL and act:
        # snap the binding rows onto their boundary so no residual violation is carried over
        W = np.vstack([An[act], E]) if E.shape[0] else An[act]
        res = np.concatenate([An[act] @ x - bn[act], E @ x - e]) if E.shape[0] else An[act] @ x - bn[act]
        xs = x - np.linalg.lstsq(W, res, rcond=None)[0]
        ts = max(0.0, float(np.max(An @ xs - bn)))
        if ts < max(0.0, float(np.max(An @ x - bn))):
            x = xs
        t = max(0.0, float(np.max(An @ x - bn)))
    farkas = None
    if t > FEAS_TOL:
        farkas = lam[:m] / n1[:m] / norms
    return x, float(t), act, farkas, it, status


def _equality_minimizer(H, g, E, e):
    n, k = g.shape[0], E.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    K[:n, n:] = E.T
    K[n:, :n] = E
    try:
        sol = np.linalg.lstsq(K, np.concatenate([-g, e]), rcond=None)[0] if k else np.linalg.solve(H, -g)
    except np.linalg.LinAlgError:
        return None
    x = sol[:n]
    return x if np.all(np.isfinite(x)) else None


def _repair(A, b, E, e, x, seed, rounds=3):
    """Move a slightly infeasible warm point onto the hinted rows and the violated ones.

    Least-squares correction over ``seed`` rows, currently violated rows and
    equalities; returns a feasible point or ``None``.
    """
    m = A.shape[0]
    rows = set(i for i in seed if 0 <= i < m)
    for _ in range(rounds):
        rows |= set(np.flatnonzero(A @ x - b > 1e-10).tolist())
        idx = sorted(rows)
        W = np.vstack([A[idx], E])
        res = np.concatenate([A[idx] @ x - b[idx], E @ x - e])
        x = x - np.linalg.lstsq(W, res, rcond=None)[0]
        viol = float(np.max(A @ x - b))
        eqv = float(np.max(np.abs(E @ x - e))) if E.shape[0] else 0.0
        if viol <= 1e-10 and eqv <= 1e-10:
            return x
    return None


def solve_qp(hessian, gradient, ineq_normals=None, ineq_offsets=None, warm_hint=None, *,
             eq_normals=None, eq_offsets=None, max_iter=None, reg=1e-9):
    """Minimize ``0.5 x'Hx + g'x`` subject to ``Ax <= b`` (and optionally ``Ex = e``).

    ``warm_hint`` may carry a primal point (used as-is when feasible, else as
    the phase-1 anchor) and a list of inequality indices expected to be active.
    """
    H = np.atleast_2d(np.asarray(hessian, dtype=float))
    g = np.asarray(gradient, dtype=float).reshape(-1)
    n = g.shape[0]
    if H.shape != (n, n):
        raise QpError(f"hessian shape {H.shape} does not match gradient length {n}")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(g))):
        raise QpError("non-finite objective data")
    A, b = _as_rows(ineq_normals, ineq_offsets, n)
    E, e = _as_rows(eq_normals, eq_offsets, n)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise QpError("non-finite constraint data")
    m = A.shape[0]
    if max_iter is None:
        max_iter = 10 * (n + m) + 100

    Hs = 0.5 * (H + H.T)
    Hr = Hs + reg * np.eye(n)
    try:
        R = cho_factor(Hr, lower=False, check_finite=False)[0]
        R = np.triu(R)
    except np.linalg.LinAlgError as err:
        raise QpError("hessian is not positive definite after regularization") from err
    An, bn, norms = _normalize(A, b) if m else (A, b, np.ones(0))

    hint = warm_hint or WarmStart()
    x = None if hint.primal is None else np.array(hint.primal, dtype=float)
    seed = list(hint.active)
    p1_iters = 0
    feasible = False
    if x is None or x.shape != (n,):
        # anchor phase 1 at the minimizer over the equality constraints alone
        x = _equality_minimizer(Hr, g, E, e)
    if x is not None:
        viol = float(np.max(An @ x - bn)) if m else 0.0
        eqv = float(np.max(np.abs(E @ x - e))) if E.shape[0] else 0.0
        feasible = viol <= 1e-10 and eqv <= 1e-10
        if not feasible and hint.primal is not None and m:
            xr = _repair(An, bn, E, e, x, seed)
            if xr is not None:
                x, feasible = xr, True
    if not feasible:
        x, t, act, farkas, p1_iters, p1_status = find_feasible_point(An, bn, E, e, start=x)
        if p1_status != OPTIMAL and t > FEAS_TOL:
            return QpSolution(x, np.zeros(m), MAX_ITER, p1_iters, float("inf"),
                              phase1_iterations=p1_iters)
        if t > FEAS_TOL:
            return QpSolution(x, np.zeros(m), INFEASIBLE, p1_iters, float("inf"),
                              farkas=None if farkas is None else farkas / norms,
                              phase1_iterations=p1_iters)
        # start the main loop with an empty working set; phase-1 vertices tend
        # to carry many rows that would only be dropped one by one

    tol = {"step": 1e-12, "dual": 1e-11, "ratio": 1e-12}
    x, lam, mu, ws, it, status = _active_set_loop(Hr, g, R, An, bn, E, e, x, seed, max_iter, tol)
    dual = lam / norms if m else lam
    kkt = _kkt(Hs, g, A, b, E, e, x, dual, mu)
    active = [i for (kind, i) in ws.rows if kind == 1]
    obj = float(0.5 * x @ Hs @ x + g @ x)
    return QpSolution(x, dual, status, it + p1_iters, kkt, active=active, eq_dual=mu,
                      objective=obj, phase1_iterations=p1_iters)
