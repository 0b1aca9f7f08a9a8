"""Convex set algebra on H-polytopes and zonotopes.

Both set types are immutable. Operations return new objects and never
mutate their inputs.
"""

import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import qp

EMPTY_TOL = 1e-8
DEFAULT_MAX_GENERATORS = 60


class SetError(ValueError):
    """Dimension mismatch or otherwise malformed set data."""


class SolverFailure(RuntimeError):
    """The feasibility problem behind ``is_empty`` did not converge."""


def _frozen(a, ndim):
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise SetError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HPolytope:
    """The set ``{x | normals @ x <= offsets}``."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        A = np.array(self.normals, dtype=float)
        if A.ndim == 1:
            A = A.reshape(1, -1) if A.size else A.reshape(0, 0)
        b = np.array(self.offsets, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise SetError(f"{A.shape[0]} normals but {b.shape[0]} offsets")
        if A.shape[0] and np.any(np.all(A == 0.0, axis=1)):
            raise SetError("zero normal row")
        object.__setattr__(self, "normals", _frozen(A, 2))
        object.__setattr__(self, "offsets", _frozen(b, 1))

    @property
    def dim(self):
        return self.normals.shape[1]

    @property
    def n_facets(self):
        return self.normals.shape[0]

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.shape[0]
        eye = np.eye(n)
        A = np.vstack([eye, -eye])
        b = np.concatenate([upper, -lower])
        keep = np.isfinite(b)
        return cls(A[keep], b[keep])

    @classmethod
    def universe(cls, n):
        return cls(np.zeros((0, n)), np.zeros(0))

    def contains(self, x, tol=1e-9):
        """Membership for one point ``(n,)`` or a batch ``(k, n)``."""
        x = np.asarray(x, dtype=float)
        if self.n_facets == 0:
            return True if x.ndim == 1 else np.ones(x.shape[0], dtype=bool)
        viol = x @ self.normals.T - self.offsets
        return np.all(viol <= tol, axis=-1)

    def violation(self, x):
        """Largest constraint violation (negative when strictly inside)."""
        if self.n_facets == 0:
            return -np.inf
        return float(np.max(self.normals @ np.asarray(x, dtype=float) - self.offsets))

    def to_dict(self):
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, data):
        A = np.array(data["normals"], dtype=float)
        b = np.array(data["offsets"], dtype=float)
        if A.size == 0:
            A = A.reshape(0, int(data.get("dim", 0)))
        return cls(A, b)


@dataclass(frozen=True, eq=False)
class Zonotope:
    """The set ``{center + generators @ beta | ||beta||_inf <= 1}``."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        G = np.array(self.generators, dtype=float)
        if G.size == 0:
            G = G.reshape(c.shape[0], 0)
        if G.ndim == 1:
            G = G.reshape(-1, 1)
        if G.shape[0] != c.shape[0]:
            raise SetError(f"generator rows {G.shape[0]} != center length {c.shape[0]}")
        object.__setattr__(self, "center", _frozen(c, 1))
        object.__setattr__(self, "generators", _frozen(G, 2))

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def n_generators(self):
        return self.generators.shape[1]

    @classmethod
    def box(cls, halfwidths, center=None):
        h = np.asarray(halfwidths, dtype=float)
        c = np.zeros_like(h) if center is None else np.asarray(center, dtype=float)
        nz = np.flatnonzero(h)
        G = np.zeros((h.shape[0], nz.shape[0]))
        G[nz, np.arange(nz.shape[0])] = h[nz]
        return cls(c, G)

    @classmethod
    def point(cls, c):
        c = np.asarray(c, dtype=float)
        return cls(c, np.zeros((c.shape[0], 0)))

    def interval_hull(self):
        """Half-widths of the smallest enclosing axis-aligned box."""
        return np.sum(np.abs(self.generators), axis=1)

    def outer_box(self):
        h = self.interval_hull()
        return HPolytope.box(self.center - h, self.center + h)

    def sample(self, rng, k, boundary=False):
        """Random points; with ``boundary`` every coefficient is +-1."""
        p = self.n_generators
        if boundary:
            beta = rng.choice([-1.0, 1.0], size=(k, p))
        else:
            beta = rng.uniform(-1.0, 1.0, size=(k, p))
        return self.center + beta @ self.generators.T

    def to_hpolytope(self, tol=1e-12):
        """Exact facet representation (practical for few generators in low dimension)."""
        n = self.dim
        G = self.generators[:, np.linalg.norm(self.generators, axis=0) > tol]
        p = G.shape[1]
        if p < n:
            raise SetError("degenerate zonotope has no bounded facet representation")
        normals = []
        for combo in itertools.combinations(range(p), n - 1):
            sub = G[:, combo]
            if n == 1:
                a = np.ones(1)
            else:
                # generalized cross product: cofactors of the n-1 columns
                a = np.array([(-1) ** i * np.linalg.det(np.delete(sub, i, axis=0)) for i in range(n)])
            nrm = np.linalg.norm(a)
            if nrm <= tol:
                continue
            normals.append(a / nrm)
            normals.append(-a / nrm)
        A = np.unique(np.round(np.array(normals), 12), axis=0)
        b = np.array([support(self, a) for a in A])
        return HPolytope(A, b)

    def to_dict(self):
        return {"center": self.center.tolist(), "generators": self.generators.tolist()}

    @classmethod
    def from_dict(cls, data):
        c = np.array(data["center"], dtype=float)
        G = np.array(data["generators"], dtype=float)
        if G.size == 0:
            G = G.reshape(c.shape[0], 0)
        return cls(c, G)


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh)


def load_json(path):
    with open(path) as fh:
        data = json.load(fh)
    if "normals" in data:
        return HPolytope.from_dict(data)
    if "center" in data:
        return Zonotope.from_dict(data)
    raise SetError(f"{path}: neither an H-polytope nor a zonotope")


def _check_dim(n1, n2, what):
    if n1 != n2:
        raise SetError(f"{what}: dimension mismatch {n1} vs {n2}")


def support(Z, direction):
    """Support function ``max_{x in Z} direction' x``; vectorized over rows of ``direction``."""
    d = np.asarray(direction, dtype=float)
    _check_dim(d.shape[-1], Z.dim, "support")
    return d @ Z.center + np.sum(np.abs(d @ Z.generators), axis=-1)


def minkowski_sum(Z1, Z2, max_generators=None):
    _check_dim(Z1.dim, Z2.dim, "minkowski_sum")
    Z = Zonotope(Z1.center + Z2.center, np.hstack([Z1.generators, Z2.generators]))
    if max_generators is not None and Z.n_generators > max_generators:
        Z = reduce_order(Z, max_generators)
    return Z


def reduce_order(Z, max_generators=DEFAULT_MAX_GENERATORS):
    """Outer approximation with at most ``max_generators`` generators.

    The smallest generators (by ``||g||_1 - ||g||_inf``) are replaced by their
    interval hull, which always contains them.
    """
    n, p = Z.dim, Z.n_generators
    if p <= max_generators:
        return Z
    if max_generators < n:
        raise SetError("cannot reduce below the dimension")
    G = Z.generators
    score = np.sum(np.abs(G), axis=0) - np.max(np.abs(G), axis=0)
    order = np.argsort(score, kind="stable")
    n_box = p - (max_generators - n)
    boxed = G[:, order[:n_box]]
    kept = G[:, np.sort(order[n_box:])]
    box = np.diag(np.sum(np.abs(boxed), axis=1))
    box = box[:, np.any(box != 0.0, axis=0)]
    return Zonotope(Z.center, np.hstack([kept, box]))


def erode(P, Z):
    """Pontryagin difference ``P - Z = {x | x + Z subset of P}``."""
    _check_dim(P.dim, Z.dim, "erode")
    if P.n_facets == 0:
        return P
    return HPolytope(P.normals, P.offsets - support(Z, P.normals))


def affine_image(M, b, Z):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _check_dim(M.shape[1], Z.dim, "affine_image")
    b = np.zeros(M.shape[0]) if b is None else np.asarray(b, dtype=float)
    _check_dim(M.shape[0], b.shape[0], "affine_image offset")
    return Zonotope(M @ Z.center + b, M @ Z.generators)


def affine_preimage(M, shift, P, sv_tol=1e-10):
    """``{x | M x + shift in P}`` for square invertible ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise SetError("affine_preimage needs a square map")
    _check_dim(M.shape[0], P.dim, "affine_preimage")
    smin = np.linalg.svd(M, compute_uv=False)[-1]
    if smin < sv_tol:
        raise SetError(f"map is singular (smallest singular value {smin:.3e})")
    shift = np.zeros(P.dim) if shift is None else np.asarray(shift, dtype=float)
    if P.n_facets == 0:
        return P
    return HPolytope(P.normals @ M, P.offsets - P.normals @ shift)


def intersect(P1, P2, prune=False):
    _check_dim(P1.dim, P2.dim, "intersect")
    P = HPolytope(np.vstack([P1.normals, P2.normals]), np.concatenate([P1.offsets, P2.offsets]))
    return prune_redundant(P) if prune else P


def prune_redundant(P, tol=1e-9):
    """Drop duplicate and LP-redundant halfspaces.

    Each row is tested by maximizing its normal over the remaining rows; rows
    whose maximum does not exceed their offset are removed.
    """
    from scipy.optimize import linprog

    if P.n_facets <= 1:
        return P
    norms = np.linalg.norm(P.normals, axis=1)
    A = P.normals / norms[:, None]
    b = P.offsets / norms
    # exact duplicates: keep the tightest offset per direction
    key = np.round(A, 10)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    best = {}
    for i, g in enumerate(inv):
        if g not in best or b[i] < b[best[g]]:
            best[g] = i
    idx = np.array(sorted(best.values()))
    A, b = A[idx], b[idx]
    keep = np.ones(A.shape[0], dtype=bool)
    n = A.shape[1]
    for i in range(A.shape[0]):
        mask = keep.copy()
        mask[i] = False
        if not np.any(mask):
            continue
        # relax row i slightly so the LP stays bounded when it is the only cap
        A_ub = np.vstack([A[mask], A[i]])
        b_ub = np.concatenate([b[mask], [b[i] + 1.0]])
        res = linprog(-A[i], A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * n, method="highs")
        if res.status == 0 and -res.fun <= b[i] + tol:
            keep[i] = False
        elif res.status == 2:
            # the remaining rows are infeasible: the set is empty, stop pruning
            break
    return HPolytope(A[keep], b[keep])


def is_empty(P):
    """Decide emptiness with a phase-1 feasibility problem.

    The set counts as nonempty when a point with max violation <= 1e-8 exists.
    """
    if P.n_facets == 0:
        return False
    x, t, _, _, _, status = qp.find_feasible_point(P.normals, P.offsets)
    if t <= EMPTY_TOL:
        return False
    if status != qp.OPTIMAL:
        raise SolverFailure(f"feasibility problem stopped with status {status} at violation {t:.3e}")
    return True


def chebyshev_point(P):
    """A point in ``P`` (the phase-1 solution); raises if ``P`` is empty."""
    x, t, _, _, _, _ = qp.find_feasible_point(P.normals, P.offsets)
    if t > EMPTY_TOL:
        raise SetError("polytope is empty")
    return x


def gauge(Z, x):
    """Smallest ``t`` with ``x in c + t G B_inf`` (``inf`` when ``x - c`` is outside the span).

    Coordinates without generators must match the center; decoupled
    coordinate blocks are solved separately and the largest gauge is returned.
    """
    x = np.asarray(x, dtype=float)
    _check_dim(Z.dim, x.shape[0], "gauge")
    r = x - Z.center
    G = Z.generators
    live = np.any(G != 0.0, axis=1)
    if not np.allclose(r[~live], 0.0, rtol=0.0, atol=1e-12):
        return np.inf
    if not live.any():
        return 0.0
    t = 0.0
    for blk in coordinate_blocks(Z):
        blk = blk[live[blk]]
        if blk.size == 0:
            continue
        cols = np.flatnonzero(np.any(G[blk] != 0.0, axis=0))
        t = max(t, _gauge_lp(G[np.ix_(blk, cols)], r[blk]))
        if t == np.inf:
            break
    return t


def _gauge_lp(G, r):
    from scipy.optimize import linprog

    k = G.shape[1]
    # variables (beta, t): min t, G beta = r, -t <= beta <= t
    c = np.zeros(k + 1)
    c[-1] = 1.0
    I = np.eye(k)
    one = np.ones((k, 1))
    A_ub = np.block([[I, -one], [-I, -one]])
    A_eq = np.hstack([G, np.zeros((G.shape[0], 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(2 * k), A_eq=A_eq, b_eq=r,
                  bounds=[(None, None)] * k + [(0, None)], method="highs")
    if res.status == 2:
        return np.inf
    if res.status != 0:
        raise SolverFailure(f"gauge LP stopped with status {res.status}")
    return float(res.x[-1])


def zonotope_contains(Z, x, tol=1e-9):
    """Exact membership through the gauge LP."""
    return gauge(Z, x) <= 1.0 + tol


def coordinate_blocks(Z):
    """Groups of coordinates that share no generator with any other group."""
    n = Z.dim
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for col in Z.generators.T:
        nz = np.flatnonzero(col)
        for j in nz[1:]:
            a, b = find(nz[0]), find(j)
            if a != b:
                parent[b] = a
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [np.array(g) for g in groups.values()]


def inscribed_box(Z, blocks=None):
    """Half-widths of a centered box contained in ``Z``.

    Within each independent coordinate block the interval hull is scaled by
    the largest factor that keeps every corner inside ``Z``; a product of
    such boxes lies in ``Z`` because ``Z`` is the product of its blocks.
    """
    h = Z.interval_hull()
    out = np.zeros_like(h)
    for blk in blocks if blocks is not None else coordinate_blocks(Z):
        idx = blk[h[blk] > 0]
        if idx.size == 0:
            continue
        cols = np.flatnonzero(np.any(Z.generators[idx] != 0, axis=0))
        sub = Zonotope(Z.center[idx], Z.generators[np.ix_(idx, cols)])
        worst = 0.0
        for signs in itertools.product((1.0, -1.0), repeat=idx.size):
            worst = max(worst, gauge(sub, sub.center + np.array(signs) * h[idx]))
        out[idx] = h[idx] / worst
    return out


def mrpi_approx(A_K, D, eps=1e-3, max_steps=500):
    """Outer approximation of the minimal robust positively invariant set.

    For a full-dimensional ``D`` this is ``(1 - alpha)^-1 F_s`` with
    ``F_s = D + A D + ... + A^(s-1) D`` and ``A^s D subset of alpha D``; the
    pair ``(s, alpha)`` is the first one meeting the ``eps`` error bound.

    When ``D`` is flat (rank-deficient generators) the scaling argument does
    not apply. The tail ``A^s D + A^(s+1) D + ...`` is then covered by its
    interval hull instead, and ``s`` grows until both the tail width and the
    invariance defect of ``F_s + box(tail)`` are below ``eps``.
    """
    A = np.atleast_2d(np.asarray(A_K, dtype=float))
    n = A.shape[0]
    _check_dim(n, D.dim, "mrpi_approx")
    rho = max(abs(np.linalg.eigvals(A))) if n else 0.0
    if rho >= 1.0:
        raise SetError(f"closed loop is not stable (spectral radius {rho:.6f})")
    # shift the fixed point of the center to the origin
    c_inf = np.linalg.solve(np.eye(n) - A, D.center)
    G = D.generators
    if G.shape[1] == 0:
        return Zonotope.point(c_inf)
    full = np.linalg.matrix_rank(G) == n

    if full:
        Dh = Zonotope(np.zeros(n), G).to_hpolytope() if G.shape[1] <= 2 * n + 4 else None
        if Dh is None:
            raise SetError("full-dimensional D with many generators is not supported")
        F, g = Dh.normals, Dh.offsets
        eye = np.eye(n)
        Ms = np.zeros(2 * n)
        Ak = np.eye(n)
        gens = []
        for s in range(1, max_steps + 1):
            gens.append(Ak @ G)
            Ms += np.concatenate([np.sum(np.abs(eye @ Ak @ G), axis=1)] * 2)
            Ak = A @ Ak
            alpha = float(np.max(np.sum(np.abs(F @ Ak @ G), axis=1) / g))
            M = float(np.max(Ms))
            if alpha <= eps / (eps + M):
                return Zonotope(c_inf, np.hstack(gens) / (1.0 - alpha))
        raise SetError(f"mrpi_approx did not converge within {max_steps} steps")

    absA = np.abs(A)
    Ak = np.eye(n)
    gens = []
    widths = []  # per-coordinate support of A^i D, i = 0, 1, ...
    total = np.zeros(n)
    # run ahead far enough to know the tails to well below eps
    horizon = max_steps
    for _ in range(horizon + 1):
        AG = Ak @ G
        w = np.sum(np.abs(AG), axis=1)
        widths.append(w)
        gens.append(AG)
        Ak = A @ Ak
    widths = np.array(widths)
    tails = np.cumsum(widths[::-1], axis=0)[::-1]
    # geometric estimate of the remainder beyond the computed horizon
    last = widths[-1]
    if np.any(last > 0):
        tails = tails + last * rho / max(1e-12, 1.0 - rho)
    for s in range(1, horizon + 1):
        tail = tails[s]
        if np.max(tail) > eps:
            continue
        defect = widths[s] + absA @ tail - tail
        if np.max(defect) <= eps:
            box = np.diag(tail)
            box = box[:, tail > 0]
            return Zonotope(c_inf, np.hstack(gens[:s] + [box]))
    raise SetError(f"mrpi_approx did not converge within {max_steps} steps")


def invariance_defect(A_K, D, Z, directions):
    """``max_a h_{A Z + D}(a) - h_Z(a)`` over the given directions (<= 0 means invariant there)."""
    AZ = affine_image(A_K, None, Z)
    lhs = support(AZ, directions) + support(D, directions)
    return float(np.max(lhs - support(Z, directions)))
