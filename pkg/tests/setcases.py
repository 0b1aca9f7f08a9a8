"""Random 2-D set-algebra instances checked against the vertex oracles."""

import numpy as np

import oracles
from shiplanding import sets

DIRS = oracles.unit_directions(720)


def random_polygon(rng):
    """Bounded H-polygon containing the unit disc."""
    while True:
        m = int(rng.integers(3, 9))
        ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, m))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
        if np.max(gaps) < 0.9 * np.pi:
            break
    A = np.stack([np.cos(ang), np.sin(ang)], axis=1) * rng.uniform(0.5, 2.0, size=(m, 1))
    b = np.linalg.norm(A, axis=1) * rng.uniform(1.0, 2.0, size=m)
    return A, b


def random_zonotope(rng, max_gen=4, scale=0.3):
    p = int(rng.integers(1, max_gen + 1))
    return sets.Zonotope(rng.uniform(-0.2, 0.2, 2), rng.uniform(-scale, scale, size=(2, p)))


def _gap(V_ours, V_ref):
    """Largest support-function difference, evaluated on a dense set of directions."""
    if len(V_ref) == 0 or len(V_ours) == 0:
        return 0.0 if len(V_ref) == len(V_ours) else np.inf
    d = np.vstack([DIRS, *(_normals(V) for V in (V_ours, V_ref))])
    return float(np.max(np.abs(oracles.support_of_points(V_ours, d) - oracles.support_of_points(V_ref, d))))


def _normals(V):
    if len(V) < 3:
        return np.zeros((0, 2))
    e = np.roll(V, -1, axis=0) - V
    n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    nrm = np.linalg.norm(n, axis=1)
    return n[nrm > 0] / nrm[nrm > 0, None]


def erosion_case(rng):
    A, b = random_polygon(rng)
    Z = random_zonotope(rng)
    ours = sets.erode(sets.HPolytope(A, b), Z)
    ref = oracles.erosion_oracle(A, b, oracles.zonotope_vertices(Z.center, Z.generators))
    if len(ref) == 0:
        return 0.0 if sets.is_empty(ours) else np.inf
    return _gap(oracles.vertices_2d(ours.normals, ours.offsets), ref)


def minkowski_case(rng):
    Z1 = random_zonotope(rng, scale=1.0)
    Z2 = random_zonotope(rng, scale=1.0)
    ours = sets.minkowski_sum(Z1, Z2)
    ref = oracles.minkowski_oracle(oracles.zonotope_vertices(Z1.center, Z1.generators),
                                   oracles.zonotope_vertices(Z2.center, Z2.generators))
    d = np.vstack([DIRS, _normals(ref)])
    return float(np.max(np.abs(sets.support(ours, d) - oracles.support_of_points(ref, d))))


def preimage_case(rng):
    A, b = random_polygon(rng)
    while True:
        M = rng.normal(size=(2, 2))
        if np.linalg.cond(M) < 20:
            break
    shift = rng.uniform(-0.5, 0.5, 2)
    ours = sets.affine_preimage(M, shift, sets.HPolytope(A, b))
    ref = oracles.preimage_oracle(M, shift, oracles.vertices_2d(A, b))
    return _gap(oracles.vertices_2d(ours.normals, ours.offsets), ref)


CASES = (erosion_case, minkowski_case, preimage_case)


def run_cases(n, seed=0):
    """Worst error per operation over ``n`` instances of each."""
    rng = np.random.default_rng(seed)
    worst = {}
    for case in CASES:
        worst[case.__name__] = max(case(rng) for _ in range(n))
    return worst
