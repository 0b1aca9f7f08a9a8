import dataclasses

import numpy as np
import pytest

import oracles
import setcases
from shiplanding import design, model, sets, shmpc
from shiplanding.model import DiscreteLinearSystem


def start_state(dsn, start):
    x = np.zeros(dsn.sys.n)
    x[model.POS] = start
    x[model.ACC] = -dsn.dbar[:2]
    x[model.DBAR] = dsn.dbar
    return x


@pytest.fixture(scope="module")
def setup(dsn, cfg):
    x0 = start_state(dsn, cfg["maneuvers"]["a"]["start"])
    mcfg = design.mpc_config(dsn, x0)
    return x0, mcfg, shmpc.ShmpcController(dsn.sys, mcfg)


@pytest.fixture(scope="module")
def first(setup, dsn):
    x0, _, ctl = setup
    return ctl.solve_step(x0, 0, dsn.dbar)


# --- blocking ---------------------------------------------------------------


def test_blocking_example():
    np.testing.assert_array_equal(shmpc.blocking_matrix(4, 2), [[1, 0], [1, 0], [1, 0], [0, 1]])


def test_blocking_identity():
    for N in (1, 2, 7):
        np.testing.assert_array_equal(shmpc.blocking_matrix(N, N), np.eye(N))


def test_blocking_sizes_rejected():
    with pytest.raises(ValueError):
        shmpc.blocking_matrix(0, 2)
    with pytest.raises(ValueError):
        shmpc.blocking_matrix(5, 0)


def test_blocking_shift_consistent():
    N0, Nb = 495, 17
    assert sum(shmpc.block_lengths(N0, Nb)) == N0
    M = shmpc.blocking_matrix(N0, Nb)
    assert M.shape == (N0, Nb) and M.sum() == N0
    assert np.all(M.sum(axis=1) == 1)
    for N_k in range(N0, 1, -1):
        nxt = shmpc.blocking_matrix(N_k - 1, Nb, N0)
        ref = M[1:]
        ref = ref[:, ref.any(axis=0)]
        np.testing.assert_array_equal(nxt, ref)
        M = nxt


# --- tightening -------------------------------------------------------------


def test_tighten_zero_tube():
    rng = np.random.default_rng(0)
    A, b = setcases.random_polygon(rng)
    F = sets.HPolytope(A, b)
    XT = sets.HPolytope.box([-1.0], [2.0])
    Fb, XTb = shmpc.tighten(F, XT, sets.Zonotope.point([0.0]), np.array([[0.7]]))
    np.testing.assert_allclose(Fb.offsets, F.offsets)
    np.testing.assert_allclose(XTb.offsets, XT.offsets)


def test_tighten_zero_gain():
    F = sets.HPolytope.box([-1.0, -2.0], [1.0, 2.0])  # over [u; x]
    Fb, _ = shmpc.tighten(F, None, sets.Zonotope.box([0.3]), np.zeros((1, 1)))
    np.testing.assert_allclose(Fb.offsets, [1.0, 1.7, 1.0, 1.7])


def test_tighten_random_vs_product_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        A, b = setcases.random_polygon(rng)
        c, g, K = rng.uniform(-0.1, 0.1), rng.uniform(-0.3, 0.3), rng.uniform(-2, 2)
        Z = sets.Zonotope([c], [[g]])
        ours, _ = shmpc.tighten(sets.HPolytope(A, b), None, Z, np.array([[K]]))
        ends = [np.array([-K * e, e]) for e in (c - g, c + g)]
        ref = oracles.erosion_oracle(A, b, ends)
        got = oracles.vertices_2d(ours.normals, ours.offsets)
        assert setcases._gap(got, ref) < 1e-10


def test_tightened_design_rows(dsn):
    assert np.all(dsn.F_bar.f <= dsn.F.f + 1e-12)
    # the state rows shrink by the tube support, checked by LP on the zonotope
    Z = dsn.Z
    for a, fb, f, kind in zip(dsn.F.Fx, dsn.F_bar.f, dsn.F.f, dsn.F.kinds):
        if kind == shmpc.STATE:
            h = oracles_support(Z, a)
            assert f - fb == pytest.approx(h, abs=1e-9)


def oracles_support(Z, a):
    """Support function of a zonotope by LP over the generator weights."""
    from scipy.optimize import linprog
    k = Z.n_generators
    res = linprog(-(a @ Z.generators), bounds=[(-1, 1)] * k, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    return float(a @ Z.center - res.fun)


# --- condensing -------------------------------------------------------------


def test_condensed_equals_direct(setup):
    _, _, ctl = setup
    rng = np.random.default_rng(2)
    for k in (0, 1, 29, 30, 250, 494):
        nbk = ctl.remaining_blocks(k)
        y = np.concatenate([rng.normal(size=13), rng.normal(size=3 * nbk)])
        direct, _ = ctl.predict(k, y[:13], y[13:])
        cond = ctl.predict_condensed(k, y)
        scale = max(1.0, np.max(np.abs(direct)))
        assert np.max(np.abs(cond - direct)) <= 1e-10 * scale


def test_decision_dimension(setup, dsn):
    x0, _, ctl = setup
    inst = ctl.build_qp(x0, 0, dsn.dbar)
    assert inst.n_decision == 13 + 3 * 17 == 64
    later = ctl.build_qp(x0, 480, dsn.dbar)
    assert later.n_decision == 13 + 3 * ctl.remaining_blocks(480)


def test_row_count_full_resolution(setup, dsn):
    x0, mcfg, _ = setup
    full = shmpc.ShmpcController(dsn.sys, dataclasses.replace(mcfg, stride=1))
    k = 400
    inst = full.build_qp(x0, k, dsn.dbar, low_mask=np.ones(495 - k, dtype=bool))
    # inputs are constant within a block, so their rows appear once per remaining block
    n_in = sum(kind == shmpc.INPUT for kind in dsn.F_bar.kinds)
    n_other = dsn.F_bar.poly.n_facets - n_in
    expected = (mcfg.eps0_set.n_facets + (495 - k) * n_other + ctl_blocks(full, k) * n_in
                + dsn.XT_bar.n_facets)
    assert inst.ineq_normals.shape[0] == expected


def ctl_blocks(ctl, k):
    return ctl.remaining_blocks(k)


def test_single_step_unconstrained_analytic():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    s = DiscreteLinearSystem(A, B, np.zeros((2, 1)), 0.1, ("p", "v"))
    F = shmpc.StageConstraints(sets.HPolytope.universe(3), (), 1)
    cfg = shmpc.ShmpcConfig(1, 1, np.zeros((2, 2)), np.zeros((1, 1)), np.eye(2), np.eye(2), F,
                            sets.HPolytope.universe(2), sets.HPolytope.universe(2), np.zeros(2),
                            np.zeros(0, dtype=int), 0)
    ctl = shmpc.ShmpcController(s, cfg)
    x = np.array([1.0, -0.5])
    res, _ = ctl.solve_step(x, 0, np.zeros(0))
    # min |A z0 + B v|^2 + |x - z0|^2 as a least-squares problem
    M = np.block([[A, B], [np.eye(2), np.zeros((2, 1))]])
    y = np.linalg.lstsq(M, np.concatenate([np.zeros(2), x]), rcond=None)[0]
    np.testing.assert_allclose(res.z0, y[:2], atol=1e-9)
    # the input direction has curvature |B|^2, so the solver's 1e-9 regularization shows at 1e-7
    np.testing.assert_allclose(res.v0, y[2:], rtol=1e-6)


def test_bad_inputs(setup, dsn):
    x0, mcfg, ctl = setup
    with pytest.raises(shmpc.ShmpcError):
        ctl.build_qp(x0, 495, dsn.dbar)
    with pytest.raises(shmpc.ShmpcError):
        ctl.build_qp(x0[:5], 0, dsn.dbar)
    with pytest.raises(ValueError):
        dataclasses.replace(mcfg, P0=-np.eye(13))
    with pytest.raises(ValueError):
        dataclasses.replace(mcfg, Nbar=600)


# --- solving ----------------------------------------------------------------


def test_first_step_feasible(first, setup, dsn):
    x0, mcfg, _ = setup
    res, _ = first
    assert res.trajectory.shape == (496, 13)
    assert mcfg.eps0_set.contains(x0 - res.z0, tol=1e-8)
    np.testing.assert_allclose(res.z0[model.DBAR], dsn.dbar, atol=1e-12)
    Fx, Fu, f = dsn.F_bar.Fx, dsn.F_bar.Fu, dsn.F_bar.f
    val = res.trajectory[:-1] @ Fx.T + res.inputs @ Fu.T - f
    assert np.max(val) <= 1e-8
    assert dsn.XT_bar.contains(res.trajectory[-1], tol=1e-8)
    assert res.solve_ms < 200


def _true_cost(mcfg, ctl, k, x, traj, inputs, z0):
    r = ctl.ref[k:]
    e = traj[:-1] - r
    stage = np.einsum("ti,ij,tj->", e, mcfg.Q, e) + np.einsum("ti,ij,tj->", inputs, mcfg.R, inputs)
    eT = traj[-1] - mcfg.z_T
    return stage + eT @ mcfg.P @ eT + (x - z0) @ mcfg.P0 @ (x - z0)


def test_nominal_run_shift_feasible_and_cost_decreasing(first, setup, dsn):
    x0, mcfg, ctl = setup
    res, warm = first
    costs = [_true_cost(mcfg, ctl, 0, x0, res.trajectory, res.inputs, res.z0)]
    iters = []
    x = res.trajectory[1]
    for k in range(1, 25):
        res, warm = ctl.solve_step(x, k, dsn.dbar, warm)
        costs.append(_true_cost(mcfg, ctl, k, x, res.trajectory, res.inputs, res.z0))
        iters.append(res.iterations)
        x = res.trajectory[1]
    assert np.all(np.diff(costs) <= 1e-6 * costs[0])
    assert max(iters) <= 10


def test_last_step_reaches_terminal_set(first, dsn):
    res, _ = first
    ctl = shmpc.ShmpcController(dsn.sys, design.mpc_config(dsn, res.trajectory[0]))
    last, _ = ctl.solve_step(res.trajectory[494], 494, dsn.dbar)
    assert last.trajectory.shape == (2, 13)
    assert dsn.XT_bar.contains(last.trajectory[1], tol=1e-8)


def test_unreachable_start_rejected(dsn):
    x0 = start_state(dsn, [0.0, 0.0, 59.0])
    ctl = shmpc.ShmpcController(dsn.sys, design.mpc_config(dsn, x0))
    with pytest.raises(shmpc.InfeasibleStep) as info:
        ctl.solve_step(x0, 0, dsn.dbar)
    sol = info.value.solution
    assert sol.farkas is not None
