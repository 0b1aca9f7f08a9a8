"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

The Monte Carlo batch (criteria 2, 3 and 6) runs once per session; it takes
roughly a quarter of an hour on a single core.
"""

import time

import numpy as np
import pytest

import oracles
import setcases
from conftest import record
from shiplanding import model, observer, qp, sets, shmpc, sim, terminal

MC_RUNS = 100
MANEUVERS = ("a", "b", "c")


# --- 1. reference maneuvers ------------------------------------------------------


@pytest.fixture(scope="module")
def reference_runs(cfg, dsn):
    out = {}
    for tag in MANEUVERS:
        t0 = time.perf_counter()
        res = sim.run_maneuver(cfg, tag, seed=0, design=dsn, check_invariants=True)
        out[tag] = (res, time.perf_counter() - t0)
    return out


def test_criterion_1_reference_maneuvers(reference_runs):
    ok_all = True
    for tag, (res, secs) in reference_runs.items():
        r = res.report
        ok = (r is not None and r.d_phi_deg <= 4.0 and r.d_theta_deg <= 6.0 and r.d_p_h <= 0.60
              and r.d_v_h <= 0.60 and r.d_v_z <= 1.15 and 9.9 <= r.T <= 10.9 and secs < 30.0)
        ok_all &= ok
        detail = (f"maneuver {tag}: dphi={r.d_phi_deg:.2f}deg dtheta={r.d_theta_deg:.2f}deg "
                  f"dp_h={r.d_p_h:.3f}m dv_h={r.d_v_h:.3f}m/s dv_z={r.d_v_z:.3f}m/s T={r.T:.3f}s "
                  f"runtime={secs:.1f}s") if r else f"maneuver {tag}: no touchdown"
        record(1, ok, detail)
    assert ok_all


# --- 2, 3. Monte Carlo -------------------------------------------------------------


@pytest.fixture(scope="module")
def monte_carlo(cfg, dsn):
    stats = []
    N0 = cfg["mpc"]["N0"]
    N_TD = cfg["touchdown"]["N_TD"]
    t0 = time.perf_counter()
    for tag in MANEUVERS:
        for seed in range(1, MC_RUNS + 1):
            row = {"tag": tag, "seed": seed}
            try:
                res = sim.run_maneuver(cfg, tag, seed=seed, design=dsn, check_invariants=True)
            except sim.SimError as err:
                row.update(failure=repr(err))
                stats.append(row)
                continue
            a = res.log.arrays()
            err = a["x"] - a["z"]
            # exact zonotope membership on a subsample, on top of the per-step box check
            gauges = [sets.gauge(dsn.Z, e) for e in err[::40]]
            rep = res.report
            row.update(
                failure=None,
                terminal_ok=res.terminal_ok,
                step=None if rep is None else rep.step,
                T=None if rep is None else rep.T,
                in_window=rep is not None and N0 <= rep.step <= N0 + N_TD and 9.9 <= rep.T <= 10.9,
                within_bounds=rep is not None and rep.success,
                tube=[v for v in res.violations if v[1] == "tube"],
                other=[v for v in res.violations if v[1] != "tube"],
                max_gauge=max(gauges),
                solve_ms=a["solve_ms"][:N0].copy(),
            )
            stats.append(row)
    return stats, time.perf_counter() - t0


def test_criterion_2_timing_guarantee(monte_carlo):
    stats, secs = monte_carlo
    n = len(stats)
    fails = [s for s in stats if s["failure"]]
    ran = [s for s in stats if not s["failure"]]
    term = sum(s["terminal_ok"] for s in ran)
    window = sum(s["in_window"] for s in ran)
    bounds = sum(s["within_bounds"] for s in ran)
    T = [s["T"] for s in ran if s["T"] is not None]
    ok = not fails and term == n and window == n and secs < 3600
    record(2, ok, f"{n} runs: terminal set at step 495 in {term}, touchdown in window in {window}, "
                  f"mid-run failures {len(fails)}; T in [{min(T):.3f}, {max(T):.3f}] s; "
                  f"touchdown bounds met in {bounds}; batch {secs / 60:.1f} min")
    for s in fails[:5]:
        print(f"   {s['tag']}/{s['seed']}: {s['failure']}")
    assert ok


def test_criterion_3_tube_containment(monte_carlo, dsn):
    stats, _ = monte_carlo
    ran = [s for s in stats if not s["failure"]]
    tube = sum(bool(s["tube"]) for s in ran)
    other = sum(bool(s["other"]) for s in ran)
    worst = max(s["max_gauge"] for s in ran)
    ok = len(ran) == len(stats) and tube == 0 and worst <= 1.0 + 1e-6
    record(3, ok, f"{len(ran)} runs: runs with a tube-box violation (tol 1e-6) {tube}; "
                  f"largest sampled zonotope gauge {worst:.4f}; runs with other constraint flags {other}")
    assert ok


# --- 4. RPI property ---------------------------------------------------------------------


def _tube_structure(dsn):
    """Split the tube generators into ``[D, A D, ..., A^(s-1) D]`` and the tail box."""
    A = dsn.A_xi
    GD = sets.affine_image(dsn.B_xi, None, dsn.D_v).generators
    G = dsn.Z_xi.generators
    p = GD.shape[1]
    blocks = []
    cur = GD
    while (len(blocks) + 1) * p <= G.shape[1] and np.allclose(G[:, len(blocks) * p:(len(blocks) + 1) * p], cur,
                                                                rtol=1e-9, atol=1e-14):
        blocks.append(cur)
        cur = A @ cur
    s = len(blocks)
    T = G[:, s * p:]
    assert np.all(np.count_nonzero(T, axis=0) == 1), "tail columns are not axis-aligned"
    return GD, s, T, cur  # cur = A^s D


def test_criterion_4_rpi(dsn):
    eps = dsn.cfg["rpi"]["eps"]
    A, Bt = dsn.A_xi, dsn.B_xi
    Z = dsn.Z_xi
    GD, s, T, AsD = _tube_structure(dsn)
    tail = np.abs(T).sum(axis=1)
    rng = np.random.default_rng(0)
    k = 10_000
    nG = Z.n_generators
    p = GD.shape[1]
    # boundary points: half support maximizers, half sign vectors of the generators
    dirs = rng.normal(size=(k // 2, Z.dim))
    beta = np.vstack([np.sign(dirs @ Z.generators), rng.choice([-1.0, 1.0], size=(k - k // 2, nG))])
    beta[beta == 0] = 1.0
    d = rng.choice([-1.0, 1.0], size=(k, 3)) * dsn.D_v.generators.diagonal()
    pts = Z.center + beta @ Z.generators.T
    img = pts @ A.T + d @ Bt.T
    # certificate: the shifted generator blocks map onto themselves, the new disturbance
    # takes the first block, and what remains must fit in the tail box
    last = beta[:, (s - 1) * p:s * p]
    tail_beta = beta[:, s * p:]
    rest = last @ AsD.T + tail_beta @ (A @ T).T + (A @ Z.center - Z.center)
    excess = np.max(np.abs(rest) - tail)
    # independent check on a subset: LP distance from the image to the tube
    lp = max(oracles.distance_inf_to_zonotope(Z.center, Z.generators, img[i]) for i in range(0, k, 500))
    ok = excess <= eps and lp <= eps
    record(4, ok, f"{k} (boundary point, disturbance vertex) pairs: certificate excess over the tail box "
                  f"{max(excess, 0.0):.2e} (eps {eps:g}); LP distance on 20 images {lp:.2e}; s={s}")
    assert ok


# --- 5. terminal set ----------------------------------------------------------------------


def test_criterion_5_terminal_soundness(dsn):
    X = dsn.XT_bar
    td = dsn.td
    safe = sets.erode(td.F_TD, dsn.Z)
    landed = terminal.start_set(td, dsn.Z)
    x0, radius = oracles.interior_point(X.normals, X.offsets)
    samples = oracles.hit_and_run(X.normals, X.offsets, x0, 1000, np.random.default_rng(5))
    A_TD, off = terminal.closed_loop(td, dsn.sys)
    zs = samples.copy()
    worst_safe = np.max(safe.normals @ zs.T - safe.offsets[:, None])
    for _ in range(td.N_TD):
        zs = zs @ A_TD.T + off
        worst_safe = max(worst_safe, np.max(safe.normals @ zs.T - safe.offsets[:, None]))
    worst_land = np.max(landed.normals @ zs.T - landed.offsets[:, None])
    members = np.max(X.normals @ samples.T - X.offsets[:, None])
    ok = len(samples) == 1000 and members <= 1e-9 and worst_safe <= 1e-9 and worst_land <= 1e-9
    record(5, ok, f"1000 members of the terminal set over {td.N_TD} steps: worst safe-set slack "
                  f"{worst_safe:.2e}, worst landed-set slack at the end {worst_land:.2e} (<= 1e-9 required)")
    assert ok


# --- 6. solver timing ---------------------------------------------------------------------


def test_criterion_6_solver_timing(monte_carlo, reference_runs, dsn, cfg):
    stats, _ = monte_carlo
    ms = np.concatenate([s["solve_ms"] for s in stats if not s["failure"]]
                        + [r.log.arrays()["solve_ms"][:cfg["mpc"]["N0"]] for r, _ in reference_runs.values()])
    x0 = np.zeros(13)
    x0[model.POS] = cfg["maneuvers"]["a"]["start"]
    x0[model.DBAR] = dsn.dbar
    from shiplanding import design
    ctl = shmpc.ShmpcController(dsn.sys, design.mpc_config(dsn, x0))
    nvar = ctl.build_qp(x0, 0, dsn.dbar).n_decision
    ok = nvar == 64 and ms.mean() < 20.0 and ms.max() < 50.0
    record(6, ok, f"{ms.size} per-step solves (build + solve): mean {ms.mean():.2f} ms, "
                  f"p99 {np.percentile(ms, 99):.2f} ms, max {ms.max():.2f} ms; {nvar} decision variables at k=0")
    assert ok


# --- 7. set algebra -------------------------------------------------------------------------


def test_criterion_7_set_oracles():
    worst = setcases.run_cases(500, seed=2024)
    Z = sets.mrpi_approx(np.array([[0.5]]), sets.Zonotope.box([1.0]), eps=1e-6)
    h = Z.interval_hull()[0]
    ok = max(worst.values()) <= 1e-9 and abs(h - 2.0) <= 1e-6 and abs(Z.center[0]) <= 1e-12
    record(7, ok, "500 instances each: " + ", ".join(f"{k.replace('_case', '')} {v:.1e}" for k, v in worst.items())
           + f"; scalar mRPI half-width {h:.8f} (exact 2)")
    assert ok


# --- 8. observer -----------------------------------------------------------------------------


def test_criterion_8_observer():
    sys_ = model.build_model()
    L = observer.velocity_observer_gain(sys_)
    A_W = observer.observer_matrix(L, sys_)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        x = rng.normal(size=13)
        obs = observer.init_observer(L, x, rng.normal(size=3))
        ref = None
        for _ in range(200):
            u = rng.normal(size=3)
            d = rng.uniform(-0.3, 0.3, size=3)
            obs, d_hat = observer.observer_step(obs, x, u, sys_)
            ref = d_hat if ref is None else ref
            worst = max(worst, np.max(np.abs(d_hat - ref)))
            ref = A_W @ ref + L @ sys_.W @ d
            x = sys_.step(x, u, d)
    # contraction under a constant disturbance
    rho = max(abs(np.linalg.eigvals(A_W)))
    c = np.array([0.2, -0.1, 0.25])
    x = np.zeros(13)
    obs = observer.init_observer(L, x)
    errs = []
    for _ in range(30):
        u = rng.normal(size=3)
        obs, d_hat = observer.observer_step(obs, x, u, sys_)
        errs.append(np.linalg.norm(c - d_hat))
        x = sys_.step(x, u, c)
    ratios = np.array(errs[1:]) / np.array(errs[:-1])
    ok = worst <= 1e-12 and np.max(np.abs(ratios - rho)) <= 1e-9
    record(8, ok, f"filter identity max error {worst:.1e} over 50 random trajectories; "
                  f"error ratio per step {ratios.min():.6f}..{ratios.max():.6f} (spectral radius {rho:.6f})")
    assert ok


# --- 9. QP solver ----------------------------------------------------------------------------


def test_criterion_9_qp():
    rng = np.random.default_rng(9)
    worst_kkt = worst_dx = 0.0
    n_ok = 0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, 21))
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.1 * np.eye(n)
        g = 3 * rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = A @ rng.normal(size=n) + rng.uniform(0, 1, m)
        sol = qp.solve_qp(H, g, A, b)
        x_ref, _ = oracles.qp_dual_gradient(H, g, A, b)
        n_ok += sol.ok
        worst_kkt = max(worst_kkt, sol.kkt_residual)
        worst_dx = max(worst_dx, np.max(np.abs(sol.primal - x_ref)))
    ok = n_ok == 100 and worst_kkt <= 1e-6 and worst_dx <= 1e-5
    record(9, ok, f"100 random instances: {n_ok} optimal, max KKT residual {worst_kkt:.1e}, "
                  f"max deviation from the dual-gradient oracle {worst_dx:.1e}")
    assert ok


# --- 10. transform ----------------------------------------------------------------------------


def test_criterion_10_transform():
    rng = np.random.default_rng(10)
    g = 9.81
    a = np.column_stack([rng.uniform(-8, 8, 1000), rng.uniform(-8, 8, 1000), rng.uniform(-30, g - 1, 1000)])
    worst = max(np.max(np.abs(model.forward_transform(model.inverse_transform(ai, g), g) - ai)) for ai in a)
    ok = worst <= 1e-10
    record(10, ok, f"1000 round trips: max error {worst:.1e}")
    assert ok
