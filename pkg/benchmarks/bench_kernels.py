"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times each kernel on representative inputs (a 3700-row ratio test, one plant
RK4 step) and a full QP solve of the first planning step with each backend
patched in. Prints one line per (kernel, backend).
"""

import argparse
import timeit

import numpy as np

from shiplanding import config, design, kernels, model, qp, shmpc


def kernel_inputs(rng, m=3700):
    ap = rng.normal(size=m)
    r = np.abs(rng.normal(size=m))
    blocked = rng.random(m) < 0.01
    state = np.array([0.0, 0.0, 20.0, 1.0, 0.5, -0.3, 0.02, 0.0, -0.05, 0.0])
    return ap, r, blocked, state


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    ap, r, blocked, state = kernel_inputs(rng)
    drag = np.array([0.05, 0.05, 0.1])
    coef = np.array([6.0, 9.0, 6.0, 9.0])
    d = np.array([0.1, -0.2, 0.05])
    rows = []
    for name, mod in kernels.backends().items():
        calls = {
            "ratio_test": lambda: mod.ratio_test(ap, r, blocked, 1e-12),
            "most_violated": lambda: mod.most_violated(r - 0.5),
            "plant_rk4": lambda: mod.plant_rk4(state, 9.8, 0.01, -0.02, d, 0.0, 0.0, drag, coef, 9.81, 0.02),
        }
        for kname, fn in calls.items():
            t = min(timeit.repeat(fn, number=200, repeat=repeat)) / 200
            rows.append((kname, name, t))
    return rows


def bench_qp(repeat):
    cfg = config.load()
    d = design.build(cfg)
    x0 = np.zeros(d.sys.n)
    x0[model.POS] = cfg["maneuvers"]["a"]["start"]
    x0[model.DBAR] = d.dbar
    x0[model.ACC] = -d.dbar[:2]
    ctl = shmpc.ShmpcController(d.sys, design.mpc_config(d, x0))
    inst = ctl.build_qp(x0, 0, d.dbar, low_mask=ctl._low_mask(0, None))
    rows = []
    saved = kernels.ratio_test
    try:
        for name, mod in kernels.backends().items():
            kernels.ratio_test = mod.ratio_test

            def solve():
                qp.solve_qp(inst.hessian, inst.gradient, inst.ineq_normals, inst.ineq_offsets,
                            eq_normals=inst.eq_normals, eq_offsets=inst.eq_offsets)

            t = min(timeit.repeat(solve, number=1, repeat=repeat))
            rows.append(("qp_step0", name, t))
    finally:
        kernels.ratio_test = saved
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-qp", action="store_true")
    args = ap.parse_args()
    rows = bench_kernels(args.repeat)
    if not args.skip_qp:
        rows += bench_qp(args.repeat)
    base = {k: t for k, b, t in rows if b == "python"}
    print(f"{'kernel':<14} {'backend':<8} {'time':>12} {'speedup':>8}")
    for k, b, t in rows:
        print(f"{k:<14} {b:<8} {t * 1e6:10.2f}us {base[k] / t:8.2f}x")


if __name__ == "__main__":
    main()
