"""Time the compiled and numpy backends of the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 200]

covariance_update is timed at the pipeline's KF-RMLP size and at a larger
network; spring_substep on the default tissue grid and a finer one.
"""

import argparse
import sys
import timeit
from dataclasses import replace

import numpy as np

from dlfd import kernels
from dlfd.tasksim import SimConfig, Tissue


def cov_case(n, m, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    P = A @ A.T / n + np.eye(n)
    PH = np.ascontiguousarray(P @ rng.normal(size=(n, m)))
    K = np.ascontiguousarray(0.01 * PH)
    return P, K, PH


def bench_cov(backend, n, m, repeat):
    P0, K, PH = cov_case(n, m)
    P = P0.copy()

    def run():
        P[...] = P0
        backend.covariance_update(P, K, PH, 1e-5)

    run()
    return min(timeit.repeat(run, number=10, repeat=max(3, repeat // 10))) / 10


def bench_spring(backend, grid, repeat):
    cfg = replace(SimConfig(), grid=grid)
    t = Tissue(cfg)
    rng = np.random.default_rng(1)
    pos0 = t.ref + rng.normal(0, 0.01, t.ref.shape)
    pos, vel, force = pos0.copy(), np.zeros_like(pos0), np.zeros_like(pos0)
    ext = np.zeros_like(pos0)

    def run():
        backend.spring_substep(pos, vel, t.springs, t.rest, cfg.stiffness, cfg.damping, ext, t.free,
                               1.0 / cfg.node_mass, cfg.dt, force)

    run()
    return min(timeit.repeat(run, number=50, repeat=max(3, repeat // 10))) / 50


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    a = ap.parse_args(argv)
    names = [n for n in ("python", "cython") if n in kernels.BACKENDS]
    if "cython" not in names:
        print("compiled extension not available; timing the numpy fallback only", file=sys.stderr)
    cases = [("covariance_update n=131 m=7", lambda b: bench_cov(b, 131, 7, a.repeat)),
             ("covariance_update n=600 m=7", lambda b: bench_cov(b, 600, 7, a.repeat)),
             ("spring_substep 8x8", lambda b: bench_spring(b, (8, 8), a.repeat)),
             ("spring_substep 24x24", lambda b: bench_spring(b, (24, 24), a.repeat))]
    print(f"{'kernel':32s}" + "".join(f"{n:>14s}" for n in names) + ("   speedup" if len(names) == 2 else ""))
    for label, fn in cases:
        times = [fn(kernels.get_backend(n)) for n in names]
        row = f"{label:32s}" + "".join(f"{t * 1e6:12.1f}us" for t in times)
        if len(times) == 2:
            row += f"   {times[0] / times[1]:6.2f}x"
        print(row)


if __name__ == "__main__":
    main()
