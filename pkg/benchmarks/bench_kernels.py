"""Compare the numba and numpy time-stepping backends.

Runs each workload once to warm up (JIT compilation for numba), then reports
the best of ``--repeat`` timings and the max coefficient difference between
backends.

    python benchmarks/bench_kernels.py --repeat 3
"""
from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from hnkdv_control import control as C
from hnkdv_control.kernels import HAVE_NUMBA
from hnkdv_control.reference import build_w
from hnkdv_control.solvers import TimeGrid, hnkdv_solve
from hnkdv_control.spectral import Grid, from_trigpoly
from hnkdv_control.trig import ModeSet, TrigPoly, hk_subspace


def best_of(fn, repeat):
    fn()
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def workloads(n_modes, n_steps, n_cells):
    grid = Grid(n_modes, 3 * n_modes)
    tg = TimeGrid(0.0, 1.0, n_steps)
    u0 = from_trigpoly(TrigPoly.sin(1).scale(0.5) + TrigPoly.cos(3).scale(0.1), grid)
    J = ModeSet((1,))
    w = build_w(J, 1.0)
    basis = C.ControlBasis(hk_subspace(J, 1), n_cells, 1.0)

    def solve(j):
        return lambda backend: hnkdv_solve(u0, None, j, grid, tg, True, backend).final.half

    def assemble(backend):
        return C.assemble_T(w, basis, grid, tg, 8, 0, backend).matrix

    return {
        "hnkdv j=1": solve(1),
        "hnkdv j=3": solve(3),
        f"assemble_T ({basis.n_dof} columns)": assemble,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-modes", type=int, default=64)
    ap.add_argument("--n-steps", type=int, default=2000)
    ap.add_argument("--n-cells", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    logging.getLogger("hnkdv_control").setLevel(logging.ERROR)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'workload':32s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in workloads(args.n_modes, args.n_steps, args.n_cells).items():
        t_nb, a = best_of(lambda: fn("numba"), args.repeat)
        t_np, b = best_of(lambda: fn("numpy"), args.repeat)
        diff = float(np.max(np.abs(a - b)))
        print(f"{name:32s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
