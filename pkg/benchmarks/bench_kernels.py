"""Benchmark the numba-jitted lattice kernels against the numpy fallback.

Runs the same D3Q19 collide-and-stream update through both backends on a
random porous geometry and reports per-step wall time and the speedup.

    python3 benchmarks/bench_kernels.py --edge 48 --steps 60
"""

import argparse
import time

import numpy as np

import rockgen._lbm_kernels as kernels


def run(step_fn, f, solid, force, steps):
    f = f.copy()
    f_new = np.empty_like(f)
    start = time.perf_counter()
    for _ in range(steps):
        f_new = step_fn(f, f_new, solid, 1.0, force)
        f, f_new = f_new, f
    return (time.perf_counter() - start) / steps, f


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--edge", type=int, default=48)
    ap.add_argument("--steps", type=int, default=60)
    ap.add_argument("--porosity", type=float, default=0.6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    solid = rng.random((args.edge,) * 3) >= args.porosity
    f0 = kernels.equilibrium_rest(solid.shape)
    f0[:, solid] = 0.0
    force = np.array([1e-5, 0.0, 0.0])
    cells = int((~solid).sum())

    print(f"geometry: {args.edge}^3, {cells} fluid voxels, {args.steps} steps/backend")

    t_np, f_np = run(kernels.step_numpy, f0, solid, force, args.steps)
    mlups_np = cells / t_np / 1e6
    print(f"numpy : {t_np * 1e3:8.2f} ms/step   {mlups_np:6.1f} MLUPS")

    if kernels.step_numba is None:
        print("numba : unavailable")
        return

    kernels.step_numba(f0.copy(), np.empty_like(f0), solid, 1.0, force)  # compile
    t_nb, f_nb = run(kernels.step_numba, f0, solid, force, args.steps)
    mlups_nb = cells / t_nb / 1e6
    print(f"numba : {t_nb * 1e3:8.2f} ms/step   {mlups_nb:6.1f} MLUPS")
    print(f"speedup: {t_np / t_nb:.1f}x")

    diff = np.abs(f_np - f_nb).max()
    print(f"max |numpy - numba| after {args.steps} steps: {diff:.3e}")


if __name__ == "__main__":
    main()
