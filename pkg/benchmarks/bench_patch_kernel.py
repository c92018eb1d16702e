"""Time the compiled and pure-Python patch-correction kernels on a smoother.

    python benchmarks/bench_patch_kernel.py [--n 16] [--p 2] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from uwdpg import _kernels_py, kernels
from uwdpg.mesh import uniform_hierarchy
from uwdpg.precond import SchwarzSmoother, patch_dofs
from uwdpg.system import Problem, build_system


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=16, help="fine cells per side")
    ap.add_argument("--p", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    mesh = uniform_hierarchy(2, args.n)
    system = build_system(mesh, Problem.plane_wave(2 * np.pi, p=args.p))
    # patches of the next coarser level: many small dense blocks
    sets = patch_dofs(system.dofmap, mesh.build_patches(mesh.n_levels - 2), mesh.n_levels - 2)
    sm = SchwarzSmoother(system.S, sets)
    rng = np.random.default_rng(0)
    r = rng.standard_normal(system.n_dofs) + 1j * rng.standard_normal(system.n_dofs)
    args_k = (r, sm._idx, sm._idx_ptr, sm._blocks, sm._blk_ptr, 0.0)

    def run(fn):
        return lambda: fn(*args_k, np.zeros_like(r))

    print(f"dofs={system.n_dofs} patches={len(sets)} backend={kernels.BACKEND}")
    t_py = min(timeit.repeat(run(_kernels_py.patch_correction), number=1, repeat=args.repeat))
    print(f"python  {1e3 * t_py:8.3f} ms")
    if kernels.BACKEND == "cython":
        from uwdpg import _kernels
        z_py = run(_kernels_py.patch_correction)()
        z_cy = run(_kernels.patch_correction)()
        t_cy = min(timeit.repeat(run(_kernels.patch_correction), number=1, repeat=args.repeat))
        err = np.abs(z_py - z_cy).max() / np.abs(z_py).max()
        print(f"cython  {1e3 * t_cy:8.3f} ms  speedup {t_py / t_cy:5.1f}x  max rel diff {err:.1e}")


if __name__ == "__main__":
    main()
