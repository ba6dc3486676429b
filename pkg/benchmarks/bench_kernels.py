"""Time the compiled kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]

Each row reports the best of R timings per path after one warm-up call (the
warm-up also absorbs numba compilation).
"""

import argparse
import time

import numpy as np

from fracsim import eigen
from fracsim.collision import ContactConfig, build_bvh, penalty_forces, refit_and_pairs, tet_intersection
from fracsim.continuum import MaterialParams, evaluate_elements
from fracsim.fracture import separation_tensors
from fracsim.meshcore import TetMesh, box_mesh

MATERIAL = MaterialParams(density=1000.0, lame_mu=1e5, lame_lambda=1e5, damp_mu=5.0, damp_lambda=5.0)


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def deformed_box(n, rng):
    mesh = box_mesh(n, n, n, size=(1.0, 1.0, 1.0))
    mesh.world_pos = mesh.material_pos + 0.01 / n * rng.normal(size=mesh.material_pos.shape)
    mesh.velocity = rng.normal(size=mesh.velocity.shape)
    return mesh


def overlapping_bodies(n, rng):
    a = deformed_box(n, rng)
    X = np.vstack([a.material_pos, a.material_pos + [0.6, 0.1, 0.05]])
    E = np.vstack([a.elements, a.elements + a.n_nodes])
    return TetMesh.from_arrays(X, E)


def cases(size, rng):
    mesh = deformed_box(size, rng)
    _, forces = evaluate_elements(mesh, [MATERIAL])
    mats = rng.normal(size=(20 * mesh.n_elements, 3, 3))
    mats = mats + np.swapaxes(mats, 1, 2)
    pair_mesh = overlapping_bodies(max(2, size // 2), rng)
    bvh = build_bvh(pair_mesh)
    pairs = refit_and_pairs(bvh, pair_mesh)
    A = rng.normal(size=(4, 3))
    B = A + 0.3 * rng.normal(size=(4, 3))
    cfg = ContactConfig()
    return [
        (f"evaluate_elements ({mesh.n_elements} tets)",
         lambda impl: evaluate_elements(mesh, [MATERIAL], impl=impl)),
        (f"separation_tensors ({mesh.n_nodes} nodes)",
         lambda impl: separation_tensors(mesh, forces, impl=impl)),
        (f"eigh3 ({len(mats)} matrices)",
         lambda impl: (eigen._eigh3_numba if impl == "numba" else eigen._eigh3_numpy)(mats)),
        (f"refit_and_pairs ({pair_mesh.n_elements} tets)",
         lambda impl: refit_and_pairs(bvh, pair_mesh, use_cache=False, impl=impl)),
        ("tet_intersection x1000",
         lambda impl: [tet_intersection(A, B, impl=impl) for _ in range(1000)]),
        (f"penalty_forces ({len(pairs)} pairs)",
         lambda impl: penalty_forces(pairs, pair_mesh, cfg, impl=impl)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=12, help="box cells per side (6 tets per cell)")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases(args.size, rng):
        tn = best_of(lambda: fn("numba"), args.repeat)
        tp = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:42s} {tn * 1e3:10.3f} {tp * 1e3:10.3f} {tp / tn:8.1f}")


if __name__ == "__main__":
    main()
