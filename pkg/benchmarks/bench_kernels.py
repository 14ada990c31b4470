"""Wall-clock comparison of the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from mfglab import kernels, scenario
from mfglab.costs import tables_for_flow
from mfglab.equilibrium import solve_mfg
from mfglab.measures import PathMeasure, TimeGrid, initial_atoms, pushforward_marginals
from mfglab.variational import hjb_from_tables, integrate_characteristics, space_grid, transcribe_batch


def drifting_flow(model, steps, n):
    atoms = initial_atoms(model.initial, n)
    grid = TimeGrid(model.horizon, steps)
    drift = 0.3 * np.sin(np.arange(n))[:, None, None] * grid.nodes[None, :, None]
    paths = atoms.points[:, None] + drift * np.ones(model.dim)
    return pushforward_marginals(PathMeasure(grid, atoms.points, paths, atoms.weights))


def cases():
    s1 = scenario.load("s1_kde")
    crowd = scenario.load("crowd_2d")
    out = {}
    for label, sc, n_x, atoms in (("1d", s1, 256, 128), ("2d", crowd, 48, 64)):
        m = sc.model
        flow = drifting_flow(m, sc.disc.n_t, atoms)
        sp = space_grid(m, flow.grid, n_x)
        tab = tables_for_flow(m, flow, sp)
        C = m.velocity_bound
        x0s = flow.points[0]
        V0 = np.zeros((x0s.shape[0], flow.grid.steps, m.dim))

        def hjb(tab=tab, sp=sp, grid=flow.grid, C=C):
            return hjb_from_tables(tab, sp, grid, C)

        def chars(x0s=x0s, hjb=hjb):
            return integrate_characteristics(x0s, hjb()[1])

        def transcribe(tab=tab, x0s=x0s, V0=V0, C=C):
            return transcribe_batch(tab, x0s, V0, C, 0.1, 1e-8, 500, 8)

        out[f"hjb sweep {label}"] = hjb
        out[f"hjb + characteristics {label}"] = chars
        out[f"transcription {label}"] = transcribe
    small = scenario.load("s1_kde", scenario.parse_overrides(["discretization.particles=32", "discretization.n_x=128"]))
    out["S1 equilibrium (32 atoms)"] = lambda: solve_mfg(small.model, small.params, small.disc)
    return out


def best_of(fn, repeat):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'case':32s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speed-up':>9s}")
    for name, fn in cases().items():
        with kernels.use_backend("numpy"):
            t_np = best_of(fn, args.repeat)
        with kernels.use_backend("numba"):
            t_nb = best_of(fn, args.repeat)
        print(f"{name:32s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
