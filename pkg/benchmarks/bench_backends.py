"""Compiled core vs pure-Python core on the same workloads.

    python benchmarks/bench_backends.py [--repeat 3] [--scale 1.0]

Prints wall-clock seconds per workload and backend, the speed-up, and
whether the two backends produced identical output.
"""

import argparse
import time

import numpy as np

from gwspine import _backend, models
from gwspine.auxiliary import run_spines
from gwspine.branching import simulate_population
from gwspine.rng import replica_keys


def _trees(model, horizon, n):
    def run(backend):
        pop = simulate_population(model, horizon, n_reps=n, seed=1, obs_times=[horizon / 2],
                                  backend=backend)
        return pop.x_end, pop.n_nodes

    return run


def _spines(model, horizon, n):
    keys = replica_keys(1, "bench", 0, n)
    x0, ty0 = model.initial_states(keys)

    def run(backend):
        b = run_spines(model, keys, x0, ty0, horizon, [horizon / 2], record_jumps=True, backend=backend)
        return b.x, len(b)

    return run


def workloads(scale: float):
    n = max(1, int(scale * 200))
    return {
        "trees yule_splitted_ou t=5": _trees(models.build("yule_splitted_ou"), 5.0, n),
        "trees cellular_aging t=4": _trees(models.build("cellular_aging"), 4.0, n),
        "trees branching_levy t=4 (jumps)": _trees(
            models.build("branching_levy", {"jump_sizes": (1.5, -0.3), "jump_intensity": (0.5, 1.0)}), 4.0, n),
        "spines yule_splitted_bm t=10": _spines(models.build("yule_splitted_bm", {"kernel": "beta_fraction"}),
                                                10.0, 50 * n),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies the replica counts")
    args = ap.parse_args(argv)
    if "compiled" not in _backend.available():
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation`")
    print(f"{'workload':36s} {'compiled':>10s} {'python':>10s} {'speed-up':>9s}  identical")
    for name, run in workloads(args.scale).items():
        best = {}
        out = {}
        for be in ("compiled", "python"):
            times = []
            for _ in range(args.repeat if be == "compiled" else 1):
                t0 = time.perf_counter()
                out[be] = run(be)
                times.append(time.perf_counter() - t0)
            best[be] = min(times)
        same = np.array_equal(out["compiled"][0], out["python"][0])
        print(f"{name:36s} {best['compiled']:10.3f} {best['python']:10.3f} "
              f"{best['python'] / best['compiled']:8.0f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
