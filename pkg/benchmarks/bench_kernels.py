"""Compare the numba and pure-numpy kernel backends.

Each backend runs in its own interpreter (the backend is fixed at import).
Times are the best of ``--repeat`` runs after one warm-up call, so numba
compilation is excluded. Outputs of the two backends are checked for equality.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--n-primary N]
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np


def _best(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def worker(repeat, n_primary, dump):
    from nlosexplore import kernels, nlos, scenes
    from nlosexplore.gridmap import OccupancyGrid, Pose, estimate_normals, visible_cells
    from nlosexplore.spad_sim import SensorConfig, simulate_scan

    gt, lay = scenes.l_corner()
    normals = estimate_normals(gt)
    pose = Pose.at_cell(*lay.robot)
    sensor = SensorConfig(n_primary=n_primary)
    scan = simulate_scan(gt, normals, pose, sensor)
    belief = OccupancyGrid.filled(gt.width, gt.height, resolution=gt.resolution)
    seen = visible_cells(gt, pose, sensor.n_primary, sensor.max_range)
    belief.cells[seen] = gt.cells[seen]

    stages = {
        "visible_cells": lambda: visible_cells(gt, pose, sensor.n_primary, sensor.max_range),
        "simulate_scan": lambda: simulate_scan(gt, normals, pose, sensor).bins,
        "carve": lambda: nlos.carve(belief, scan)[1],
        "backproject": lambda: nlos.backproject(scan),
    }
    times, arrays = {}, {}
    for name, fn in stages.items():
        times[name], arrays[name] = _best(fn, repeat)
    np.savez(dump, **arrays)
    print(json.dumps({"backend": kernels.BACKEND, "times": times}))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n-primary", type=int, default=2500)
    ap.add_argument("--worker", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat, args.n_primary, args.worker)
        return 0

    results = {}
    with tempfile.TemporaryDirectory() as tmp:
        for label, flag in (("numba", "0"), ("numpy", "1")):
            dump = os.path.join(tmp, f"{label}.npz")
            env = dict(os.environ, NLOSEXPLORE_PURE_NUMPY=flag)
            proc = subprocess.run(
                [sys.executable, __file__, "--worker", dump, "--repeat", str(args.repeat),
                 "--n-primary", str(args.n_primary)],
                env=env, capture_output=True, text=True, check=True,
            )
            info = json.loads(proc.stdout.strip().splitlines()[-1])
            results[label] = (info, dict(np.load(dump)))
        (nb, nb_arr), (npy, np_arr) = results["numba"], results["numpy"]
        print(f"L-corner scene, n_primary={args.n_primary}, best of {args.repeat}")
        print(f"{'stage':<16}{'numba s':>10}{'numpy s':>10}{'speedup':>9}  equal")
        for name in nb["times"]:
            a, b = nb["times"][name], npy["times"][name]
            same = np.array_equal(nb_arr[name], np_arr[name])
            print(f"{name:<16}{a:>10.4f}{b:>10.4f}{b / a:>9.1f}  {same}")
        if nb["backend"] != "numba":
            print("warning: numba backend unavailable, both columns are numpy", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
