"""Time the geodesic and variational kernels on each corpus manifold."""

import argparse
import json
import time

import numpy as np

from loopforge.corpus import BUILTIN_NAMES, builtin_manifold
from loopforge.geodesic import DEFAULT_STEP, TangentState, exp_differential, integrate_geodesic


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--length", type=float, default=20.0)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rows = {}
    for name in BUILTIN_NAMES:
        m = builtin_manifold(name)
        x = np.array([1.2, 0.3]) if name == "round-sphere" else np.array([0.4, 0.3])
        v = np.array([0.0, 1.0]) if name == "round-sphere" else np.array([0.3, 0.8])
        st = TangentState.unit(m, x, v)
        length = min(args.length, 2.0) if name == "round-sphere" else args.length
        integrate_geodesic(m, st, 1.0)
        exp_differential(m, x, 0.5 * st.v, check=False)
        geo = best_of(lambda: integrate_geodesic(m, st, length), args.repeat)
        var = best_of(lambda: exp_differential(m, x, length * st.v, check=False), args.repeat)
        steps = length / DEFAULT_STEP
        rows[name] = {"length": length, "geodesic_us_per_step": 1e6 * geo / steps, "variational_us_per_step": 1e6 * var / steps}
    print(json.dumps(rows, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
