"""Shorten the cornered catenoid neck loop and write the per-step trace as CSV."""

import argparse
import csv
import math
from pathlib import Path

from loopforge.corpus import builtin_manifold
from loopforge.loops import loop_from_state
from loopforge.records import load_loop_file
from loopforge.shortening import ShorteningConfig, shorten_to_closed

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--loop-file", default=str(ROOT / "data" / "neck_corner.loop"))
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--out", default=str(ROOT / "results" / "neck_trace.csv"))
    args = ap.parse_args()

    m = builtin_manifold("catenoid", c=args.c)
    fx = load_loop_file(args.loop_file)
    res = shorten_to_closed(m, loop_from_state(m, fx.p, fx.w, fx.l), ShorteningConfig(max_iter=200))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = ["step", "input_length", "new_length", "eta0", "delta", "input_break_angle", "gauss_residual"]
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + ["q_r", "q_theta"])
        for k, row in enumerate(res.trace):
            w.writerow([k] + [row[c] for c in cols[1:]] + list(row["q"]))
    fl = res.final_loop
    print(f"{res.status}: {len(res.trace)} steps, final length {fl.length:.10f} (2pi {2 * math.pi:.10f}), break {fl.break_angle:.2e}")
    print(f"trace written to {out}")


if __name__ == "__main__":
    main()
