"""Command-line interface: one JSON result document per invocation on stdout.

Exit codes: 0 success, 1 domain error (any LoopforgeError), 2 usage error.
Vectors are comma-separated; write negative leading values as ``--point=-1,0``.
"""

from __future__ import annotations

import argparse
import math
import sys
import time

import numpy as np

from .conjugacy import InjectivityConfig, first_conjugate_distance, injectivity_radius_estimate, is_self_conjugate
from .corpus import BUILTIN_NAMES, DEFAULT_PARAMS, builtin_manifold, clairaut_drift, load_spec_file
from .errors import LeftChartDomain, LoopforgeError
from .geodesic import DEFAULT_STEP, IntegratorOptions, TangentState, exp_differential, exp_map, integrate_geodesic
from .loops import LoopSearchConfig, find_loops_from_point, loop_from_state
from .metric import norm
from .records import RunRecord, load_loop_file, plain
from .shortening import TOL_CLOSED, ShorteningConfig, shorten_to_closed

COMMANDS = ("manifolds", "exp", "geodesic", "loops", "shorten", "conjugate", "injradius", "bench")


class UsageError(Exception):
    pass


def _vec(text: str | None, name: str, dim: int | None = None) -> np.ndarray:
    if text is None:
        raise UsageError(f"--{name} is required")
    try:
        out = np.array([float(s) for s in text.replace(" ", "").split(",") if s != ""])
    except ValueError:
        raise UsageError(f"--{name}: cannot read {text!r} as comma-separated numbers") from None
    if dim is not None and out.shape != (dim,):
        raise UsageError(f"--{name} needs {dim} components, got {out.size}")
    return out


def _model(args):
    if args.spec_file:
        return load_spec_file(args.spec_file)
    if not args.manifold:
        raise UsageError("--manifold or --spec-file is required")
    params = {k: getattr(args, k) for k in ("R", "r", "a", "c") if getattr(args, k) is not None}
    return builtin_manifold(args.manifold, **params)


def _length(args, default=None) -> float:
    value = args.length if args.length is not None else default
    if value is None:
        raise UsageError("--length is required")
    if not (value > 0 and math.isfinite(value)):
        raise UsageError(f"--length must be positive, got {value}")
    return float(value)


def cmd_manifolds(args):
    rows = []
    for name in BUILTIN_NAMES:
        m = builtin_manifold(name)
        rows.append({"name": name, "params": DEFAULT_PARAMS[name], "coords": list(m.coords)})
    return None, {"manifolds": rows}


def cmd_exp(args):
    model = _model(args)
    p = _vec(args.point, "point", model.dim)
    v = _vec(args.vector, "vector", model.dim)
    result = {"point": p, "vector": v, "endpoint": exp_map(model, p, v, args.step), "length": norm(model, p, v)}
    if args.dump and result["length"] > 0:
        path = integrate_geodesic(model, TangentState.unit(model, p, v), result["length"], IntegratorOptions(args.step))
        path.to_csv(args.dump)
    return model, result


def cmd_geodesic(args):
    model = _model(args)
    p = _vec(args.point, "point", model.dim)
    st = TangentState.unit(model, p, _vec(args.vector, "vector", model.dim))
    path = integrate_geodesic(model, st, _length(args), IntegratorOptions(args.step))
    result = {
        "start": {"x": st.x, "v": st.v},
        "end": {"x": path.end.x, "v": path.end.v},
        "length": path.total_length,
        "samples": len(path.t),
        "speed_drift": path.speed_drift(model),
    }
    if model.profile is not None:
        const, drift = clairaut_drift(model, path)
        result["clairaut"] = {"constant": const, "drift": drift}
    if args.dump:
        path.to_csv(args.dump)
    return model, result


def _loop_config(args, **kw):
    if args.tol is not None:
        kw["newton_tol"] = args.tol
    return LoopSearchConfig(seed=args.seed, step=args.step, **kw)


def cmd_loops(args):
    model = _model(args)
    p = _vec(args.point, "point", model.dim)
    cfg = _loop_config(args, l_max=_length(args, 10.0), l_min=min(0.1, _length(args, 10.0) / 2))
    loops = find_loops_from_point(model, p, cfg)
    rows = []
    for lp in loops:
        row = lp.summary()
        sc = is_self_conjugate(model, lp)
        row["closed"] = lp.is_closed
        row["self_conjugate"] = sc.self_conjugate
        row["scaled_det"] = sc.scaled_det
        rows.append(row)
    return model, {"point": p, "count": len(rows), "loops": rows}


def cmd_shorten(args):
    model = _model(args)
    if args.loop_file:
        fx = load_loop_file(args.loop_file)
        p, w, l = fx.p, fx.w, fx.l
    else:
        p = _vec(args.point, "point", model.dim)
        w = _vec(args.vector, "vector", model.dim)
        l = _length(args)
    if p.shape != (model.dim,):
        raise UsageError(f"loop base point needs {model.dim} components")
    loop = loop_from_state(model, p, w, l, args.step)
    cfg = ShorteningConfig(
        tol_closed=args.tol if args.tol is not None else TOL_CLOSED,
        max_iter=args.max_iter,
        step=args.step,
        force=args.force,
        keep_steps=False,
    )
    res = shorten_to_closed(model, loop, cfg)
    out = res.summary()
    out["input_loop"] = loop.summary()
    out["lengths"] = res.lengths
    return model, out, res.status


def cmd_conjugate(args):
    model = _model(args)
    p = _vec(args.point, "point", model.dim)
    w = _vec(args.vector, "vector", model.dim)
    rep = first_conjugate_distance(model, p, w, _length(args, 10.0), args.step)
    return model, {
        "found": rep.found,
        "distance": rep.distance,
        "horizon": rep.horizon,
        "bracket": rep.bracket,
        "scanned_to": rep.scanned_to,
    }


def cmd_injradius(args):
    model = _model(args)
    p = _vec(args.point, "point", model.dim)
    horizon = _length(args, 10.0)
    cfg = InjectivityConfig(
        num_directions=args.directions,
        horizon=horizon,
        step=args.step,
        loop_config=_loop_config(args, l_max=2.0 * horizon),
    )
    est = injectivity_radius_estimate(model, p, cfg)
    return model, {
        "radius": est.radius,
        "provenance": est.provenance,
        "conjugate_distance": est.conjugate_distance,
        "conjugate_direction": est.conjugate_direction,
        "shortest_loop": est.shortest_loop,
        "skipped_directions": est.skipped_directions,
        "note": est.note,
    }


# ---------------------------------------------------------------------------
# bench: small fixed oracle cases, run in a fixed order
# ---------------------------------------------------------------------------


def _bench_clairaut(rng):
    model = builtin_manifold("torus-revolution", R=2.0, r=1.0)
    worst = 0.0
    for _ in range(3):
        st = TangentState.unit(model, rng.uniform(0, 2 * math.pi, 2), rng.normal(size=2))
        worst = max(worst, clairaut_drift(model, integrate_geodesic(model, st, 50.0))[1])
    return {"value": worst, "bound": 1e-6, "pass": worst <= 1e-6}


def _bench_conjugate(rng):
    model = builtin_manifold("round-sphere", R=1.0)
    p = np.array([1.0 + 0.5 * rng.uniform(), 0.0])
    err = abs(first_conjugate_distance(model, p, np.array([0.3, 1.0]), 5.0).distance - math.pi)
    return {"value": err, "bound": 1e-4, "pass": err <= 1e-4}


def _bench_differential(rng):
    model = builtin_manifold("catenoid", c=1.0)
    q = rng.uniform(-1, 1, 2)
    v = rng.normal(size=2)
    w = rng.normal(size=2)
    D = exp_differential(model, q, v).matrix
    h = 1e-5
    fd = (exp_map(model, q, v + h * w) - exp_map(model, q, v - h * w)) / (2 * h)
    err = float(np.linalg.norm(D @ w - fd) / np.linalg.norm(fd))
    return {"value": err, "bound": 1e-4, "pass": err <= 1e-4}


def _bench_torus_loop(rng):
    model = builtin_manifold("torus-revolution", R=2.0, r=1.0)
    loops = find_loops_from_point(model, np.array([math.pi, 0.0]), LoopSearchConfig(l_min=1.0, l_max=7.0))
    err = abs(min(lp.length for lp in loops) - 2 * math.pi) if loops else math.inf
    return {"value": err, "bound": 1e-4, "pass": err <= 1e-4}


BENCH_CASES = {
    "clairaut-torus": _bench_clairaut,
    "conjugate-sphere": _bench_conjugate,
    "differential-catenoid": _bench_differential,
    "shortest-loop-torus": _bench_torus_loop,
}


def cmd_bench(args):
    cases = {}
    timings = {}
    for name in sorted(BENCH_CASES):
        t0 = time.perf_counter()
        cases[name] = BENCH_CASES[name](np.random.default_rng(args.seed))
        timings[name] = time.perf_counter() - t0
    status = "ok" if all(c["pass"] for c in cases.values()) else "failed"
    return None, {"cases": cases, "passed": sum(c["pass"] for c in cases.values()), "total": len(cases)}, status, timings


HANDLERS = {
    "manifolds": cmd_manifolds,
    "exp": cmd_exp,
    "geodesic": cmd_geodesic,
    "loops": cmd_loops,
    "shorten": cmd_shorten,
    "conjugate": cmd_conjugate,
    "injradius": cmd_injradius,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifold", choices=BUILTIN_NAMES)
    common.add_argument("--spec-file", help="manifold description file (overrides --manifold)")
    for name in ("R", "r", "a", "c"):
        common.add_argument(f"--{name}", type=float, help="manifold parameter")
    common.add_argument("--point", help="base point, comma-separated chart coordinates")
    common.add_argument("--vector", help="tangent vector, comma-separated components")
    common.add_argument("--length", type=float, help="arclength, search bound or horizon")
    common.add_argument("--step", type=float, default=DEFAULT_STEP, help="RK4 step")
    common.add_argument("--tol", type=float, help="command tolerance (Newton or closedness)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dump", help="write the trajectory table (CSV) here")
    common.add_argument("--max-iter", type=int, default=500)
    common.add_argument("--loop-file", help="loop fixture 'p = ..; w = ..; l = ..'")
    common.add_argument("--directions", type=int, default=64, help="directions sampled by injradius")
    common.add_argument("--force", action="store_true", help="shorten even if the loop is already closed")
    common.add_argument("--no-time", action="store_true", help="omit wall-time fields from the output")

    parser = argparse.ArgumentParser(prog="loopforge", description="Geodesic loops and basepoint-shift shortening.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.step <= 0 or args.max_iter < 1 or args.directions < 1:
        print("loopforge: error: --step, --max-iter and --directions must be positive", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    manifold = args.manifold or (args.spec_file and "spec-file") or ""
    try:
        out = HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"loopforge {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except LoopforgeError as exc:
        result = {"error": type(exc).__name__}
        if isinstance(exc, LeftChartDomain):
            result["t_exit"] = exc.t_exit
        rec = RunRecord(args.command, manifold, {}, result, "error", str(exc), time.perf_counter() - t0)
        print(rec.to_json(not args.no_time))
        print(f"loopforge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    model, result = out[0], out[1]
    status = out[2] if len(out) > 2 else "ok"
    timings = out[3] if len(out) > 3 else {}
    rec = RunRecord(
        args.command,
        model.name if model is not None else manifold,
        plain(dict(model.params)) if model is not None else {},
        plain(result),
        status,
        "",
        time.perf_counter() - t0,
        timings,
    )
    print(rec.to_json(not args.no_time))
    return 0


if __name__ == "__main__":
    sys.exit(main())
