"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Tolerances are pinned constants; every criterion runs within its 60 s budget
(shared heavy runs are timed in their session fixtures).
"""

import math
import time

import numpy as np
import pytest

from conftest import record_criterion
from loopforge.conjugacy import first_conjugate_distance, is_self_conjugate, sample_directions
from loopforge.corpus import clairaut_drift
from loopforge.geodesic import TangentState, exp_differential, exp_map, integrate_geodesic
from loopforge.loops import LoopSearchConfig, find_loops_from_point, loop_from_state, shortest_loop_search
from loopforge.metric import metric_at
from loopforge.shortening import ShorteningConfig, shorten_to_closed

BUDGET = 60.0

CLAIRAUT_TOL = 1e-6
SPEED_TOL = 1e-7
CONJ_TOL = 1e-4
DIFF_TOL = 1e-4
GAUSS_TOL = 1e-6
STEP_SLACK = 1e-6
NECK_LENGTH_TOL = 1e-3
BREAK_TOL = 1e-6
MAX_NECK_STEPS = 200
TORUS_LENGTH_TOL = 1e-4
CUSP_ENVELOPE = 0.05
CUSP_MIN_STEPS = 30
FLAT_BREAK_TOL = 1e-8
FLAT_LENGTH_TOL = 1e-6


def _budget(seconds):
    return seconds <= BUDGET


# ---------------------------------------------------------------------------
# 1. integrator oracle
# ---------------------------------------------------------------------------


def test_criterion_1_clairaut(corpus):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_c = worst_s = 0.0
    for name in ("torus-revolution", "catenoid"):
        m = corpus[name]
        for _ in range(20):
            lo = -2.0 if name == "catenoid" else 0.0
            hi = 2.0 if name == "catenoid" else 2 * math.pi
            x = np.array([rng.uniform(lo, hi), rng.uniform(0, 2 * math.pi)])
            ang = rng.uniform(0, 2 * math.pi)
            path = integrate_geodesic(m, TangentState.unit(m, x, [math.cos(ang), math.sin(ang)]), 50.0)
            worst_c = max(worst_c, clairaut_drift(m, path)[1])
            worst_s = max(worst_s, path.speed_drift(m))
    dt = time.perf_counter() - t0
    ok = worst_c <= CLAIRAUT_TOL and worst_s <= SPEED_TOL and _budget(dt)
    record_criterion(1, ok, f"clairaut drift {worst_c:.2e} <= {CLAIRAUT_TOL:g}, speed drift {worst_s:.2e} <= {SPEED_TOL:g}, {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. conjugate points
# ---------------------------------------------------------------------------


def test_criterion_2_conjugate_points(corpus):
    t0 = time.perf_counter()
    sphere = corpus["round-sphere"]
    p = np.array([1.2, 0.4])
    errs = []
    for w in sample_directions(sphere, p, 16, offset=0.5):
        rep = first_conjugate_distance(sphere, p, w, 4.0)
        errs.append(abs(rep.distance - math.pi) if rep.found else math.inf)
    pseudo = corpus["pseudosphere"]
    found = [first_conjugate_distance(pseudo, [0.5, 0.0], w, 20.0).found for w in sample_directions(pseudo, [0.5, 0.0], 16)]
    dt = time.perf_counter() - t0
    ok = max(errs) <= CONJ_TOL and not any(found) and _budget(dt)
    record_criterion(2, ok, f"sphere |d - pi| max {max(errs):.2e} <= {CONJ_TOL:g} (16 dirs), pseudosphere found {sum(found)}/16 within 20, {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. exponential differential
# ---------------------------------------------------------------------------

_SAMPLE_BOX = {
    "euclidean-plane": ((-3, 3), (-3, 3), 3.0),
    "round-sphere": ((0.8, 2.3), (0, 2 * math.pi), 0.6),
    "flat-cylinder": ((-3, 3), (0, 2 * math.pi), 3.0),
    "torus-revolution": ((0, 2 * math.pi), (0, 2 * math.pi), 2.0),
    "catenoid": ((-2, 2), (0, 2 * math.pi), 2.0),
    "pseudosphere": ((-2, 2), (0, 2 * math.pi), 2.0),
}


def test_criterion_3_exp_differential(corpus):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {}
    h = 1e-5
    for name, (b1, b2, vmax) in _SAMPLE_BOX.items():
        m = corpus[name]
        worst[name] = 0.0
        for _ in range(50):
            q = np.array([rng.uniform(*b1), rng.uniform(*b2)])
            E = np.linalg.cholesky(np.linalg.inv(metric_at(m, q)))
            v = E @ (rng.uniform(0.1, vmax) * _unit(rng))
            w = _unit(rng)
            D = exp_differential(m, q, v, check=False).matrix
            fd = m.chart.difference(exp_map(m, q, v + h * w), exp_map(m, q, v - h * w)) / (2 * h)
            worst[name] = max(worst[name], np.linalg.norm(D @ w - fd) / np.linalg.norm(fd))
    dt = time.perf_counter() - t0
    top = max(worst.values())
    ok = top <= DIFF_TOL and _budget(dt)
    record_criterion(3, ok, f"max rel |Dw - FD| {top:.2e} <= {DIFF_TOL:g} over 6 x 50 samples, {dt:.1f}s")
    assert ok


def _unit(rng):
    a = rng.uniform(0, 2 * math.pi)
    return np.array([math.cos(a), math.sin(a)])


# ---------------------------------------------------------------------------
# 5 (and inputs to 4). cornered loops, one accepted step each
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cornered_runs(corpus):
    t0 = time.perf_counter()
    runs = []
    for name, heights, lmax in (
        ("catenoid", (0.3, 0.5, 0.7, 0.9, 1.1), 8.0),
        ("torus-revolution", (0.5, 1.0, 1.5, 2.0, 2.5), 14.0),
    ):
        m = corpus[name]
        for r in heights:
            loops = find_loops_from_point(m, [r, 0.0], LoopSearchConfig(l_min=0.5, l_max=lmax))
            cornered = [lp for lp in loops if lp.break_angle > 1e-3]
            loop = min(cornered, key=lambda lp: lp.length)
            runs.append((name, loop, shorten_to_closed(m, loop, ShorteningConfig(max_iter=1))))
    return runs, time.perf_counter() - t0


def test_criterion_5_step_inequality(cornered_runs):
    runs, dt = cornered_runs
    rows = [row for _, _, res in runs for row in res.trace]
    margins = [row["input_length"] - row["eta0"] + STEP_SLACK - row["new_length"] for row in rows]
    eta = [row["eta0"] for row in rows]
    ok = len(runs) == 10 and len(rows) >= 10 and min(margins) >= 0 and min(eta) > 0 and _budget(dt)
    record_criterion(
        5, ok, f"{len(rows)} accepted steps on 10 cornered loops, min margin {min(margins):.2e} >= 0, min eta0 {min(eta):.3f} > 0, {dt:.1f}s"
    )
    assert ok


# ---------------------------------------------------------------------------
# 6. neck run
# ---------------------------------------------------------------------------


def test_criterion_6_neck(neck_run):
    res = neck_run.result
    fl = res.final_loop
    err = abs(fl.length - 2 * math.pi)
    ok = (
        res.status == "closed-geodesic"
        and err <= NECK_LENGTH_TOL
        and fl.break_angle <= BREAK_TOL
        and len(res.trace) <= MAX_NECK_STEPS
        and _budget(neck_run.seconds)
    )
    record_criterion(
        6,
        ok,
        f"status {res.status}, |l - 2pi| {err:.2e} <= {NECK_LENGTH_TOL:g}, break {fl.break_angle:.1e} <= {BREAK_TOL:g}, "
        f"{len(res.trace)} <= {MAX_NECK_STEPS} steps, {neck_run.seconds:.1f}s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 7. shortest loop on the torus
# ---------------------------------------------------------------------------


def test_criterion_7_torus_shortest(corpus):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    seeds = [[rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)] for _ in range(8)]
    res = shortest_loop_search(corpus["torus-revolution"], seeds, LoopSearchConfig(l_min=1.0, l_max=7.0))
    dt = time.perf_counter() - t0
    err = abs(res.loop.length - 2 * math.pi)
    ok = not res.diverged and err <= TORUS_LENGTH_TOL and res.loop.break_angle <= BREAK_TOL and _budget(dt)
    record_criterion(7, ok, f"|l - 2pi| {err:.2e} <= {TORUS_LENGTH_TOL:g}, break {res.loop.break_angle:.1e} <= {BREAK_TOL:g}, {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 8. cusp divergence on the pseudosphere
# ---------------------------------------------------------------------------


def test_criterion_8_cusp_divergence(cusp_run):
    res = cusp_run.result
    lengths = np.array(res.lengths)
    r = np.array([row["q"][0] for row in res.trace])
    new = np.array([row["new_length"] for row in res.trace])
    envelope = np.abs(new / (2 * math.pi * np.exp(-r)) - 1.0)
    inside = int(np.sum(envelope <= CUSP_ENVELOPE))
    structure = (
        res.status == "diverged"
        and np.all(np.diff(lengths) < 0)
        and len(r) >= CUSP_MIN_STEPS
        and np.all(np.diff(r) > 0)
    )
    ok = structure and inside == len(r) and _budget(cusp_run.seconds)
    record_criterion(
        8,
        ok,
        f"status {res.status}, {len(r)} steps, lengths decreasing and r increasing: {bool(structure)}; "
        f"within {CUSP_ENVELOPE:.0%} of 2pi e^-r at {inside}/{len(r)} steps (worst {envelope.max():.1%} at r={r[0]:.3f}), "
        f"{cusp_run.seconds:.1f}s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 4. Gauss residual over every executed step of 5, 6 and 8
# ---------------------------------------------------------------------------


def test_criterion_4_gauss_residual(cornered_runs, neck_run, cusp_run):
    t0 = time.perf_counter()
    rows = [row for _, _, res in cornered_runs[0] for row in res.trace]
    rows += neck_run.result.trace + cusp_run.result.trace
    worst = max(row["gauss_residual"] for row in rows)
    dt = time.perf_counter() - t0
    ok = worst <= GAUSS_TOL and _budget(dt)
    record_criterion(4, ok, f"max |g(df/dr, df/dt)| {worst:.2e} <= {GAUSS_TOL:g} over {len(rows)} steps")
    assert ok


# ---------------------------------------------------------------------------
# 9. flat controls
# ---------------------------------------------------------------------------


def test_criterion_9_flat_controls(corpus):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    plane = corpus["euclidean-plane"]
    plane_loops = sum(len(find_loops_from_point(plane, rng.uniform(-5, 5, 2), LoopSearchConfig(l_max=10.0))) for _ in range(64))
    cyl = corpus["flat-cylinder"]
    cyl_loops = []
    for _ in range(4):
        cyl_loops += find_loops_from_point(cyl, [rng.uniform(-5, 5), rng.uniform(0, 2 * math.pi)], LoopSearchConfig(l_max=13.0))
    breaks = max(lp.break_angle for lp in cyl_loops)
    mult = max(abs(lp.length / (2 * math.pi) - round(lp.length / (2 * math.pi))) * 2 * math.pi for lp in cyl_loops)
    dt = time.perf_counter() - t0
    ok = plane_loops == 0 and len(cyl_loops) > 0 and breaks <= FLAT_BREAK_TOL and mult <= FLAT_LENGTH_TOL and _budget(dt)
    record_criterion(
        9,
        ok,
        f"plane loops {plane_loops} from 64 seeds; cylinder {len(cyl_loops)} loops, break {breaks:.1e} <= {FLAT_BREAK_TOL:g}, "
        f"off 2pi Z by {mult:.1e} <= {FLAT_LENGTH_TOL:g}, {dt:.1f}s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 10. self-conjugacy gate
# ---------------------------------------------------------------------------


def test_criterion_10_self_conjugacy(corpus, cusp_run):
    t0 = time.perf_counter()
    sphere = corpus["round-sphere"]
    great = loop_from_state(sphere, [math.pi / 2, 0.3], [0.0, 1.0], 2 * math.pi)
    great_sc = bool(is_self_conjugate(sphere, great))
    others = find_loops_from_point(corpus["pseudosphere"], [0.5, 0.0], LoopSearchConfig(l_min=0.5, l_max=5.0))
    others += [cusp_run.loop, cusp_run.result.final_loop]
    n_pseudo = len(others)
    others_sc = [bool(is_self_conjugate(corpus["pseudosphere"], lp)) for lp in others]
    cyl_loops = find_loops_from_point(corpus["flat-cylinder"], [0.0, 0.0], LoopSearchConfig(l_max=13.0))
    others_sc += [bool(is_self_conjugate(corpus["flat-cylinder"], lp)) for lp in cyl_loops]
    forced = shorten_to_closed(sphere, great, ShorteningConfig(force=True))
    dt = time.perf_counter() - t0
    ok = great_sc and not any(others_sc) and forced.status == "self-conjugate-obstruction" and _budget(dt)
    record_criterion(
        10,
        ok,
        f"great circle self-conjugate {great_sc}; {sum(others_sc)} of {n_pseudo} pseudosphere + {len(cyl_loops)} cylinder loops flagged; "
        f"forced status {forced.status}, {dt:.1f}s",
    )
    assert ok
