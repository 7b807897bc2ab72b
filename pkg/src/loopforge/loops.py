"""Geodesic loops: residual, multi-start shooting, Newton refinement, shortest-loop search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import LeftChartDomain, LoopforgeError, NewtonDivergence, NoLoopsFound, SingularMetric
from .geodesic import (
    DEFAULT_STEP,
    GeodesicPath,
    IntegratorOptions,
    TangentState,
    _raw_geodesic,
    integrate_geodesic,
    integrate_variational,
)
from .metric import MetricModel, angle_between, orthonormal_frame

CLOSE_TOL = 1e-8
CLOSED_ANGLE = 1e-6


@dataclass
class GeodesicLoop:
    """Unit-speed geodesic from ``base`` with gamma(0) = gamma(length) = base."""

    base: np.ndarray
    direction: np.ndarray
    length: float
    v_out: np.ndarray
    v_in: np.ndarray
    break_angle: float
    residual: float
    path: GeodesicPath

    @property
    def is_closed(self) -> bool:
        return self.break_angle <= CLOSED_ANGLE

    def summary(self) -> dict:
        return {
            "base": self.base.tolist(),
            "direction": self.direction.tolist(),
            "length": self.length,
            "break_angle": self.break_angle,
            "residual": self.residual,
        }


def loop_from_state(model: MetricModel, p, w, length: float, step: float = DEFAULT_STEP) -> GeodesicLoop:
    """Integrate the geodesic (p, w) for ``length`` and package it with its closure data.

    ``w`` is normalised; no closure tolerance is enforced here.
    """
    st = TangentState.unit(model, p, w)
    path = integrate_geodesic(model, st, length, IntegratorOptions(step=step))
    end = path.end
    res = float(np.linalg.norm(model.chart.difference(end.x, st.x)))
    theta = angle_between(model, st.x, end.v, st.v)
    return GeodesicLoop(st.x.copy(), st.v.copy(), float(length), st.v.copy(), end.v.copy(), theta, res, path)


# ---------------------------------------------------------------------------
# direction parametrisation
# ---------------------------------------------------------------------------


def _sphere_point(phi) -> np.ndarray:
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    n = len(phi) + 1
    u = np.empty(n)
    s = 1.0
    for k in range(n - 1):
        u[k] = s * math.cos(phi[k])
        s *= math.sin(phi[k])
    u[n - 1] = s
    return u


def _sphere_angles(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    n = len(u)
    phi = np.empty(n - 1)
    for k in range(n - 1):
        rest = np.linalg.norm(u[k + 1 :])
        phi[k] = math.atan2(rest, u[k])
    if u[-1] < 0:
        phi[-1] = -phi[-1]
    if n == 2:
        phi[0] = math.atan2(u[1], u[0])
    return phi


def direction(model: MetricModel, p, phi) -> np.ndarray:
    """Unit vector at p with angles ``phi`` in the Gram-Schmidt orthonormal frame."""
    return orthonormal_frame(model, p) @ _sphere_point(phi)


def direction_angles(model: MetricModel, p, w) -> np.ndarray:
    E = orthonormal_frame(model, p)
    return _sphere_angles(np.linalg.solve(E, np.asarray(w, dtype=float)))


def _direction_jacobian(E, phi, h=1e-6):
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    cols = []
    for k in range(len(phi)):
        dp = np.zeros_like(phi)
        dp[k] = h
        cols.append(E @ (_sphere_point(phi + dp) - _sphere_point(phi - dp)) / (2 * h))
    return np.column_stack(cols)


def loop_residual(model: MetricModel, p, phi, length: float, step: float = DEFAULT_STEP) -> np.ndarray:
    """exp_p(l w(phi)) - p, periodic coordinates compared at the nearest representative."""
    if not length > 0:
        raise ValueError("loop length must be positive")
    p = np.asarray(p, dtype=float)
    w = direction(model, p, phi)
    path, status, t_exit = _raw_geodesic(model, p, w, length, step)
    if status == K.LEFT_CHART:
        raise LeftChartDomain(t_exit, partial=path)
    if status != K.OK:
        raise SingularMetric(f"metric evaluation failed near t={t_exit:.6g}")
    return model.chart.difference(path.x[-1], p)


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


@dataclass
class LoopSearchConfig:
    num_directions: int = 16
    l_min: float = 0.1
    l_max: float = 10.0
    newton_tol: float = 1e-10
    max_newton: int = 30
    seed: int = 0
    step: float = DEFAULT_STEP
    max_candidates_per_ray: int = 4
    screen_ratio: float = 0.35
    dedup_tol: float = 1e-4
    region: tuple | None = None
    max_probes: int = 12
    screen_step: float = 1e-2
    fan_tol: float = 0.05
    min_angle: float = 1e-9
    max_rays: int = 4096
    max_seeds: int = 64

    def __post_init__(self):
        if not self.l_min > 0:
            raise ValueError("l_min must be positive")
        if not self.l_max > self.l_min:
            raise ValueError("l_max must exceed l_min")
        if self.num_directions < 1 or self.max_newton < 1:
            raise ValueError("counts must be >= 1")


@dataclass
class SearchLog:
    starts: int = 0
    converged: int = 0
    failures: list = field(default_factory=list)


def _newton(model: MetricModel, p, phi, length, cfg: LoopSearchConfig):
    """Damped Newton on (phi, l); returns (phi, l, |F|)."""
    n = model.dim
    E = orthonormal_frame(model, p)
    phi = np.atleast_1d(np.asarray(phi, dtype=float)).copy()
    l = float(length)

    def evaluate(phi, l, want_jacobian):
        w = E @ _sphere_point(phi)
        if want_jacobian:
            sol, status, t_exit = integrate_variational(
                model, p, w, l, cfg.step, np.zeros((n, n)), np.eye(n), allow_exit=True
            )
            if status != K.OK:
                return None, None
            F = model.chart.difference(sol.x[-1], p)
            Jm = np.column_stack([sol.X[-1] @ _direction_jacobian(E, phi), sol.v[-1]])
            return F, Jm
        path, status, _ = _raw_geodesic(model, p, w, l, cfg.step)
        if status != K.OK:
            return None, None
        return model.chart.difference(path.x[-1], p), None

    F, Jm = evaluate(phi, l, True)
    if F is None:
        raise NewtonDivergence("start leaves the chart")
    r = float(np.linalg.norm(F))
    for _ in range(cfg.max_newton):
        if r <= cfg.newton_tol:
            return phi, l, r
        step = np.linalg.lstsq(Jm, -F, rcond=1e-12)[0]
        # keep the length update moderate so Newton does not jump winding classes
        cap = 0.25 * l
        if abs(step[-1]) > cap:
            step = step * (cap / abs(step[-1]))
        lam = 1.0
        accepted = False
        while lam >= 1.0 / 64:
            phi_t = phi + lam * step[:-1]
            l_t = l + lam * step[-1]
            if l_t > 0:
                F_t, _ = evaluate(phi_t, l_t, False)
                if F_t is not None and np.linalg.norm(F_t) < (1.0 - 1e-4 * lam) * r:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            raise NewtonDivergence(f"line search failed at |F|={r:.3e}")
        phi, l = phi_t, l_t
        F, Jm = evaluate(phi, l, True)
        if F is None:
            raise NewtonDivergence("iterate leaves the chart")
        r = float(np.linalg.norm(F))
    if r <= cfg.newton_tol:
        return phi, l, r
    raise NewtonDivergence(f"no convergence in {cfg.max_newton} iterations (|F|={r:.3e})")


def _vectorized_difference(chart, X, p):
    D = X - p[None, :]
    for k, per in enumerate(chart.periods):
        if per is not None:
            D[:, k] -= per * np.round(D[:, k] / per)
    return D


def find_loops_from_point(
    model: MetricModel, p, cfg: LoopSearchConfig | None = None, log: SearchLog | None = None
) -> list[GeodesicLoop]:
    """Multi-start shooting for geodesic loops based at p.

    Each direction seed is integrated once to l_max; deep local minima of the
    return distance along the ray seed a damped Newton solve on (angles, l).
    """
    cfg = cfg or LoopSearchConfig()
    log = log if log is not None else SearchLog()
    p = np.asarray(p, dtype=float)
    if not model.chart.contains(p):
        raise LoopforgeError(f"base point {p.tolist()} is outside the chart")
    n = model.dim
    E = orthonormal_frame(model, p)
    if n == 2:
        starts = [(np.array([ph]), t) for ph, t in _screen_surface(model, p, cfg)]
    else:
        rng = np.random.default_rng(cfg.seed)
        starts = []
        for u in rng.standard_normal((cfg.num_directions, n)):
            phi0 = _sphere_angles(u)
            starts.extend((phi0, t) for t in _screen(model, p, E @ _sphere_point(phi0), cfg))
    found: list[GeodesicLoop] = []
    keys: list[tuple[np.ndarray, float]] = []
    for phi0, l0 in starts:
        log.starts += 1
        try:
            phi, l, _ = _newton(model, p, phi0, l0, cfg)
        except LoopforgeError as exc:
            log.failures.append((phi0.tolist(), l0, str(exc)))
            continue
        if not (cfg.l_min * (1 - 1e-9) <= l <= cfg.l_max * (1 + 1e-9)):
            log.failures.append((phi0.tolist(), l0, f"converged outside length range (l={l:.6g})"))
            continue
        w = E @ _sphere_point(phi)
        if any(abs(l - lk) <= cfg.dedup_tol and np.linalg.norm(w - wk) <= cfg.dedup_tol for wk, lk in keys):
            continue
        loop = loop_from_state(model, p, w, l, cfg.step)
        if loop.residual > CLOSE_TOL:
            log.failures.append((phi0.tolist(), l0, f"closure {loop.residual:.3e} above tolerance"))
            continue
        keys.append((w, l))
        found.append(loop)
        log.converged += 1
    found.sort(key=lambda lp: (lp.length, tuple(direction_angles(model, p, lp.direction))))
    return found


def _screen(model, p, w, cfg):
    """Seed lengths along one ray: deep local minima of the return distance (any dimension)."""
    path, status, _ = _raw_geodesic(model, p, w, cfg.l_max, cfg.screen_step)
    res = np.linalg.norm(_vectorized_difference(model.chart, path.x, p), axis=1)
    t = path.t
    inner = (res[1:-1] <= res[:-2]) & (res[1:-1] < res[2:])
    idx = np.nonzero(inner)[0] + 1
    out = [(res[i], t[i]) for i in idx if t[i] >= cfg.l_min and res[i] < cfg.screen_ratio * t[i]]
    if status == K.OK and len(t) > 2 and res[-1] < res[-2] and res[-1] < cfg.screen_ratio * t[-1]:
        out.append((res[-1], t[-1]))
    out.sort()
    return [float(tt) for _, tt in out[: cfg.max_candidates_per_ray]]


def _ray(model, p, E, phi, cfg):
    w = E @ _sphere_point([phi])
    path, _, _ = _raw_geodesic(model, p, w, cfg.l_max, cfg.screen_step)
    return path.x


def _needs_split(model, p, xa, xb, cfg) -> bool:
    """True if two neighbouring rays separate by more than fan_tol somewhere near p."""
    k = min(len(xa), len(xb))
    if k < 2:
        return False
    j0 = max(0, int(cfg.l_min / cfg.screen_step) - 1)
    if j0 >= k - 1:
        return False
    gap = np.max(np.abs(xa[j0:k] - xb[j0:k]), axis=1)
    near = np.max(np.abs(_vectorized_difference(model.chart, xa[j0:k], p)), axis=1)
    move = np.max(np.abs(np.diff(xa[j0 : k + 1 if k < len(xa) else k], axis=0, append=xa[k - 1 : k])), axis=1)[: k - j0]
    return bool(np.any((gap > cfg.fan_tol) & (near <= gap + move)))


def _screen_surface(model, p, cfg):
    """Seeds (phi, l) for surfaces from zeros of the return map on a ray fan.

    Directions are subdivided until neighbouring rays stay within
    ``cfg.fan_tol`` of each other in chart coordinates, so that the map
    (phi, t) -> gamma(t) - p is close to bilinear on each fan cell.  A cell
    whose image contains the origin seeds Newton.
    """
    E = orthonormal_frame(model, p)
    two_pi = 2.0 * math.pi
    phis = list((np.arange(cfg.num_directions) + 0.5) * two_pi / cfg.num_directions)
    rays = {ph: _ray(model, p, E, ph, cfg) for ph in phis}
    pairs = [(phis[i], phis[(i + 1) % len(phis)]) for i in range(len(phis))]
    done = []
    while pairs:
        a, b = pairs.pop()
        b_eff = b if b > a else b + two_pi
        if (
            len(rays) < cfg.max_rays
            and b_eff - a > cfg.min_angle
            and _needs_split(model, p, rays[a], rays[b], cfg)
        ):
            mid = 0.5 * (a + b_eff)
            mid = mid - two_pi if mid >= two_pi else mid
            rays[mid] = _ray(model, p, E, mid, cfg)
            pairs.append((a, mid))
            pairs.append((mid, b))
        else:
            done.append((a, b))
    h = cfg.screen_step
    j0 = max(1, int(math.floor(cfg.l_min / h)) - 1)
    seeds = []
    for a, b in done:
        xa, xb = rays[a], rays[b]
        k = min(len(xa), len(xb))
        if k - 1 <= j0:
            continue
        b_eff = b if b > a else b + two_pi
        A = _vectorized_difference(model.chart, xa[j0 : k - 1], p)
        B = A + (xa[j0 + 1 : k] - xa[j0 : k - 1])
        C = A + (xb[j0 : k - 1] - xa[j0 : k - 1])
        D = A + (xb[j0 + 1 : k] - xa[j0 : k - 1])
        for P, Q, R, uv in ((A, B, D, ((0, 0), (0, 1), (1, 1))), (A, D, C, ((0, 0), (1, 1), (1, 0)))):
            lam = _barycentric_origin(P, Q, R)
            inside = np.all(lam >= -1e-12, axis=1)
            for idx in np.nonzero(inside)[0]:
                wgt = lam[idx]
                s_phi = sum(wgt[m] * uv[m][0] for m in range(3))
                s_t = sum(wgt[m] * uv[m][1] for m in range(3))
                phi = a + s_phi * (b_eff - a)
                t = (j0 + idx + s_t) * h
                if cfg.l_min <= t <= cfg.l_max:
                    seeds.append((float(phi % two_pi), float(t)))
    seeds.sort(key=lambda st: (st[1], st[0]))
    unique = []
    for ph, t in seeds:
        if not any(abs(t - t2) < 10 * h and abs(math.remainder(ph - p2, two_pi)) < 1e-6 for p2, t2 in unique):
            unique.append((ph, t))
    return unique[: cfg.max_seeds]


def _barycentric_origin(P, Q, R):
    """Barycentric coordinates of the origin in each triangle (P_i, Q_i, R_i), rows vectorised."""
    v0 = Q - P
    v1 = R - P
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    safe = np.where(det == 0.0, np.inf, det)
    bx = -P[:, 0]
    by = -P[:, 1]
    l1 = (bx * v1[:, 1] - by * v1[:, 0]) / safe
    l2 = (v0[:, 0] * by - v0[:, 1] * bx) / safe
    lam = np.column_stack([1.0 - l1 - l2, l1, l2])
    lam[det == 0.0] = -1.0
    return lam


def refine_loop(model: MetricModel, loop: GeodesicLoop, tol: float = 1e-10, cfg: LoopSearchConfig | None = None) -> GeodesicLoop:
    """Newton-polish a near-loop (residual <= 1e-3) to residual <= tol."""
    cfg = cfg or LoopSearchConfig()
    p = np.asarray(loop.base, dtype=float)
    start = loop_residual(model, p, direction_angles(model, p, loop.direction), loop.length, cfg.step)
    if np.linalg.norm(start) > 1e-3:
        raise NewtonDivergence(f"loop residual {np.linalg.norm(start):.3e} exceeds 1e-3")
    local = LoopSearchConfig(**{**cfg.__dict__, "newton_tol": tol, "l_min": 1e-12, "l_max": math.inf})
    phi, l, _ = _newton(model, p, direction_angles(model, p, loop.direction), loop.length, local)
    if abs(l - loop.length) >= 1e-3:
        raise NewtonDivergence(f"refinement moved the length by {abs(l - loop.length):.3e}")
    return loop_from_state(model, p, direction(model, p, phi), l, cfg.step)


# ---------------------------------------------------------------------------
# shortest loop with divergence monitoring
# ---------------------------------------------------------------------------


@dataclass
class DivergenceReport:
    """Improving loops whose base points escaped the bounded region."""

    coordinate: int
    coordinate_name: str
    bases: list
    lengths: list
    message: str


@dataclass
class ShortestLoopResult:
    loop: GeodesicLoop | None
    divergence: DivergenceReport | None
    candidates: list

    @property
    def diverged(self) -> bool:
        return self.divergence is not None


def _in_box(x, region) -> bool:
    if region is None:
        return True
    return all(lo <= xi <= hi for xi, (lo, hi) in zip(x, region))


def _sort_key(model, lp: GeodesicLoop):
    return (round(lp.length, 9), tuple(lp.base), tuple(direction_angles(model, lp.base, lp.direction)))


def shortest_loop_search(model: MetricModel, seeds, cfg: LoopSearchConfig | None = None) -> ShortestLoopResult:
    """Shortest loop over all seed base points, or a divergence report.

    When the best seed is strictly shorter than the next best, the search is
    continued by stepping the base point further along the improving
    direction.  If the lengths keep decreasing until the base leaves the
    bounded region, no minimum is attained inside it and a divergence report
    naming the dominant coordinate is returned.
    """
    cfg = cfg or LoopSearchConfig()
    seeds = [np.asarray(s, dtype=float) for s in seeds]
    if not seeds:
        raise ValueError("at least one seed point is required")
    region = cfg.region if cfg.region is not None else model.region
    per_seed = []
    everything = []
    for s in seeds:
        loops = find_loops_from_point(model, s, cfg)
        everything.extend(loops)
        if loops:
            per_seed.append((min(lp.length for lp in loops), s, min(loops, key=lambda lp: _sort_key(model, lp))))
    if not per_seed:
        raise NoLoopsFound(f"no geodesic loops from {len(seeds)} seed point(s)")
    per_seed.sort(key=lambda item: _sort_key(model, item[2]))
    best_len, best_seed, best = per_seed[0]
    if len(per_seed) > 1 and per_seed[1][0] > best_len * (1 + 1e-6):
        step = model.chart.difference(best_seed, per_seed[1][1])
        if np.linalg.norm(step) > 0:
            bases = [per_seed[1][1], best_seed]
            lengths = [per_seed[1][0], best_len]
            x = best_seed
            for _ in range(cfg.max_probes):
                x = x + step
                if not (_in_box(x, region) and model.chart.contains(x)):
                    k = int(np.argmax(np.abs(step)))
                    return ShortestLoopResult(
                        None,
                        DivergenceReport(
                            k,
                            model.coords[k],
                            [b.tolist() for b in bases],
                            lengths,
                            f"loop lengths decrease monotonically while {model.coords[k]} "
                            f"{'increases' if step[k] > 0 else 'decreases'} out of the bounded region",
                        ),
                        everything,
                    )
                loops = find_loops_from_point(model, x, cfg)
                if not loops:
                    break
                cand = min(loops, key=lambda lp: _sort_key(model, lp))
                everything.extend(loops)
                if not cand.length < lengths[-1] * (1 - 1e-9):
                    break
                bases.append(x.copy())
                lengths.append(cand.length)
                best = cand
    everything.sort(key=lambda lp: _sort_key(model, lp))
    best = min([best] + everything, key=lambda lp: _sort_key(model, lp))
    return ShortestLoopResult(best, None, everything)
