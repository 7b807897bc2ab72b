"""Jacobi fields, conjugate points, self-conjugacy of loops, injectivity radius estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import LeftChartDomain
from .geodesic import DEFAULT_STEP, GeodesicPath, TangentState, integrate_variational
from .metric import MetricModel, cholesky_factor, christoffels_at, orthonormal_frame

SELF_CONJUGATE_TOL = 1e-6
SCAN_POINTS = 2000
BISECT_TOL = 1e-6


@dataclass
class JacobiMatrixSolution:
    """Matrix Jacobi field along a geodesic, J(0) = 0 and J'(0) = A (identity by default).

    ``J`` holds chart components; ``Jp`` is the covariant derivative D_t J.
    ``dJ`` is the plain coordinate derivative, used for interpolation.
    """

    path: GeodesicPath
    t: np.ndarray
    J: np.ndarray
    Jp: np.ndarray
    dJ: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return _hermite(self.t, self.J, self.dJ, t)

    def det(self, t: float | None = None):
        if t is None:
            return np.linalg.det(self.J)
        return float(np.linalg.det(self.at(t)))


def _hermite(T, Y, dY, t):
    i = int(np.clip(np.searchsorted(T, t, side="right") - 1, 0, len(T) - 2))
    h = T[i + 1] - T[i]
    s = (t - T[i]) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * Y[i] + h10 * h * dY[i] + h01 * Y[i + 1] + h11 * h * dY[i + 1]


def _covariant(model: MetricModel, x, v, X, V):
    # D_t J = dJ/dt + Gamma(gamma', J)
    out = np.empty_like(V)
    for k in range(len(x)):
        gam = christoffels_at(model, x[k])
        out[k] = V[k] + np.einsum("lij,i,jc->lc", gam, v[k], X[k])
    return out


def integrate_jacobi_matrix(
    model: MetricModel, geodesic: GeodesicPath, initial=None, covariant: bool = True
) -> JacobiMatrixSolution:
    """Jacobi fields along ``geodesic`` with J(0)=0, J'(0)=initial (identity if omitted)."""
    n = model.dim
    A = np.eye(n) if initial is None else np.asarray(initial, dtype=float)
    start = geodesic.start
    sol, _, _ = integrate_variational(
        model, start.x, start.v, geodesic.total_length, geodesic.step, np.zeros((n, n)), A
    )
    path = GeodesicPath(sol.t, sol.x, sol.v, np.zeros_like(sol.v), geodesic.step)
    Jp = _covariant(model, sol.x, sol.v, sol.X, sol.V) if covariant else sol.V
    return JacobiMatrixSolution(path, sol.t, sol.X, Jp, sol.V)


@dataclass
class ConjugacyReport:
    """Outcome of a determinant sign scan along one geodesic."""

    distance: float | None
    horizon: float
    bracket: tuple[float, float] | None
    tolerance: float
    scanned_to: float
    exited_chart: bool = False

    @property
    def found(self) -> bool:
        return self.distance is not None


def first_conjugate_distance(
    model: MetricModel,
    p,
    w,
    horizon: float,
    step: float = DEFAULT_STEP,
    scan_points: int = SCAN_POINTS,
    tol: float = BISECT_TOL,
) -> ConjugacyReport:
    """Smallest t in (0, horizon] with det J(t) = 0, by sign scan and bisection.

    If the geodesic leaves the chart before a conjugate point is seen,
    LeftChartDomain is raised carrying the partial report.
    """
    state = TangentState.unit(model, p, w)
    n = model.dim
    sol, status, t_exit = integrate_variational(
        model, state.x, state.v, horizon, step, np.zeros((n, n)), np.eye(n), allow_exit=True
    )
    T, X, V = sol.t, sol.X, sol.V
    t_end = float(T[-1])
    grid = np.linspace(0.0, horizon, scan_points + 1)[1:]
    grid = grid[grid <= t_end]

    def det(t):
        return float(np.linalg.det(_hermite(T, X, V, t)))

    prev_t = 0.0
    bracket = None
    for t in grid:
        if det(t) <= 0.0:
            bracket = (prev_t, float(t))
            break
        prev_t = float(t)
    if bracket is None:
        report = ConjugacyReport(None, horizon, None, tol, t_end, exited_chart=status != K.OK)
        if status != K.OK:
            raise LeftChartDomain(t_exit, "geodesic left the chart before the conjugacy horizon", partial=report)
        return report
    lo, hi = bracket
    if lo == 0.0:
        # det ~ t^n near 0: start from a point where it is safely positive
        lo = hi / 16.0
        while det(lo) <= 0.0 and lo > 1e-12:
            lo /= 16.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if det(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return ConjugacyReport(0.5 * (lo + hi), horizon, (lo, hi), tol, t_end)


@dataclass
class SelfConjugacy:
    self_conjugate: bool
    scaled_det: float
    indeterminate: bool
    tol: float

    def __bool__(self):
        return self.self_conjugate


def scaled_endpoint_det(model: MetricModel, p, w, length: float, step: float = DEFAULT_STEP) -> float:
    """det J(l) / (l^(n-1) * max row norm), with J(l) read in a g-orthonormal frame at p.

    The normalisation makes the flat value exactly 1 for every l.
    """
    n = model.dim
    state = TangentState.unit(model, p, w)
    sol, _, _ = integrate_variational(model, state.x, state.v, length, step, np.zeros((n, n)), np.eye(n))
    L_start = cholesky_factor(model, state.x)
    L_end = cholesky_factor(model, sol.x[-1])
    J = L_end.T @ sol.X[-1] @ np.linalg.inv(L_start.T)
    scale = length ** (n - 1) * max(float(np.max(np.linalg.norm(J, axis=1))), 1e-300)
    return float(np.linalg.det(J) / scale)


def is_self_conjugate(model: MetricModel, loop, tol: float = SELF_CONJUGATE_TOL) -> SelfConjugacy:
    """Test whether the base point is conjugate to itself along the loop."""
    value = scaled_endpoint_det(model, loop.base, loop.direction, loop.length, loop.path.step)
    mag = abs(value)
    return SelfConjugacy(mag <= tol, value, tol / 10.0 <= mag <= 10.0 * tol, tol)


@dataclass
class InjectivityConfig:
    num_directions: int = 64
    horizon: float = 10.0
    step: float = DEFAULT_STEP
    include_loops: bool = True
    loop_config: object = None


@dataclass
class InjectivityEstimate:
    radius: float
    provenance: str
    conjugate_distance: float | None
    conjugate_direction: np.ndarray | None
    shortest_loop: float | None
    skipped_directions: int
    note: str = ""
    details: dict = field(default_factory=dict)


def sample_directions(model: MetricModel, p, count: int, offset: float = 0.0) -> np.ndarray:
    """Deterministic unit directions at p: a uniform angle grid (n = 2) or a Halton set on the sphere."""
    E = orthonormal_frame(model, p)
    n = model.dim
    if n == 2:
        ang = (np.arange(count) + offset) * 2.0 * math.pi / count
        U = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        from scipy.stats import qmc

        pts = qmc.Halton(d=n, scramble=False).random(count + 1)[1:]
        from scipy.special import ndtri

        U = ndtri(np.clip(pts, 1e-12, 1 - 1e-12))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
    return U @ E.T


def injectivity_radius_estimate(model: MetricModel, p, cfg: InjectivityConfig | None = None) -> InjectivityEstimate:
    """Upper estimate min(first conjugate distance, shortest loop / 2) from finite sampling.

    Directions whose geodesic leaves the chart before a conjugate point are
    skipped and counted.  On a tie the estimate is reported as conjugate-limited.
    """
    cfg = cfg or InjectivityConfig()
    p = np.asarray(p, dtype=float)
    best = None
    best_dir = None
    skipped = 0
    for w in sample_directions(model, p, cfg.num_directions):
        try:
            rep = first_conjugate_distance(model, p, w, cfg.horizon, cfg.step)
        except LeftChartDomain:
            skipped += 1
            continue
        if rep.found and (best is None or rep.distance < best):
            best, best_dir = rep.distance, w
    shortest = None
    if cfg.include_loops:
        from .loops import LoopSearchConfig, find_loops_from_point

        lcfg = cfg.loop_config or LoopSearchConfig(l_max=2.0 * cfg.horizon)
        loops = find_loops_from_point(model, p, lcfg)
        if loops:
            shortest = min(lp.length for lp in loops)
    half = None if shortest is None else 0.5 * shortest
    if best is None and half is None:
        return InjectivityEstimate(
            math.inf, "conjugate-limited", None, None, None, skipped, note=f"none found within horizon {cfg.horizon:g}"
        )
    if half is None or (best is not None and best <= half + 1e-6):
        return InjectivityEstimate(best, "conjugate-limited", best, best_dir, shortest, skipped)
    return InjectivityEstimate(half, "loop-limited", best, best_dir, shortest, skipped)
